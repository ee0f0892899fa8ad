"""Tree decompositions of the primal graph and bag-table dynamic programming."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations, product

from .core import CompatibleFamily, ContextSystem, LocalValuation
from .errors import DecompositionError, InvariantViolation
from .instances import CblInstance
from .solver import SAT, UNSAT, SolverResult, SolverStats, check_witness


@dataclass(frozen=True)
class TreeDecomposition:
    bags: tuple[frozenset[int], ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def width(self) -> int:
        return max((len(b) for b in self.bags), default=0) - 1


def primal_graph(sys: ContextSystem) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {v: set() for v in range(sys.num_vars)}
    for ctx in sys.contexts:
        for a, b in combinations(ctx, 2):
            adj[a].add(b)
            adj[b].add(a)
    return adj


def validate_decomposition(td: TreeDecomposition, sys: ContextSystem) -> None:
    """Raise :class:`InvariantViolation` unless ``td`` is a tree decomposition of ``sys``."""
    k = len(td.bags)
    if k == 0:
        if sys.num_vars:
            raise InvariantViolation("empty decomposition")
        return
    if len(td.edges) != k - 1:
        raise InvariantViolation("bag graph is not a tree (edge count)")
    adj = _adjacency(k, td.edges)
    if len(_component(adj, 0, lambda _: True)) != k:
        raise InvariantViolation("bag graph is not connected")
    for i, ctx in enumerate(sys.contexts):
        if not any(set(ctx) <= b for b in td.bags):
            raise InvariantViolation(f"context {i} fits in no bag")
    for v in range(sys.num_vars):
        holders = [i for i, b in enumerate(td.bags) if v in b]
        if not holders:
            raise InvariantViolation(f"variable {v} in no bag")
        reach = _component(adj, holders[0], lambda i: v in td.bags[i])
        if len(reach) != len(holders):
            raise InvariantViolation(f"running intersection fails for variable {v}")


def _adjacency(k: int, edges) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(k)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    return adj


def _component(adj, start: int, keep) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in adj[i]:
            if j not in seen and keep(j):
                seen.add(j)
                queue.append(j)
    return seen


def min_fill_decomposition(sys: ContextSystem) -> TreeDecomposition:
    """Greedy min-fill elimination (ties: degree, then index)."""
    adj = {v: set(n) for v, n in primal_graph(sys).items()}
    order: list[int] = []
    bag_of: dict[int, frozenset[int]] = {}
    while adj:
        def fill(v):
            nb = adj[v]
            return sum(1 for a, b in combinations(sorted(nb), 2) if b not in adj[a])

        v = min(adj, key=lambda u: (fill(u), len(adj[u]), u))
        nb = adj[v]
        bag_of[v] = frozenset(nb | {v})
        for a, b in combinations(nb, 2):
            adj[a].add(b)
            adj[b].add(a)
        for u in nb:
            adj[u].discard(v)
        del adj[v]
        order.append(v)

    pos = {v: i for i, v in enumerate(order)}
    bags = [bag_of[v] for v in order]
    parent: list[int | None] = []
    for v in order:
        later = [u for u in bag_of[v] if u != v]
        parent.append(min(pos[u] for u in later) if later else None)
    # join the forest into one tree by chaining component roots
    roots = [i for i, p in enumerate(parent) if p is None]
    for a, b in zip(roots, roots[1:]):
        parent[a] = b

    # contract bags contained in their parent
    alive = list(range(len(bags)))
    for i in range(len(bags)):
        p = parent[i]
        if p is not None and bags[i] <= bags[p]:
            for j in range(len(bags)):
                if parent[j] == i:
                    parent[j] = p
            parent[i] = -1
    keep = [i for i in alive if parent[i] != -1]
    renum = {old: new for new, old in enumerate(keep)}
    new_bags = tuple(bags[i] for i in keep)
    new_edges = tuple(
        sorted((renum[i], renum[parent[i]]) for i in keep if parent[i] is not None)
    )
    td = TreeDecomposition(new_bags, new_edges)
    validate_decomposition(td, sys)
    return td


def _rooted(td: TreeDecomposition):
    adj = _adjacency(len(td.bags), td.edges)
    order, parent = [0], {0: None}
    for i in order:
        for j in adj[i]:
            if j not in parent:
                parent[j] = i
                order.append(j)
    children = {i: [j for j in adj[i] if parent.get(j) == i] for i in order}
    return order, children


def _bag_tables(inst: CblInstance, td: TreeDecomposition):
    vars_ = [tuple(sorted(b)) for b in td.bags]
    assigned: list[list[int]] = [[] for _ in td.bags]
    for n, cl in enumerate(inst.clauses):
        ctx = set(inst.system.contexts[cl.context_id])
        home = next((i for i, b in enumerate(td.bags) if ctx <= b), None)
        if home is None:
            raise DecompositionError(f"clause {n} (context {cl.context_id}) is not covered by any bag")
        assigned[home].append(n)
    tables = []
    for i, bv in enumerate(vars_):
        idx = {v: p for p, v in enumerate(bv)}
        rows = []
        for row in product((0, 1), repeat=len(bv)):
            if all(inst.clauses[n].satisfied_by(lambda v: row[idx[v]]) for n in assigned[i]):
                rows.append(row)
        tables.append(rows)
    return vars_, tables


def _project(row, src_vars, sep):
    idx = {v: p for p, v in enumerate(src_vars)}
    return tuple(row[idx[v]] for v in sep)


def solve_treewidth(inst: CblInstance, td: TreeDecomposition) -> SolverResult:
    """Bottom-up bag-table DP, then top-down witness reconstruction.

    Introduce builds each bag's table of locally satisfying rows; forget
    projects a child table onto the separator; join keeps parent rows whose
    separator projection survives in every child.
    """
    stats = SolverStats()
    if not td.bags:
        return SolverResult(SAT, CompatibleFamily(()), stats)
    vars_, tables = _bag_tables(inst, td)
    order, children = _rooted(td)
    for i in reversed(order):
        for j in children[i]:
            sep = tuple(v for v in vars_[j] if v in td.bags[i])
            allowed = {_project(r, vars_[j], sep) for r in tables[j]}
            tables[i] = [r for r in tables[i] if _project(r, vars_[i], sep) in allowed]
            stats.propagations += len(tables[i])
    if not tables[0]:
        stats.unsat_detection_depth = 0
        return SolverResult(UNSAT, None, stats)
    bits: dict[int, int] = {}
    chosen = {0: tables[0][0]}
    for i in order:
        row = chosen[i]
        bits.update(zip(vars_[i], row))
        for j in children[i]:
            sep = tuple(v for v in vars_[j] if v in td.bags[i])
            want = _project(row, vars_[i], sep)
            chosen[j] = next(r for r in tables[j] if _project(r, vars_[j], sep) == want)
    fam = CompatibleFamily(
        tuple(LocalValuation(c, {v: bits[v] for v in ctx}) for c, ctx in enumerate(inst.system.contexts))
    )
    if not check_witness(inst, fam):
        raise InvariantViolation("tree DP produced an invalid witness")
    return SolverResult(SAT, fam, stats)


def count_treewidth(inst: CblInstance, td: TreeDecomposition) -> int:
    """Model count through the same decomposition (weighted join)."""
    if not td.bags:
        return 1
    vars_, tables = _bag_tables(inst, td)
    order, children = _rooted(td)
    counts = [{r: 1 for r in t} for t in tables]
    for i in reversed(order):
        for j in children[i]:
            sep = tuple(v for v in vars_[j] if v in td.bags[i])
            agg: dict[tuple, int] = {}
            for r, c in counts[j].items():
                key = _project(r, vars_[j], sep)
                agg[key] = agg.get(key, 0) + c
            counts[i] = {
                r: c * agg.get(_project(r, vars_[i], sep), 0) for r, c in counts[i].items()
            }
    return sum(counts[0].values())
