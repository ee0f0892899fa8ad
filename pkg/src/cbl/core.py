"""Context systems, valuations, and the curvature obstruction.

Curvature is computed as the first GF(2) cohomology of the nerve of the
cover: one vertex per context, an edge for every pair of contexts that share
a variable, and a filled triangle for every triple with a common variable.
A class in that group is an overlap "twist" (a bit on every overlap saying
whether the two local copies agree or are complemented) that is locally
consistent but cannot be gauged away by re-signing whole contexts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Iterable, Mapping, Sequence

from .errors import CBLInputError, CapacityError, CurvatureError, InvariantViolation


# -- GF(2) linear algebra on int bitsets ------------------------------------


def gf2_rank(rows: Iterable[int]) -> int:
    """Rank over GF(2) of rows given as int bitsets."""
    pivots: dict[int, int] = {}  # leading bit -> reduced row
    for row in rows:
        while row:
            lead = row.bit_length() - 1
            if lead not in pivots:
                pivots[lead] = row
                break
            row ^= pivots[lead]
    return len(pivots)


# -- data types --------------------------------------------------------------


@dataclass(frozen=True)
class ContextSystem:
    """Variables ``0..num_vars-1`` and an ordered family of contexts."""

    num_vars: int
    contexts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.num_vars < 0:
            raise CBLInputError("num_vars must be non-negative")
        norm = []
        for i, ctx in enumerate(self.contexts):
            c = tuple(sorted(set(int(v) for v in ctx)))
            if not c:
                raise CBLInputError(f"context {i} is empty")
            if c[0] < 0 or c[-1] >= self.num_vars:
                raise CBLInputError(f"context {i} has a variable outside 0..{self.num_vars - 1}")
            norm.append(c)
        if len(set(norm)) != len(norm):
            raise CBLInputError("duplicate contexts")
        covered = set().union(*norm) if norm else set()
        missing = set(range(self.num_vars)) - covered
        if missing:
            raise CBLInputError(f"variables {sorted(missing)} appear in no context")
        object.__setattr__(self, "contexts", tuple(norm))

    def __len__(self) -> int:
        return len(self.contexts)

    def overlap(self, i: int, j: int) -> frozenset[int]:
        return frozenset(self.contexts[i]) & frozenset(self.contexts[j])

    def contexts_of(self, v: int) -> list[int]:
        return [i for i, c in enumerate(self.contexts) if v in c]

    def neighbours(self, i: int) -> list[int]:
        ci = set(self.contexts[i])
        return [j for j, c in enumerate(self.contexts) if j != i and ci.intersection(c)]


@dataclass(frozen=True)
class LocalValuation:
    context_id: int
    assignment: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "assignment", {int(k): int(v) & 1 for k, v in self.assignment.items()})


@dataclass(frozen=True)
class CompatibleFamily:
    locals: tuple[LocalValuation, ...]

    def __post_init__(self):
        object.__setattr__(self, "locals", tuple(self.locals))


@dataclass(frozen=True)
class GlobalValuation:
    bits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) & 1 for b in self.bits))


@dataclass(frozen=True)
class CurvatureReport:
    kappa: int
    rank_d0: int
    rank_d1: int
    cochain_dims: tuple[int, int, int] = field(default=(0, 0, 0))

    @property
    def dims(self) -> tuple[int, int]:
        return (self.rank_d0, self.rank_d1)


@dataclass(frozen=True)
class CurvedCore:
    context_ids: tuple[int, ...]


# -- valuations --------------------------------------------------------------


def check_overlap(a: LocalValuation, b: LocalValuation, overlap_vars: Iterable[int]) -> bool:
    """True iff ``a`` and ``b`` agree on every variable of ``overlap_vars``."""
    da, db = a.assignment, b.assignment
    for v in overlap_vars:
        if v not in da or v not in db:
            raise CBLInputError(f"variable {v} is outside the domain of one valuation")
        if da[v] != db[v]:
            return False
    return True


def _check_family_shape(fam: CompatibleFamily, sys: ContextSystem) -> None:
    if len(fam.locals) != len(sys.contexts):
        raise CBLInputError(f"family has {len(fam.locals)} locals, system has {len(sys.contexts)} contexts")
    for i, (loc, ctx) in enumerate(zip(fam.locals, sys.contexts)):
        if loc.context_id != i:
            raise CBLInputError(f"local {i} is bound to context {loc.context_id}")
        if set(loc.assignment) != set(ctx):
            raise CBLInputError(f"local {i} does not cover exactly context {i}")


def is_compatible(fam: CompatibleFamily, sys: ContextSystem) -> bool:
    _check_family_shape(fam, sys)
    for i, j in combinations(range(len(sys.contexts)), 2):
        ov = sys.overlap(i, j)
        if ov and not check_overlap(fam.locals[i], fam.locals[j], ov):
            return False
    return True


def restrict(g: GlobalValuation | Sequence[int], sys: ContextSystem) -> CompatibleFamily:
    bits = g.bits if isinstance(g, GlobalValuation) else tuple(g)
    if len(bits) != sys.num_vars:
        raise CBLInputError("global valuation has the wrong length")
    return CompatibleFamily(
        tuple(LocalValuation(i, {v: bits[v] for v in c}) for i, c in enumerate(sys.contexts))
    )


def global_sections_exist(sys: ContextSystem, fam: CompatibleFamily) -> GlobalValuation | None:
    """Glue a compatible family into the global valuation it defines."""
    if not is_compatible(fam, sys):
        raise CBLInputError("family is not compatible")
    bits: list[int | None] = [None] * sys.num_vars
    for loc in fam.locals:
        for v, b in loc.assignment.items():
            bits[v] = b
    if any(b is None for b in bits):
        return None
    return GlobalValuation(tuple(bits))


# -- curvature ---------------------------------------------------------------


def _nerve(contexts: Sequence[Iterable[int]]):
    sets = [frozenset(c) for c in contexts]
    k = len(sets)
    edges = [(i, j) for i, j in combinations(range(k), 2) if sets[i] & sets[j]]
    triangles = [
        (i, j, l) for i, j, l in combinations(range(k), 3) if sets[i] & sets[j] & sets[l]
    ]
    return k, edges, triangles


def kappa_of_contexts(contexts: Sequence[Iterable[int]]) -> CurvatureReport:
    """Curvature of an arbitrary family of variable sets (no coverage check)."""
    k, edges, triangles = _nerve(contexts)
    edge_index = {e: n for n, e in enumerate(edges)}
    # delta0 s (ij) = s_i + s_j ; delta1 t (ijl) = t_ij + t_jl + t_il
    d0_rows = [(1 << i) | (1 << j) for i, j in edges]
    d1_rows = [
        (1 << edge_index[(i, j)]) | (1 << edge_index[(j, l)]) | (1 << edge_index[(i, l)])
        for i, j, l in triangles
    ]
    r0 = gf2_rank(d0_rows)
    r1 = gf2_rank(d1_rows)
    h1 = len(edges) - r1 - r0
    if h1 < 0:
        raise InvariantViolation("negative cohomology rank")
    return CurvatureReport(h1, r0, r1, (k, len(edges), len(triangles)))


def kappa(sys: ContextSystem) -> CurvatureReport:
    return kappa_of_contexts(sys.contexts)


def twisted_gluing_census(contexts: Sequence[Iterable[int]], max_edges: int = 20) -> tuple[int, int]:
    """Count locally consistent overlap twists and the ones that glue.

    Enumerates every twist pattern on the overlaps, keeps those consistent
    around each triple sharing a variable (so a twisted compatible family of
    local valuations exists), and separately enumerates every re-signing of
    whole contexts to collect the twists that admit a global section.
    Returns ``(consistent, gluable)``. Pure enumeration, no elimination.
    """
    k, edges, triangles = _nerve(contexts)
    if len(edges) > max_edges or k > max_edges:
        raise CapacityError("too many overlaps for exhaustive enumeration")
    pos = {e: n for n, e in enumerate(edges)}
    consistent = 0
    for t in product((0, 1), repeat=len(edges)):
        if all(t[pos[(i, j)]] ^ t[pos[(j, l)]] ^ t[pos[(i, l)]] == 0 for i, j, l in triangles):
            consistent += 1
    gluable = {tuple(s[i] ^ s[j] for i, j in edges) for s in product((0, 1), repeat=k)}
    return consistent, len(gluable)


def flat_by_enumeration(sys: ContextSystem) -> bool:
    """Brute-force flatness: every consistent twisted family glues globally."""
    consistent, gluable = twisted_gluing_census(sys.contexts)
    return consistent == gluable


def curved_cores(sys: ContextSystem, max_size: int = 8) -> list[CurvedCore]:
    """All minimal curved subfamilies with at most ``max_size`` contexts."""
    n = len(sys.contexts)
    if max_size > n:
        max_size = n
    curved: list[frozenset[int]] = []
    cores: list[CurvedCore] = []
    for size in range(1, max_size + 1):
        found = []
        for ids in combinations(range(n), size):
            s = frozenset(ids)
            if kappa_of_contexts([sys.contexts[i] for i in ids]).kappa == 0:
                continue
            found.append(s)
            if not any(c < s for c in curved):
                cores.append(CurvedCore(ids))
        curved.extend(found)
    return cores


def _cycle_basis(k: int, edges: Sequence[tuple[int, int]], keep: Sequence[int]) -> list[int]:
    """Fundamental cycles (as bitsets over ``edges``) of the sub-graph on ``keep``."""
    ks = set(keep)
    parent = {v: v for v in ks}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    adj: dict[int, list[tuple[int, int]]] = {v: [] for v in ks}
    tree, cycles = [], []
    for n, (i, j) in enumerate(edges):
        if i in ks and j in ks:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
                adj[i].append((j, n))
                adj[j].append((i, n))
            else:
                cycles.append((i, j, n))

    def path(a, b):
        # edge bitset of the tree path a -> b
        prev = {a: (None, None)}
        stack = [a]
        while stack:
            u = stack.pop()
            for w, n in adj[u]:
                if w not in prev:
                    prev[w] = (u, n)
                    stack.append(w)
        bits, u = 0, b
        while prev[u][0] is not None:
            bits ^= 1 << prev[u][1]
            u = prev[u][0]
        return bits

    return [path(i, j) ^ (1 << n) for i, j, n in cycles]


def contextual_faces(sys: ContextSystem, max_size: int = 8) -> list[CurvedCore]:
    """Curved cores whose cycles are not filled in by the rest of the cover.

    A core of a flat system is curved on its own but its twist is gauged away
    globally, so it is not a face of the system. A core is kept iff one of its
    cycles is not a boundary of the full nerve's triangles.
    """
    k, edges, triangles = _nerve(sys.contexts)
    pos = {e: n for n, e in enumerate(edges)}
    bnd = [(1 << pos[(i, j)]) | (1 << pos[(j, l)]) | (1 << pos[(i, l)]) for i, j, l in triangles]
    base = gf2_rank(bnd)
    return [
        c for c in curved_cores(sys, max_size)
        if gf2_rank(bnd + _cycle_basis(k, edges, c.context_ids)) > base
    ]


# -- constructive flattening -------------------------------------------------


def flatten(sys: ContextSystem, fam: CompatibleFamily) -> GlobalValuation:
    """Propagate a compatible family through overlaps into a global valuation."""
    if kappa(sys).kappa != 0:
        raise CurvatureError("system is curved; flattening is only defined for kappa = 0")
    if not is_compatible(fam, sys):
        raise CBLInputError("family is not compatible")
    bits: list[int | None] = [None] * sys.num_vars
    seen = [False] * len(sys.contexts)
    for root in range(len(sys.contexts)):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for v, b in fam.locals[i].assignment.items():
                if bits[v] is None:
                    bits[v] = b
                elif bits[v] != b:
                    raise InvariantViolation(f"contradiction on variable {v} while flattening")
            for j in sys.neighbours(i):
                if not seen[j]:
                    seen[j] = True
                    queue.append(j)
    return GlobalValuation(tuple(0 if b is None else b for b in bits))
