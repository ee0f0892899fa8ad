"""CBL-Solve, a flattened DPLL baseline, and exact counting.

CBL-Solve keeps one partial valuation per context. A decision assigns a
variable in the lowest-numbered context that contains it; everything else
arrives through unit propagation inside a context or through transport of a
value to a sibling context that shares the variable.  Every newly set copy is
compared against all sibling copies, so a disagreement surfaces as an
overlap conflict at the context where it is derived.

Events are processed last-in first-out, which makes propagation run depth
first around a cycle of contexts before the decision variable itself is
copied into its remaining contexts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CompatibleFamily, LocalValuation, is_compatible
from .errors import CapacityError, InvariantViolation
from .instances import CblInstance

SAT = "SAT"
UNSAT = "UNSAT"

ACTIVITY_DECAY = 0.95
CONTEXT_BONUS = 0.5


@dataclass
class SolverStats:
    decisions: int = 0
    conflicts: int = 0
    learned_cuts: int = 0
    propagations: int = 0
    max_depth: int = 0
    unsat_detection_depth: int | None = None


@dataclass(frozen=True)
class OverlapCut:
    """Forbidden partial assignment learned from a conflict.

    ``forbidden`` holds the decision literals as ``(var, bit)``; ``source``
    names the two contexts whose copies disagreed (``None`` when the conflict
    was a falsified clause) and ``overlap_vars`` their shared variables.
    """

    forbidden: tuple[tuple[int, int], ...]
    source: tuple[int, int] | None = None
    overlap_vars: tuple[int, ...] = ()

    def blocks(self, value) -> bool:
        return all(value(v) == b for v, b in self.forbidden)


@dataclass
class SolverResult:
    status: str
    witness: CompatibleFamily | None
    stats: SolverStats
    cuts: list[OverlapCut] = field(default_factory=list)
    trace: list[tuple] = field(default_factory=list)


def check_witness(inst: CblInstance, fam: CompatibleFamily) -> bool:
    """Compatible and every clause satisfied by its own context's local."""
    if not is_compatible(fam, inst.system):
        return False
    for cl in inst.clauses:
        loc = fam.locals[cl.context_id].assignment
        if not cl.satisfied_by(loc.__getitem__):
            return False
    return True


def _family_from_bits(inst: CblInstance, bits) -> CompatibleFamily:
    return CompatibleFamily(
        tuple(LocalValuation(i, {v: int(bits[v]) for v in c}) for i, c in enumerate(inst.system.contexts))
    )


class _CBLSearch:
    def __init__(self, inst: CblInstance, trace: bool):
        self.inst = inst
        sys = inst.system
        self.n = sys.num_vars
        self.k = len(sys.contexts)
        self.ctx_of = [sys.contexts_of(v) for v in range(self.n)]
        self.local: list[dict[int, int]] = [dict() for _ in range(self.k)]
        self.origin: list[dict[int, int]] = [dict() for _ in range(self.k)]
        self.copies = [0] * self.n
        self.value: list[int | None] = [None] * self.n
        self.trail: list[tuple[int, int]] = []
        self.trail_lim: list[int] = []
        self.decided: list[tuple[int, int]] = []
        # (context, var) -> clause ids of that context mentioning var
        self.watch: dict[tuple[int, int], list[int]] = {}
        for n_, cl in enumerate(inst.clauses):
            for v in set(cl.variables):
                self.watch.setdefault((cl.context_id, v), []).append(n_)
        self.cuts: list[OverlapCut] = []
        self.cut_watch: dict[int, list[int]] = {}
        self.activity = [0.0] * self.n
        self.bump = 1.0
        self.stats = SolverStats()
        self.tracing = trace
        self.trace: list[tuple] = []

    # -- assignment bookkeeping --
    def _set(self, c: int, v: int, b: int, origin: int) -> None:
        self.local[c][v] = b
        self.origin[c][v] = origin
        self.trail.append((c, v))
        self.copies[v] += 1
        if self.copies[v] == 1:
            self.value[v] = b

    def _backtrack(self, level: int) -> None:
        while len(self.trail_lim) > level:
            stop = self.trail_lim.pop()
            while len(self.trail) > stop:
                c, v = self.trail.pop()
                del self.local[c][v]
                del self.origin[c][v]
                self.copies[v] -= 1
                if self.copies[v] == 0:
                    self.value[v] = None
            self.decided.pop()

    # -- propagation --
    def _clause_status(self, n_: int, c: int):
        """Return ('sat'|'conflict'|'unit'|'open', unit literal)."""
        loc = self.local[c]
        free = None
        n_free = 0
        for l in set(self.inst.clauses[n_].literals):
            v = abs(l) - 1
            b = loc.get(v)
            if b is None:
                if free is None or free != l:
                    n_free += 1
                free = l
            elif (b == 1) == (l > 0):
                return "sat", None
        if n_free == 0:
            return "conflict", None
        if n_free == 1:
            return "unit", free
        return "open", None

    def _cut_status(self, idx: int):
        free = None
        n_free = 0
        for v, b in self.cuts[idx].forbidden:
            val = self.value[v]
            if val is None:
                n_free += 1
                free = (v, 1 - b)
            elif val != b:
                return "sat", None
        if n_free == 0:
            return "conflict", None
        if n_free == 1:
            return "unit", free
        return "open", None

    def propagate(self, events: list[tuple[int, int, int, int, tuple]]):
        """Process events ``(ctx, var, bit, origin_ctx, reason)``; return conflict or None."""
        while events:
            c, v, b, origin, reason = events.pop()
            cur = self.local[c].get(v)
            if cur is not None:
                if cur != b:
                    other = self.origin[c][v]
                    if other != origin:
                        return ("overlap", tuple(sorted((origin, other))), v)
                    return ("clause", None, v)
                continue
            first_copy = self.copies[v] == 0
            self._set(c, v, b, origin)
            self.stats.propagations += 1
            if self.tracing:
                self.trace.append((c, v, b, reason))
            # overlap agreement against every sibling, then transport
            for c2 in self.ctx_of[v]:
                if c2 == c:
                    continue
                b2 = self.local[c2].get(v)
                if b2 is None:
                    events.append((c2, v, b, c, ("transport", c)))
                elif b2 != b:
                    return ("overlap", tuple(sorted((c, c2))), v)
            for n_ in self.watch.get((c, v), ()):
                st, lit = self._clause_status(n_, c)
                if st == "conflict":
                    return ("clause", None, v)
                if st == "unit":
                    events.append((c, abs(lit) - 1, 1 if lit > 0 else 0, c, ("unit", n_)))
            if first_copy:
                for idx in self.cut_watch.get(v, ()):
                    st, lit = self._cut_status(idx)
                    if st == "conflict":
                        return ("cut", None, v)
                    if st == "unit":
                        u, ub = lit
                        cu = self.ctx_of[u][0]
                        events.append((cu, u, ub, cu, ("cut", idx)))
        return None

    def pick(self) -> int | None:
        best, best_score = None, None
        for v in range(self.n):
            if self.value[v] is not None:
                continue
            s = self.activity[v] + CONTEXT_BONUS * len(self.ctx_of[v])
            if best_score is None or s > best_score:
                best, best_score = v, s
        return best

    def learn(self, conflict) -> OverlapCut:
        kind, source, _v = conflict
        ov = ()
        if source is not None:
            ov = tuple(sorted(self.inst.system.overlap(*source)))
        cut = OverlapCut(tuple(self.decided), source if kind == "overlap" else None, ov)
        idx = len(self.cuts)
        self.cuts.append(cut)
        for v, _ in cut.forbidden:
            self.cut_watch.setdefault(v, []).append(idx)
            self.activity[v] += self.bump
        self.bump /= ACTIVITY_DECAY
        self.stats.learned_cuts += 1
        return cut

    def run(self) -> SolverResult:
        events = []
        for n_, cl in enumerate(self.inst.clauses):
            lits = set(cl.literals)
            if len(lits) == 1:
                (l,) = lits
                events.append((cl.context_id, abs(l) - 1, 1 if l > 0 else 0, cl.context_id, ("unit", n_)))
        events.reverse()
        conflict = self.propagate(events)
        while True:
            if conflict is not None:
                self.stats.conflicts += 1
                level = len(self.trail_lim)
                if level == 0:
                    self.stats.unsat_detection_depth = self.stats.max_depth
                    return SolverResult(UNSAT, None, self.stats, self.cuts, self.trace)
                cut = self.learn(conflict)
                self._backtrack(level - 1)
                v, b = cut.forbidden[-1]
                c = self.ctx_of[v][0]
                conflict = self.propagate([(c, v, 1 - b, c, ("cut", len(self.cuts) - 1))])
                continue
            v = self.pick()
            if v is None:
                break
            self.stats.decisions += 1
            self.trail_lim.append(len(self.trail))
            self.decided.append((v, 1))
            self.stats.max_depth = max(self.stats.max_depth, len(self.trail_lim))
            c = self.ctx_of[v][0]
            conflict = self.propagate([(c, v, 1, c, ("decision",))])
        fam = CompatibleFamily(
            tuple(LocalValuation(i, dict(self.local[i])) for i in range(self.k))
        )
        if not check_witness(self.inst, fam):
            raise InvariantViolation("CBL-Solve produced an invalid witness")
        return SolverResult(SAT, fam, self.stats, self.cuts, self.trace)


def cbl_solve(inst: CblInstance, trace: bool = False) -> SolverResult:
    """Curvature-aware backtracking with overlap checks and learned cuts."""
    return _CBLSearch(inst, trace).run()


# -- baseline: plain DPLL over duplicated context-local variables ------------


def flattened_cnf(inst: CblInstance):
    """Copies ``(ctx, var)`` as CNF variables 1.. plus biconditional overlap clauses."""
    index: dict[tuple[int, int], int] = {}
    for c, ctx in enumerate(inst.system.contexts):
        for v in ctx:
            index[(c, v)] = len(index) + 1
    cnf = []
    for cl in inst.clauses:
        c = cl.context_id
        cnf.append([index[(c, abs(l) - 1)] * (1 if l > 0 else -1) for l in cl.literals])
    for v in range(inst.num_vars):
        cs = inst.system.contexts_of(v)
        for i in range(len(cs)):
            for j in range(i + 1, len(cs)):
                a, b = index[(cs[i], v)], index[(cs[j], v)]
                cnf.append([-a, b])
                cnf.append([a, -b])
    return index, cnf


def _dpll(nvars: int, cnf: list[list[int]], stats: SolverStats):
    assign: dict[int, bool] = {}

    def unit_propagate() -> list[int] | None:
        implied = []
        changed = True
        while changed:
            changed = False
            for clause in cnf:
                free = None
                n_free = 0
                sat = False
                for l in clause:
                    a = assign.get(abs(l))
                    if a is None:
                        if free != l:
                            n_free += 1
                        free = l
                    elif a == (l > 0):
                        sat = True
                        break
                if sat:
                    continue
                if n_free == 0:
                    for x in implied:
                        del assign[x]
                    return None
                if n_free == 1:
                    assign[abs(free)] = free > 0
                    implied.append(abs(free))
                    stats.propagations += 1
                    changed = True
        return implied

    def search(depth: int) -> bool:
        stats.max_depth = max(stats.max_depth, depth)
        implied = unit_propagate()
        if implied is None:
            stats.conflicts += 1
            return False
        var = next((x for x in range(1, nvars + 1) if x not in assign), None)
        if var is None:
            return True
        for val in (True, False):
            stats.decisions += 1
            assign[var] = val
            if search(depth + 1):
                return True
            del assign[var]
        for x in implied:
            del assign[x]
        return False

    return assign if search(0) else None


def baseline_solve(inst: CblInstance) -> SolverResult:
    """DPLL on the flattened encoding (no context awareness)."""
    index, cnf = flattened_cnf(inst)
    stats = SolverStats()
    model = _dpll(len(index), cnf, stats)
    if model is None:
        stats.unsat_detection_depth = stats.max_depth
        return SolverResult(UNSAT, None, stats)
    fam = CompatibleFamily(
        tuple(
            LocalValuation(c, {v: int(model[index[(c, v)]]) for v in ctx})
            for c, ctx in enumerate(inst.system.contexts)
        )
    )
    if not check_witness(inst, fam):
        raise InvariantViolation("baseline produced an invalid witness")
    return SolverResult(SAT, fam, stats)


# -- counting ------------------------------------------------------------------

MAX_COUNT_VARS = 24


def count_compatible(inst: CblInstance, chunk_bits: int = 18) -> int:
    """Exact number of compatible families satisfying every clause.

    A compatible family over a cover of V is the same thing as a global
    valuation, so this enumerates all ``2**num_vars`` globals in chunks.
    """
    n = inst.num_vars
    if n > MAX_COUNT_VARS:
        raise CapacityError(f"{n} variables exceed the exhaustive limit of {MAX_COUNT_VARS}")
    total = 0
    chunk = 1 << min(n, chunk_bits)
    for start in range(0, 1 << n, chunk):
        idx = np.arange(start, start + chunk, dtype=np.int64)
        ok = np.ones(chunk, dtype=bool)
        for cl in inst.clauses:
            sat = np.zeros(chunk, dtype=bool)
            for l in cl.literals:
                bit = (idx >> (abs(l) - 1)) & 1
                sat |= bit.astype(bool) if l > 0 else ~bit.astype(bool)
            ok &= sat
        total += int(ok.sum())
    return total
