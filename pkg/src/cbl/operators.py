"""CBL-AC and CBL-CONS propagation with exactly re-checkable certificates.

A certificate names a face (a set of context ids), a pivot, the domain
restrictions it assumed, and the clauses that rule out every joint
assignment of the face's variables. Local copies inside a face are
identified through the overlap equalities, so enumeration runs over the
union of the face's variables.
"""

from __future__ import annotations

import hashlib
import random
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import CurvedCore
from .errors import CBLInputError, CapacityError
from .instances import CblInstance, serialize

AC_ELIMINATION = "AC-elimination"
CONS_CUT = "CONS-cut"
MAX_FACE_VARS = 24


class DomainTable:
    """Candidate bits per variable; prunes only ever remove values."""

    __slots__ = ("domains",)

    def __init__(self, domains: Sequence[set[int] | frozenset[int]]):
        self.domains = [set(d) for d in domains]
        for d in self.domains:
            if not d <= {0, 1}:
                raise CBLInputError("domains must be subsets of {0, 1}")

    @classmethod
    def full(cls, num_vars: int) -> "DomainTable":
        return cls([{0, 1} for _ in range(num_vars)])

    @classmethod
    def empty(cls, num_vars: int) -> "DomainTable":
        return cls([set() for _ in range(num_vars)])

    def copy(self) -> "DomainTable":
        return DomainTable(self.domains)

    def __getitem__(self, x: int) -> set[int]:
        return self.domains[x]

    def __len__(self) -> int:
        return len(self.domains)

    def __eq__(self, other) -> bool:
        return isinstance(other, DomainTable) and self.domains == other.domains

    def __repr__(self) -> str:
        return f"DomainTable({[sorted(d) for d in self.domains]})"

    def eliminate(self, x: int, v: int) -> bool:
        if v in self.domains[x]:
            self.domains[x].discard(v)
            return True
        return False

    def has_empty(self) -> bool:
        return any(not d for d in self.domains)

    def removed(self) -> set[tuple[int, int]]:
        return {(x, v) for x, d in enumerate(self.domains) for v in (0, 1) if v not in d}


@dataclass(frozen=True)
class Certificate:
    kind: str
    face: tuple[int, ...]
    pivot: tuple[int, int]  # (var, bit); for CONS the literal psi is var=bit
    support: tuple[int, ...]
    assumptions: tuple[tuple[int, int], ...] = ()  # (var, only remaining bit)
    overlaps: tuple[tuple[int, int, tuple[int, ...]], ...] = ()
    instance_digest: str = ""

    def to_text(self) -> str:
        lines = [
            f"kind {self.kind}",
            "face " + " ".join(map(str, self.face)),
            f"pivot {self.pivot[0]} {self.pivot[1]}",
            "support " + " ".join(map(str, self.support)),
            "assume " + " ".join(f"{x}={b}" for x, b in self.assumptions),
            "overlaps " + " ".join(f"{i}-{j}:{','.join(map(str, vs))}" for i, j, vs in self.overlaps),
            f"instance-sha256 {self.instance_digest}",
        ]
        return "\n".join(lines) + "\n"


class Verification(NamedTuple):
    ok: bool
    reason: str

    def __bool__(self) -> bool:
        return self.ok


def instance_digest(inst: CblInstance) -> str:
    return hashlib.sha256(serialize(inst)).hexdigest()


# -- exhaustive local engine -------------------------------------------------


def _face_vars(inst: CblInstance, face: Sequence[int]) -> list[int]:
    vs: set[int] = set()
    for c in face:
        vs.update(inst.system.contexts[c])
    return sorted(vs)


def _face_clauses(inst: CblInstance, face: Sequence[int]) -> list[int]:
    fs = set(face)
    return [n for n, cl in enumerate(inst.clauses) if cl.context_id in fs]


def _face_overlaps(inst: CblInstance, face: Sequence[int]):
    out = []
    f = sorted(face)
    for a in range(len(f)):
        for b in range(a + 1, len(f)):
            ov = inst.system.overlap(f[a], f[b])
            if ov:
                out.append((f[a], f[b], tuple(sorted(ov))))
    return tuple(out)


def _refute(inst: CblInstance, vars_: list[int], clause_ids: list[int], fixed: dict[int, set[int]]):
    """Return the set of clauses hit by a first-violation cover, or None if satisfiable.

    Enumerates every assignment of ``vars_`` with each variable restricted to
    ``fixed.get(var, {0, 1})``.
    """
    if len(vars_) > MAX_FACE_VARS:
        raise CapacityError(f"face has {len(vars_)} variables, limit is {MAX_FACE_VARS}")
    doms = [sorted(fixed.get(v, {0, 1})) for v in vars_]
    if any(not d for d in doms):
        return set()  # vacuous: no assignment exists at all
    free = [i for i, d in enumerate(doms) if len(d) == 2]
    rows = 1 << len(free)
    idx = np.arange(rows, dtype=np.int64)
    cols = {}
    for i, v in enumerate(vars_):
        if len(doms[i]) == 2:
            cols[v] = ((idx >> free.index(i)) & 1).astype(bool)
        else:
            cols[v] = np.full(rows, bool(doms[i][0]))
    alive = np.ones(rows, dtype=bool)
    first = np.full(rows, -1, dtype=np.int64)
    for n in clause_ids:
        sat = np.zeros(rows, dtype=bool)
        for l in inst.clauses[n].literals:
            col = cols[abs(l) - 1]
            sat |= col if l > 0 else ~col
        newly = alive & ~sat
        first[newly] = n
        alive &= sat
    if alive.any():
        return None
    return set(int(n) for n in np.unique(first))


# -- AC operators --------------------------------------------------------------


def _context_support(inst: CblInstance, c: int, dom: DomainTable) -> list[set[int]] | None:
    """Values of each context variable with a satisfying local assignment in ``dom``."""
    ctx = inst.system.contexts[c]
    doms = [sorted(dom[v]) for v in ctx]
    if any(not d for d in doms):
        return [set() for _ in ctx]
    cls = [inst.clauses[n] for n in inst.clauses_of(c)]
    seen = [set() for _ in ctx]
    pos = {v: i for i, v in enumerate(ctx)}

    def rec(i, row):
        if i == len(ctx):
            if all(cl.satisfied_by(lambda v: row[pos[v]]) for cl in cls):
                for j, b in enumerate(row):
                    seen[j].add(b)
            return
        for b in doms[i]:
            row.append(b)
            rec(i + 1, row)
            row.pop()

    rec(0, [])
    return seen


def _revise_context(inst: CblInstance, c: int, dom: DomainTable) -> list[tuple[int, int]]:
    support = _context_support(inst, c, dom)
    pruned = []
    for v, sup in zip(inst.system.contexts[c], support):
        for b in sorted(dom[v] - sup):
            dom.eliminate(v, b)
            pruned.append((v, b))
    return pruned


def classical_ac(inst: CblInstance, dom: DomainTable) -> DomainTable:
    """Per-context generalized arc consistency to a fixpoint (wipeout empties all)."""
    out = dom.copy()
    if out.has_empty():
        return out
    queue = deque(range(len(inst.system.contexts)))
    queued = set(queue)
    while queue:
        c = queue.popleft()
        queued.discard(c)
        pruned = _revise_context(inst, c, out)
        if out.has_empty():
            return DomainTable.empty(len(out))
        for v, _ in pruned:
            for c2 in inst.system.contexts_of(v):
                if c2 not in queued:
                    queue.append(c2)
                    queued.add(c2)
    return out


def is_blocked_by_curved_face(
    inst: CblInstance, x: int, v: int, face: CurvedCore, dom: DomainTable, digest: str | None = None
) -> Certificate | None:
    """Certificate iff no assignment of the face's variables with ``x=v`` survives."""
    ids = tuple(face.context_ids)
    if not ids:
        return None
    for c in ids:
        if not 0 <= c < len(inst.system.contexts):
            raise CBLInputError(f"face context {c} does not exist")
    vars_ = _face_vars(inst, ids)
    if x not in vars_:
        raise CBLInputError(f"variable {x} does not occur in the face")
    fixed = {y: set(dom[y]) for y in vars_ if dom[y] != {0, 1}}
    if any(not d for y, d in fixed.items() if y != x):
        return None  # already infeasible; nothing face-specific to certify
    fixed[x] = {v}
    support = _refute(inst, vars_, _face_clauses(inst, ids), fixed)
    if support is None:
        return None
    assumptions = tuple(sorted((y, next(iter(d))) for y, d in fixed.items() if y != x and len(d) == 1))
    return Certificate(
        AC_ELIMINATION,
        tuple(sorted(ids)),
        (x, v),
        tuple(sorted(support)),
        assumptions,
        _face_overlaps(inst, ids),
        digest if digest is not None else instance_digest(inst),
    )


def _context_cert(inst: CblInstance, c: int, x: int, v: int, dom: DomainTable, digest: str) -> Certificate:
    cert = is_blocked_by_curved_face(inst, x, v, CurvedCore((c,)), dom, digest)
    if cert is None:
        raise CBLInputError("classical prune without a local refutation")
    return cert


def cbl_ac(
    inst: CblInstance,
    dom: DomainTable,
    faces: Sequence[CurvedCore],
    pop_rng: random.Random | None = None,
) -> tuple[DomainTable, list[Certificate]]:
    """Classical revision plus face blocking, run to a fixpoint.

    The worklist is FIFO unless ``pop_rng`` is given, in which case each pop
    takes a uniformly random pending pair (used to test confluence). The run
    stops as soon as some domain becomes empty and then reports every domain
    empty, which keeps the result independent of pop order.
    """
    out = dom.copy()
    if out.has_empty():
        return out, []
    digest = instance_digest(inst)
    sys = inst.system
    faces_of: dict[int, list[CurvedCore]] = {}
    for f in faces:
        for y in _face_vars(inst, f.context_ids):
            faces_of.setdefault(y, []).append(f)
    neighbours = [set() for _ in range(sys.num_vars)]
    for ctx in sys.contexts:
        for y in ctx:
            neighbours[y].update(ctx)

    pending: list[tuple[int, int]] = [(x, b) for x in range(sys.num_vars) for b in (0, 1) if b in out[x]]
    queued = set(pending)
    queue = deque(pending)
    certs: list[Certificate] = []

    def pop():
        if pop_rng is None:
            item = queue.popleft()
        else:
            k = int(pop_rng.random() * len(queue))
            queue.rotate(-k)
            item = queue.popleft()
            queue.rotate(k)
        queued.discard(item)
        return item

    while queue:
        x, b = pop()
        if b not in out[x]:
            continue
        cert = None
        for c in sys.contexts_of(x):
            sup = _context_support(inst, c, out)
            if b not in sup[sys.contexts[c].index(x)]:
                cert = _context_cert(inst, c, x, b, out, digest)
                break
        if cert is None:
            for f in faces_of.get(x, ()):
                cert = is_blocked_by_curved_face(inst, x, b, f, out, digest)
                if cert is not None:
                    break
        if cert is None:
            continue
        out.eliminate(x, b)
        certs.append(cert)
        if not out[x]:
            # wipeout: the two certificates on x refute the instance outright
            return DomainTable.empty(len(out)), certs
        for y in sorted(neighbours[x]):
            for w in (0, 1):
                if w in out[y] and (y, w) not in queued:
                    queue.append((y, w))
                    queued.add((y, w))
    return out, certs


# -- CONS ------------------------------------------------------------------------


def cbl_cons(inst: CblInstance, edge: tuple[int, int], split: tuple[int, int]) -> Certificate | None:
    """Cut on ``C ∪ C'`` when C's clauses refute ``psi`` and C''s refute its negation.

    ``split`` is the literal ``psi`` given as ``(var, bit)``.
    """
    c1, c2 = edge
    x, b = split
    ov = inst.system.overlap(c1, c2)
    if x not in ov:
        raise CBLInputError(f"split variable {x} is not on the overlap of contexts {c1} and {c2}")
    v1 = list(inst.system.contexts[c1])
    v2 = list(inst.system.contexts[c2])
    s1 = _refute(inst, v1, inst.clauses_of(c1), {x: {b}})
    if s1 is None:
        return None
    s2 = _refute(inst, v2, inst.clauses_of(c2), {x: {1 - b}})
    if s2 is None:
        return None
    return Certificate(
        CONS_CUT,
        (c1, c2),
        (x, b),
        tuple(sorted(s1 | s2)),
        (),
        ((min(c1, c2), max(c1, c2), tuple(sorted(ov))),),
        instance_digest(inst),
    )


def cons_sweep(inst: CblInstance, faces: Sequence[CurvedCore]) -> list[Certificate]:
    """Try every overlap edge inside every face with both signs of each shared variable."""
    out: list[Certificate] = []
    seen = set()
    for f in faces:
        ids = sorted(f.context_ids)
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                for x in sorted(inst.system.overlap(ids[i], ids[j])):
                    for edge in ((ids[i], ids[j]), (ids[j], ids[i])):
                        for b in (0, 1):
                            key = (edge, x, b)
                            if key in seen:
                                continue
                            seen.add(key)
                            cert = cbl_cons(inst, edge, (x, b))
                            if cert is not None:
                                out.append(cert)
    return out


# -- verification ------------------------------------------------------------------


def verify_certificate(inst: CblInstance, cert: Certificate) -> Verification:
    """Independent exhaustive re-check of the certified infeasibility."""
    k = len(inst.system.contexts)
    if cert.instance_digest and cert.instance_digest != instance_digest(inst):
        return Verification(False, "instance digest mismatch")
    if not cert.face or any(not (isinstance(c, int) and 0 <= c < k) for c in cert.face):
        return Verification(False, "face refers to unknown contexts")
    if not (isinstance(cert.pivot, tuple) and len(cert.pivot) == 2 and cert.pivot[1] in (0, 1)):
        return Verification(False, "malformed pivot")
    if any(not 0 <= n < len(inst.clauses) for n in cert.support):
        return Verification(False, "support names unknown clauses")
    x, b = cert.pivot
    support = set(cert.support)
    if cert.kind == AC_ELIMINATION:
        vars_ = _face_vars(inst, cert.face)
        if x not in vars_:
            return Verification(False, "pivot variable outside the face")
        if any(inst.clauses[n].context_id not in cert.face for n in support):
            return Verification(False, "support clause outside the face")
        fixed = {}
        for y, yb in cert.assumptions:
            if y not in vars_ or yb not in (0, 1) or y == x:
                return Verification(False, "malformed assumption")
            fixed[y] = {yb}
        fixed[x] = {b}
        if _refute(inst, vars_, sorted(support), fixed) is None:
            return Verification(False, "an assignment of the face satisfies the support")
        return Verification(True, "face refuted under the recorded assumptions")
    if cert.kind == CONS_CUT:
        if len(cert.face) != 2:
            return Verification(False, "CONS cut needs exactly two contexts")
        c1, c2 = cert.face
        if x not in inst.system.overlap(c1, c2):
            return Verification(False, "split literal is not on the overlap")
        s1 = sorted(n for n in support if inst.clauses[n].context_id == c1)
        s2 = sorted(n for n in support if inst.clauses[n].context_id == c2)
        if len(s1) + len(s2) != len(support):
            return Verification(False, "support clause outside the edge")
        if _refute(inst, list(inst.system.contexts[c1]), s1, {x: {b}}) is None:
            return Verification(False, "first context does not refute the split")
        if _refute(inst, list(inst.system.contexts[c2]), s2, {x: {1 - b}}) is None:
            return Verification(False, "second context does not refute the negated split")
        return Verification(True, "double refutation confirmed")
    return Verification(False, f"unknown certificate kind {cert.kind!r}")


# -- search with propagation ------------------------------------------------------------


def solve_with_propagation(inst: CblInstance, faces: Sequence[CurvedCore] | None = None):
    """Run ``cbl_ac`` at the root, then ``cbl_solve`` on the restricted instance."""
    from .core import contextual_faces
    from .instances import Clause
    from .solver import UNSAT, SolverResult, SolverStats, cbl_solve, check_witness

    if faces is None:
        faces = contextual_faces(inst.system)
    dom, certs = cbl_ac(inst, DomainTable.full(inst.num_vars), faces)
    if dom.has_empty():
        stats = SolverStats(unsat_detection_depth=0)
        return SolverResult(UNSAT, None, stats), certs
    extra = []
    for x, d in enumerate(dom.domains):
        if len(d) == 1:
            (bit,) = d
            extra.append(Clause((x + 1 if bit else -(x + 1),), inst.system.contexts_of(x)[0]))
    restricted = CblInstance(inst.system, inst.clauses + tuple(extra), inst.meta)
    res = cbl_solve(restricted)
    if res.witness is not None and not check_witness(inst, res.witness):
        raise CBLInputError("witness fails the original instance")
    return res, certs
