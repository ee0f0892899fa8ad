"""CBL-SAT instances: canonical families, random generators, and the text format.

Literals are DIMACS-style signed integers: ``+k`` means variable ``k-1`` is
true, ``-k`` means it is false. Context ids are 0-based.

File format (UTF-8, line oriented)::

    c name kcbs-5
    c rho_face 1/5
    c seed 0
    p cbl <num_vars> <num_clauses> <num_contexts>
    x <context_id> <var>+ 0
    <lit>+ 0 @ <context_id>
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from . import rng as _rng
from .core import ContextSystem
from .errors import CBLInputError, ParseError

ALLOWED_FAMILY_DENSITIES = (Fraction(1, 4), Fraction(1, 5), Fraction(1, 6), Fraction(2, 6))


@dataclass(frozen=True)
class Clause:
    literals: tuple[int, ...]
    context_id: int

    def __post_init__(self):
        object.__setattr__(self, "literals", tuple(int(l) for l in self.literals))
        if not self.literals or 0 in self.literals:
            raise CBLInputError("a clause needs non-zero literals")

    @property
    def variables(self) -> tuple[int, ...]:
        return tuple(abs(l) - 1 for l in self.literals)

    def satisfied_by(self, value) -> bool:
        """``value(var) -> bit``; undefined variables are not allowed."""
        return any((value(abs(l) - 1) == 1) == (l > 0) for l in self.literals)


@dataclass(frozen=True)
class InstanceMeta:
    name: str = ""
    rho_face: Fraction | None = None
    seed: int | None = None


@dataclass(frozen=True)
class CblInstance:
    system: ContextSystem
    clauses: tuple[Clause, ...]
    meta: InstanceMeta = field(default_factory=InstanceMeta)

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        k = len(self.system.contexts)
        for n, cl in enumerate(self.clauses):
            if not cl.literals or 0 in cl.literals:
                raise CBLInputError(f"clause {n} is empty or contains literal 0")
            if not 0 <= cl.context_id < k:
                raise CBLInputError(f"clause {n} references unknown context {cl.context_id}")
            ctx = set(self.system.contexts[cl.context_id])
            for v in cl.variables:
                if v not in ctx:
                    raise CBLInputError(
                        f"clause {n}: variable v{v + 1} is not in context {cl.context_id}"
                    )

    @property
    def num_vars(self) -> int:
        return self.system.num_vars

    def clauses_of(self, context_id: int) -> list[int]:
        return [n for n, c in enumerate(self.clauses) if c.context_id == context_id]


# -- canonical families ------------------------------------------------------


def _cycle_contexts(vs: Sequence[int]) -> list[tuple[int, int]]:
    n = len(vs)
    return [(vs[i], vs[(i + 1) % n]) for i in range(n)]


def _exactly_one(a: int, b: int, ctx: int) -> list[Clause]:
    return [Clause((a + 1, b + 1), ctx), Clause((-(a + 1), -(b + 1)), ctx)]


def gen_kcbs(n: int = 5) -> CblInstance:
    """Odd cycle of exactly-one edge constraints; every edge is locally fine."""
    if n < 5 or n % 2 == 0:
        raise CBLInputError("KCBS cycle length must be odd and at least 5")
    contexts = _cycle_contexts(list(range(n)))
    clauses = []
    for i, (a, b) in enumerate(contexts):
        clauses += _exactly_one(a, b, i)
    meta = InstanceMeta(f"kcbs-{n}", Fraction(1, 5) if n == 5 else None, None)
    return CblInstance(ContextSystem(n, tuple(contexts)), tuple(clauses), meta)


def gen_chain() -> CblInstance:
    """Flat two-context chain ``{x, y}``, ``{y, z}`` with ``x or y`` and ``y or z``.

    Variables are x=0, y=1, z=2; the global assignment (1, 0, 1) satisfies it.
    """
    sys = ContextSystem(3, ((0, 1), (1, 2)))
    clauses = (Clause((1, 2), 0), Clause((2, 3), 1))
    return CblInstance(sys, clauses, InstanceMeta("chain", None, None))


def _parity_clauses(vars3: Sequence[int], parity: int, ctx: int) -> list[Clause]:
    # forbid each assignment with the wrong XOR
    out = []
    for bits in range(8):
        b = [(bits >> k) & 1 for k in range(3)]
        if (b[0] ^ b[1] ^ b[2]) != parity:
            out.append(Clause(tuple(-(v + 1) if bit else (v + 1) for v, bit in zip(vars3, b)), ctx))
    return out


def gen_mermin(flip_last_column: bool = True) -> CblInstance:
    """Mermin square: bit ``b`` encodes the eigenvalue ``(-1)**b``.

    Rows and the first two columns have even parity (product +1); the last
    column has odd parity (product -1) unless ``flip_last_column`` is False.
    """
    var = lambda r, c: 3 * r + c  # noqa: E731
    contexts = [tuple(var(r, c) for c in range(3)) for r in range(3)]
    contexts += [tuple(var(r, c) for r in range(3)) for c in range(3)]
    clauses = []
    for i, ctx in enumerate(contexts):
        parity = 1 if (flip_last_column and i == 5) else 0
        clauses += _parity_clauses(ctx, parity, i)
    name = "mermin-9" if flip_last_column else "mermin-9-even"
    return CblInstance(ContextSystem(9, tuple(contexts)), tuple(clauses), InstanceMeta(name))


def _random_clauses(r, allowed: Sequence[int], ctx: int, count: int, max_width: int,
                    hidden: dict[int, int] | None = None) -> list[Clause]:
    """Random clauses over ``allowed``; with ``hidden`` each clause is satisfied by it."""
    out = []
    if not allowed:
        return out
    for _ in range(count):
        width = _rng.randint(r, 1, min(max_width, len(allowed)))
        vs = _rng.sample(r, allowed, width)
        lits = [(v + 1) if r.random() < 0.5 else -(v + 1) for v in vs]
        if hidden is not None and not any((l > 0) == bool(hidden[abs(l) - 1]) for l in lits):
            j = _rng.randint(r, 0, width - 1)
            lits[j] = -lits[j]
        out.append(Clause(tuple(lits), ctx))
    return out


def gen_random(
    num_vars: int,
    num_contexts: int,
    overlap_size: int,
    curved: bool,
    seed: int,
    clauses_per_context: int = 2,
    max_width: int = 3,
) -> CblInstance:
    """Random instance over a tree of contexts, optionally with a planted KCBS-5 core.

    Flat instances grow a tree: each new context takes up to ``overlap_size``
    variables of one earlier context plus at least one fresh variable, so
    every variable's contexts form a subtree and the nerve has no 1-cycles.
    Curved instances start from the five-cycle of ``gen_kcbs(5)`` (with its
    clauses) and attach the tree to it; contexts hanging off the cycle share
    exactly one cycle variable, and random clauses never mention cycle
    variables and are all satisfied by one hidden assignment, so the core is
    the only obstruction.
    """
    if overlap_size < 1 or num_contexts < 1:
        raise CBLInputError("need overlap_size >= 1 and at least one context")
    base = 5 if curved else 1
    if curved and num_contexts < 5:
        raise CBLInputError("a planted core needs at least five contexts")
    min_vars = (5 if curved else 1) + (num_contexts - base)
    if num_vars < min_vars:
        raise CBLInputError(f"need at least {min_vars} variables for {num_contexts} contexts")
    r = _rng.py_rng(seed, "gen_random")

    # fresh-variable budget per context
    fresh = [0] * num_contexts
    if curved:
        spare = num_vars - 5 - (num_contexts - 5)
        for i in range(5, num_contexts):
            fresh[i] = 1
    else:
        fresh[0] = 1
        for i in range(1, num_contexts):
            fresh[i] = 1
        spare = num_vars - num_contexts
    for _ in range(spare):
        fresh[_rng.randint(r, 0, num_contexts - 1)] += 1

    contexts: list[list[int]] = []
    core_vars: set[int] = set()
    nxt = 0
    if curved:
        core_vars = {0, 1, 2, 3, 4}
        nxt = 5
        for c in _cycle_contexts([0, 1, 2, 3, 4]):
            contexts.append(list(c) + list(range(nxt, nxt + fresh[len(contexts)])))
            nxt += fresh[len(contexts) - 1]
    for i in range(len(contexts), num_contexts):
        own = list(range(nxt, nxt + fresh[i]))
        nxt += fresh[i]
        if i == 0:
            contexts.append(own)
            continue
        parent = _rng.randint(r, 0, i - 1)
        pvars = contexts[parent]
        if parent < 5 and curved:
            shared = [pvars[_rng.randint(r, 0, len(pvars) - 1)]]
        else:
            candidates = [v for v in pvars if v not in core_vars] or pvars
            shared = _rng.sample(r, candidates, min(overlap_size, len(candidates)))
            if any(v in core_vars for v in shared):
                shared = shared[:1]
        contexts.append(sorted(shared + own))
    if nxt != num_vars:
        raise CBLInputError("internal variable budget mismatch")

    # relabel variables and contexts
    perm = _rng.shuffled(r, range(num_vars))
    order = _rng.shuffled(r, range(num_contexts))
    new_pos = {old: new for new, old in enumerate(order)}
    relabelled = [None] * num_contexts
    for old, ctx in enumerate(contexts):
        relabelled[new_pos[old]] = tuple(sorted(perm[v] for v in ctx))

    # planted cores keep the rest of the instance satisfiable
    hidden = {v: int(r.random() < 0.5) for v in range(num_vars)} if curved else None
    clauses: list[Clause] = []
    for old, ctx in enumerate(contexts):
        cid = new_pos[old]
        if curved and old < 5:
            a, b = ctx[:2]
            clauses += _exactly_one(perm[a], perm[b], cid)
        allowed = [perm[v] for v in ctx if v not in core_vars]
        if allowed:
            clauses += _random_clauses(r, allowed, cid, clauses_per_context, max_width, hidden)
    kind = "curved" if curved else "flat"
    meta = InstanceMeta(f"random-{kind}-{num_vars}x{num_contexts}", None, seed)
    return CblInstance(ContextSystem(num_vars, tuple(relabelled)), tuple(clauses), meta)


def gen_adhoc(num_vars: int, num_contexts: int, seed: int, clauses_per_context: int = 2,
              max_width: int = 3, max_context: int = 4) -> CblInstance:
    """Unstructured random instance: arbitrary overlapping contexts."""
    if num_vars < 1 or num_contexts < 1:
        raise CBLInputError("need at least one variable and one context")
    r = _rng.py_rng(seed, "gen_adhoc")
    for _attempt in range(1000):
        ctxs = []
        for _ in range(num_contexts):
            size = _rng.randint(r, 1, min(max_context, num_vars))
            ctxs.append(set(_rng.sample(r, range(num_vars), size)))
        for v in range(num_vars):
            if not any(v in c for c in ctxs):
                ctxs[_rng.randint(r, 0, num_contexts - 1)].add(v)
        normed = [tuple(sorted(c)) for c in ctxs]
        if len(set(normed)) == len(normed):
            break
    else:
        raise CBLInputError("could not draw distinct contexts")
    clauses = []
    for i, c in enumerate(normed):
        clauses += _random_clauses(r, list(c), i, clauses_per_context, max_width)
    meta = InstanceMeta(f"adhoc-{num_vars}x{num_contexts}", None, seed)
    return CblInstance(ContextSystem(num_vars, tuple(normed)), tuple(clauses), meta)


def random_corpus(count: int, seed: int, max_vars: int = 12) -> list[CblInstance]:
    """Mixed corpus of flat trees, planted cores, and unstructured instances."""
    out = []
    for k in range(count):
        r = _rng.py_rng(seed, "corpus", k)
        kind = k % 3
        s = _rng.derive_seed(seed, "corpus-instance", k)
        if kind == 0:
            nc = _rng.randint(r, 1, 6)
            nv = _rng.randint(r, nc, max_vars)
            out.append(gen_random(nv, nc, _rng.randint(r, 1, 2), False, s))
        elif kind == 1:
            nc = _rng.randint(r, 5, 7)
            nv = _rng.randint(r, nc, max_vars)
            out.append(gen_random(nv, nc, 1, True, s))
        else:
            nv = _rng.randint(r, 2, max_vars)
            nc = _rng.randint(r, 1, min(5, nv))
            out.append(gen_adhoc(nv, nc, s, clauses_per_context=_rng.randint(r, 1, 4)))
    return out


def mixture_density(p: float | Fraction) -> Fraction:
    p = Fraction(p).limit_denominator(10**6)
    if not 0 <= p <= 1:
        raise CBLInputError("mixture fraction must lie in [0, 1]")
    return p / 4 + (1 - p) / 5


def gen_mixture(p: float, length: int) -> CblInstance:
    """Disjoint CHSH 4-cycles and KCBS 5-cycles covering ``length`` boundary edges.

    A fraction ``p`` of the boundary belongs to CHSH tiles (one face per four
    edges) and the rest to KCBS tiles (one face per five edges).
    """
    rho = mixture_density(p)
    pf = Fraction(p).limit_denominator(10**6)
    n4 = round(pf * length / 4)
    n5 = round((1 - pf) * length / 5)
    if 0 < pf < 1 and (n4 < 1 or n5 < 1):
        raise CBLInputError("length too small for one tile of each kind")
    if n4 + n5 == 0:
        raise CBLInputError("length too small for any tile")
    contexts: list[tuple[int, int]] = []
    clauses: list[Clause] = []
    nxt = 0
    for size in [4] * n4 + [5] * n5:
        vs = list(range(nxt, nxt + size))
        nxt += size
        for a, b in _cycle_contexts(vs):
            clauses += _exactly_one(a, b, len(contexts))
            contexts.append((a, b))
    meta = InstanceMeta(f"mix-{float(pf):.2f}", rho, None)
    return CblInstance(ContextSystem(nxt, tuple(contexts)), tuple(clauses), meta)


def face_count(inst: CblInstance) -> int:
    """Number of cycle tiles in a mixture instance (each is one face)."""
    from .core import kappa

    return kappa(inst.system).kappa


# -- text format -------------------------------------------------------------


def _fmt_fraction(f: Fraction) -> str:
    return f"{f.numerator}/{f.denominator}"


def serialize(inst: CblInstance) -> bytes:
    lines = []
    m = inst.meta
    if m.name:
        lines.append(f"c name {m.name}")
    if m.rho_face is not None:
        lines.append(f"c rho_face {_fmt_fraction(m.rho_face)}")
    if m.seed is not None:
        lines.append(f"c seed {m.seed}")
    lines.append(f"p cbl {inst.num_vars} {len(inst.clauses)} {len(inst.system.contexts)}")
    for i, ctx in enumerate(inst.system.contexts):
        lines.append("x " + str(i) + " " + " ".join(str(v + 1) for v in ctx) + " 0")
    for cl in inst.clauses:
        lines.append(" ".join(str(l) for l in cl.literals) + f" 0 @ {cl.context_id}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _tokens(line: str):
    col = 0
    for tok in line.split():
        col = line.index(tok, col)
        yield tok, col + 1
        col += len(tok)


def _int(tok: str, lineno: int, col: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok!r}", lineno, col) from None


def parse(text: bytes | str) -> CblInstance:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8: {exc}", 1) from None
    header = None
    meta = {"name": "", "rho_face": None, "seed": None}
    contexts: dict[int, tuple[int, ...]] = {}
    clauses: list[Clause] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "c" or line.startswith("c "):
            parts = line.split(None, 2)
            if len(parts) == 3 and parts[1] == "name":
                meta["name"] = parts[2]
            elif len(parts) == 3 and parts[1] == "rho_face":
                try:
                    meta["rho_face"] = Fraction(parts[2])
                except ValueError:
                    raise ParseError(f"bad rho_face {parts[2]!r}", lineno, raw.index(parts[2]) + 1) from None
            elif len(parts) == 3 and parts[1] == "seed":
                meta["seed"] = _int(parts[2], lineno, raw.index(parts[2]) + 1)
            continue
        toks = list(_tokens(raw))
        if toks[0][0] == "p":
            if header is not None:
                raise ParseError("duplicate header", lineno, toks[0][1])
            if len(toks) != 5 or toks[1][0] != "cbl":
                raise ParseError("header must be 'p cbl <vars> <clauses> <contexts>'", lineno, toks[0][1])
            header = tuple(_int(t, lineno, c) for t, c in toks[2:])
            if min(header) < 0:
                raise ParseError("negative count in header", lineno, toks[2][1])
            continue
        if header is None:
            raise ParseError("body line before header", lineno, toks[0][1])
        nv = header[0]
        if toks[0][0] == "x":
            if len(toks) < 4 or toks[-1][0] != "0":
                raise ParseError("context line must be 'x <id> <var>+ 0'", lineno, toks[0][1])
            cid = _int(toks[1][0], lineno, toks[1][1])
            if not 0 <= cid < header[2]:
                raise ParseError(f"context id {cid} out of range", lineno, toks[1][1])
            if cid in contexts:
                raise ParseError(f"context {cid} declared twice", lineno, toks[1][1])
            vs = []
            for t, c in toks[2:-1]:
                v = _int(t, lineno, c)
                if not 1 <= v <= nv:
                    raise ParseError(f"variable {v} outside 1..{nv}", lineno, c)
                vs.append(v - 1)
            contexts[cid] = tuple(vs)
            continue
        # clause line
        try:
            at = [t for t, _ in toks].index("@")
        except ValueError:
            raise ParseError("clause line must end with '0 @ <context_id>'", lineno, toks[-1][1]) from None
        if at != len(toks) - 2 or at < 2 or toks[at - 1][0] != "0":
            raise ParseError("clause line must end with '0 @ <context_id>'", lineno, toks[min(at, len(toks) - 1)][1])
        cid = _int(toks[-1][0], lineno, toks[-1][1])
        if cid not in contexts:
            raise ParseError(f"clause references unknown context {cid}", lineno, toks[-1][1])
        lits = []
        for t, c in toks[: at - 1]:
            l = _int(t, lineno, c)
            if l == 0 or abs(l) > nv:
                raise ParseError(f"literal {l} outside +-1..{nv}", lineno, c)
            if abs(l) - 1 not in contexts[cid]:
                raise ParseError(f"literal {l} is not in context {cid}", lineno, c)
            lits.append(l)
        clauses.append(Clause(tuple(lits), cid))
    if header is None:
        raise ParseError("missing header", 1)
    nv, ncl, nctx = header
    if len(contexts) != nctx:
        raise ParseError(f"header declares {nctx} contexts, found {len(contexts)}", len(text.splitlines()) or 1)
    if len(clauses) != ncl:
        raise ParseError(f"header declares {ncl} clauses, found {len(clauses)}", len(text.splitlines()) or 1)
    try:
        system = ContextSystem(nv, tuple(contexts[i] for i in range(nctx)))
        return CblInstance(system, tuple(clauses), InstanceMeta(**meta))
    except CBLInputError as exc:
        raise ParseError(str(exc), 1) from None
