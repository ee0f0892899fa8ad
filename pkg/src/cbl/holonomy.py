"""Discrete U(1) connection on loop families and the intercept protocol.

The connection on a boundary loop of length ``L`` is built edge by edge as

* a face term: ``theta0`` on each of the ``F = round(rho * L)`` enclosed faces,
* a geometric part whose loop integral is a per-family defect ``d``
  (its per-edge size is O(1/L); the gate law picks how it is spread),
* pure gauge: differences of random vertex potentials, summing to zero,
* bounded probes: ``eps * cos(2 pi pos)`` at a few fixed loop positions.

The per-edge holonomy is therefore ``theta0 * rho + (d + probes) / L`` up to
float rounding, so a fit of ``h / 2pi`` against ``1/L`` recovers the intercept
``theta0 * rho / 2pi``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import rng as _rng
from .errors import CBLInputError, InvariantViolation
from .instances import mixture_density

TWO_PI = 2 * math.pi

FAMILY_RHO = {
    "chsh": Fraction(1, 4),
    "kcbs": Fraction(1, 5),
    "sat1": Fraction(1, 6),
    "sat2": Fraction(2, 6),
}
# intercepts reported by the reference tables
FAMILY_TABLE = {"chsh": 0.010204, "kcbs": 0.008272, "sat1": 0.007068, "sat2": 0.013340}
MIX_TABLE = {0.0: 0.008322, 0.25: 0.008793, 0.5: 0.009263, 0.75: 0.009734, 1.0: 0.010204}
MIX_POINTS = tuple(MIX_TABLE)

DEFAULT_L_GRID = tuple(480 * k for k in range(1, 21))
FAMILY_DEFECT = {"chsh": 0.5, "kcbs": 0.4, "sat1": 0.6, "sat2": 0.3, "mix": 0.45}  # in turns

# gate law -> (defect multiplier, geometric-tail distribution)
GATE_LAWS = {
    "direct": (1.0, "exponential"),
    "mirrored": (-1.0, "uniform"),
    "heavy": (0.5, "lognormal"),
}
DEFAULT_GATE_LAW = "direct"
ALT_GATE_LAW = "mirrored"

ABS_TOL = 1e-10  # float floor for invariance checks


# -- loop families ------------------------------------------------------------


@dataclass(frozen=True)
class LoopFamily:
    family_id: str
    rho_face: Fraction
    L_grid: tuple[int, ...] = DEFAULT_L_GRID
    orientation: int = 1
    label: str = ""
    decimation: int = 1

    def __post_init__(self):
        if self.orientation not in (1, -1):
            raise CBLInputError("orientation must be +1 or -1")
        if not self.L_grid or min(self.L_grid) < 1:
            raise CBLInputError("L_grid must hold positive lengths")
        object.__setattr__(self, "rho_face", Fraction(self.rho_face))
        if not self.label:
            object.__setattr__(self, "label", self.family_id)

    @property
    def kind(self) -> str:
        return "mix" if self.family_id.startswith("mix") else "family"

    def face_count(self, L: int) -> int:
        return math.floor(self.rho_face * L + Fraction(1, 2))

    def reversed(self) -> "LoopFamily":
        return replace(self, orientation=-self.orientation)

    def decimated(self) -> "LoopFamily":
        """Coarse-grain every loop ``L -> L/2``."""
        if any(L % 2 for L in self.L_grid):
            raise CBLInputError("decimation needs even loop lengths")
        return replace(self, L_grid=tuple(L // 2 for L in self.L_grid), decimation=self.decimation * 2)


def family(name: str, L_grid: Sequence[int] = DEFAULT_L_GRID) -> LoopFamily:
    if name not in FAMILY_RHO:
        raise CBLInputError(f"unknown family {name!r}; choose from {sorted(FAMILY_RHO)}")
    return LoopFamily(name, FAMILY_RHO[name], tuple(L_grid))


def mix_family(p: float, L_grid: Sequence[int] = DEFAULT_L_GRID) -> LoopFamily:
    return LoopFamily(f"mix({p:.2f})", mixture_density(p), tuple(L_grid), label=f"{p:.2f}")


def standard_families(L_grid: Sequence[int] = DEFAULT_L_GRID) -> list[LoopFamily]:
    return [family(n, L_grid) for n in FAMILY_RHO] + [mix_family(p, L_grid) for p in MIX_POINTS]


# -- connection model ----------------------------------------------------------------


@dataclass(frozen=True)
class ConnectionModel:
    theta0: float
    gate_law: str = DEFAULT_GATE_LAW
    defect: float | None = None  # loop integral of the geometric part; None: per-family default
    epsilon_mask: tuple[float, ...] = (0.125,)  # probe positions as loop fractions
    epsilon: float = 0.05
    gauge_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.gate_law not in GATE_LAWS:
            raise CBLInputError(f"unknown gate law {self.gate_law!r}; choose from {sorted(GATE_LAWS)}")
        if any(not 0 <= p < 1 for p in self.epsilon_mask):
            raise CBLInputError("probe positions must lie in [0, 1)")

    def with_gate_law(self, name: str) -> "ConnectionModel":
        return replace(self, gate_law=name)

    def with_mask(self, mask: Sequence[float]) -> "ConnectionModel":
        return replace(self, epsilon_mask=tuple(mask))

    # pieces a model variant may override
    def theta(self, fam: LoopFamily) -> float:
        return self.theta0

    def faces(self, fam: LoopFamily, L: int) -> int:
        return fam.face_count(L)

    def loop_defect(self, fam: LoopFamily) -> float:
        base = self.defect if self.defect is not None else TWO_PI * FAMILY_DEFECT[fam.kind if fam.kind == "mix" else fam.family_id]
        return GATE_LAWS[self.gate_law][0] * base

    def _gen(self, fam: LoopFamily, L: int, what: str) -> np.random.Generator:
        return _rng.numpy_rng(self.seed, what, fam.family_id, self.gate_law, L)

    def face_term(self, fam: LoopFamily, L: int) -> np.ndarray:
        F = self.faces(fam, L)
        out = np.zeros(L)
        if F:
            out[(np.arange(F) * L) // F] += self.theta(fam)
        return out

    def geometric_term(self, fam: LoopFamily, L: int) -> np.ndarray:
        g = self._gen(fam, L, "geom")
        dist = GATE_LAWS[self.gate_law][1]
        if dist == "exponential":
            w = g.exponential(1.0, L)
        elif dist == "uniform":
            w = g.uniform(0.5, 1.5, L)
        else:
            w = g.lognormal(0.0, 0.5, L)
        return self.loop_defect(fam) * w / w.sum()

    def gauge_term(self, fam: LoopFamily, L: int) -> np.ndarray:
        phi = self._gen(fam, L, "gauge").normal(0.0, self.gauge_sigma, L)
        return np.roll(phi, -1) - phi

    def probe_term(self, fam: LoopFamily, L: int) -> np.ndarray:
        out = np.zeros(L)
        for pos in self.epsilon_mask:
            out[int(pos * L)] += self.epsilon * math.cos(TWO_PI * pos)
        return out

    def terms(self, fam: LoopFamily, L: int) -> list[np.ndarray]:
        return [self.face_term(fam, L), self.geometric_term(fam, L), self.gauge_term(fam, L), self.probe_term(fam, L)]

    def oriented_terms(self, fam: LoopFamily, L: int) -> list[np.ndarray]:
        """Edge values as traversed; reversal walks the loop backwards with negated values."""
        ts = self.terms(fam, L)
        if fam.orientation == -1:
            ts = [-t[::-1] for t in ts]
        return ts


def per_edge_holonomy(model: ConnectionModel, fam: LoopFamily, L: int) -> float:
    if L not in fam.L_grid:
        raise CBLInputError(f"L={L} is not in the family's grid")
    total = math.fsum(v for t in model.oriented_terms(fam, L) for v in t.tolist())
    return total / L


# -- fitting and calibration -----------------------------------------------------------


@dataclass(frozen=True)
class TailFit:
    alpha_inf: float
    c: float
    residual: float
    L_range: tuple[int, int]
    alpha_se: float = 0.0
    c_se: float = 0.0


def tail_fit(h: Sequence[tuple[int, float]]) -> TailFit:
    """OLS of ``h_L / 2pi`` against ``1/L`` on the largest half of the grid."""
    pts = sorted((int(L), float(v)) for L, v in h)
    if len(pts) < 3:
        raise CBLInputError("tail fit needs at least three points")
    keep = pts[len(pts) // 2 :] if len(pts) - len(pts) // 2 >= 3 else pts[-3:]
    x = np.array([1.0 / L for L, _ in keep])
    y = np.array([v / TWO_PI for _, v in keep])
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(keep) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    return TailFit(
        float(coef[0]),
        float(coef[1]),
        float(np.sqrt(np.mean(resid**2))),
        (keep[0][0], keep[-1][0]),
        float(np.sqrt(max(cov[0, 0], 0.0))),
        float(np.sqrt(max(cov[1, 1], 0.0))),
    )


def calibrate_theta0(alpha_target: float, rho_face: Fraction = FAMILY_RHO["chsh"]) -> float:
    """Face angle that puts the calibration family's intercept at ``alpha_target``."""
    if alpha_target < 0:
        raise CBLInputError("calibration target must be non-negative")
    return TWO_PI * alpha_target / float(rho_face)


def predict_alpha_inf(theta0: float, rho_face) -> float:
    return (theta0 / TWO_PI) * float(rho_face)


def predict_alpha_inf_exact(theta0_over_pi: Fraction, rho_face: Fraction) -> Fraction:
    """Same law with ``theta0`` given as a rational multiple of pi."""
    return Fraction(theta0_over_pi) / 2 * Fraction(rho_face)


def measure_cbl_constant(model: ConnectionModel, fam: LoopFamily) -> tuple[TailFit, float]:
    if max(fam.L_grid) < 10 * min(fam.L_grid):
        raise CBLInputError("L_grid must span at least one decade")
    fit = tail_fit([(L, per_edge_holonomy(model, fam, L)) for L in fam.L_grid])
    return fit, abs(fit.alpha_inf)


def _measure(model, fam) -> TailFit:
    return tail_fit([(L, per_edge_holonomy(model, fam, L)) for L in fam.L_grid])


# -- falsification matrix ----------------------------------------------------------------


@dataclass(frozen=True)
class Row:
    number: int
    name: str
    passed: bool
    detail: str


@dataclass
class FalsificationReport:
    rows: list[Row] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def row(self, number: int) -> Row:
        return next(r for r in self.rows if r.number == number)


def _tol(*fits: TailFit, scale: Sequence[float] | None = None) -> float:
    scale = scale or [1.0] * len(fits)
    return 3 * math.sqrt(sum((s * f.alpha_se) ** 2 for s, f in zip(scale, fits))) + ABS_TOL


def linear_r2(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line ``y = a + b x``; returns ``(a, b, R^2)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    b, a = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (a + b * x)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(a), float(b), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def falsification_suite(model: ConnectionModel, families: Sequence[LoopFamily]) -> FalsificationReport:
    """Run the six pre-registered rows on ``families``."""
    by_id = {f.family_id: f for f in families}
    mixes = [f for f in families if f.kind == "mix"]
    missing = [n for n in ("chsh", "kcbs") if n not in by_id]
    if missing or not any(n in by_id for n in ("sat1", "sat2")) or len(mixes) < 3:
        raise CBLInputError(
            "families must include chsh, kcbs, a SAT density and at least three mixture points"
        )
    fits = {f.family_id: _measure(model, f) for f in families}
    rep = FalsificationReport()

    # 1 single-calibration universality
    chsh = fits["chsh"]
    theta_hat = calibrate_theta0(chsh.alpha_inf, by_id["chsh"].rho_face) if chsh.alpha_inf >= 0 else -calibrate_theta0(-chsh.alpha_inf, by_id["chsh"].rho_face)
    worst, ok = 0.0, True
    for f in families:
        ratio = float(f.rho_face / by_id["chsh"].rho_face)
        gap = abs(fits[f.family_id].alpha_inf - predict_alpha_inf(theta_hat, f.rho_face))
        ok &= gap <= _tol(fits[f.family_id], chsh, scale=[1.0, ratio])
        worst = max(worst, gap)
    rep.rows.append(Row(1, "single-calibration universality", ok, f"max |alpha - pred| = {worst:.3e}"))

    # 2 gate-law swap
    other = ALT_GATE_LAW if model.gate_law != ALT_GATE_LAW else DEFAULT_GATE_LAW
    swapped = model.with_gate_law(other)
    worst, ok, slope_moved = 0.0, True, False
    for f in families:
        g = _measure(swapped, f)
        gap = abs(g.alpha_inf - fits[f.family_id].alpha_inf)
        ok &= gap <= _tol(g, fits[f.family_id])
        slope_moved |= abs(g.c - fits[f.family_id].c) > 1e-6
        worst = max(worst, gap)
    rep.rows.append(Row(2, "gate-law swap", ok, f"max intercept shift {worst:.3e}; slope moved: {slope_moved}"))

    # 3 decimation
    worst, ok = 0.0, True
    for f in families:
        g = _measure(model, f.decimated())
        gap = abs(g.alpha_inf - fits[f.family_id].alpha_inf)
        ok &= gap <= _tol(g, fits[f.family_id])
        worst = max(worst, gap)
    rep.rows.append(Row(3, "decimation", ok, f"max intercept shift {worst:.3e}"))

    # 4 epsilon-probe neutrality: move every probe by a quarter turn
    moved = model.with_mask([(p + 0.25) % 1.0 for p in model.epsilon_mask])
    worst, ok, responds = 0.0, True, True
    for f in families:
        g = _measure(moved, f)
        gap = abs(g.alpha_inf - fits[f.family_id].alpha_inf)
        ok &= gap <= _tol(g, fits[f.family_id])
        responds &= abs(g.c - fits[f.family_id].c) > 3 * math.hypot(g.c_se, fits[f.family_id].c_se) + 1e-9
        worst = max(worst, gap)
    rep.rows.append(Row(4, "epsilon-probe neutrality", ok and responds,
                        f"max intercept shift {worst:.3e}; slope responds: {responds}"))

    # 5 orientation parity (exact)
    ok = True
    for f in families:
        g = _measure(model, f.reversed())
        ok &= g.alpha_inf == -fits[f.family_id].alpha_inf and g.c == -fits[f.family_id].c
    rep.rows.append(Row(5, "orientation parity", ok, "exact sign flip" if ok else "sign flip not exact"))

    # 6 mixture linearity
    a, b, r2 = linear_r2([float(f.rho_face) for f in mixes], [fits[f.family_id].alpha_inf for f in mixes])
    rep.rows.append(Row(6, "mixture linearity", r2 > 0.9999, f"slope {b:.6f}, offset {a:.6f}, R^2 {r2:.8f}"))
    return rep


def family_intercepts(model: ConnectionModel, families: Sequence[LoopFamily]) -> dict[str, TailFit]:
    return {f.family_id: _measure(model, f) for f in families}


def alpha_csvs(model: ConnectionModel, families: Sequence[LoopFamily]) -> tuple[str, str]:
    """Point and line tables in the reference column layout (six decimals)."""
    fits = family_intercepts(model, families)
    groups: dict[str, list[LoopFamily]] = {}
    for f in families:
        groups.setdefault(f.kind, []).append(f)
    line = {}
    for kind, fs in groups.items():
        if len(fs) >= 2:
            a, b, _ = linear_r2([float(f.rho_face) for f in fs], [fits[f.family_id].alpha_inf for f in fs])
        else:
            a, b = 0.0, fits[fs[0].family_id].alpha_inf / float(fs[0].rho_face)
        for f in fs:
            line[f.family_id] = a + b * float(f.rho_face)
    pts, ln = io.StringIO(), io.StringIO()
    wp = csv.writer(pts, lineterminator="\n")
    wl = csv.writer(ln, lineterminator="\n")
    wp.writerow(["type", "label", "rho_face", "alpha_inf", "alpha_inf_fit"])
    wl.writerow(["type", "label", "rho_face", "alpha_inf_fit"])
    for f in families:
        rho = f"{float(f.rho_face):.6f}"
        wp.writerow([f.kind, f.label, rho, f"{fits[f.family_id].alpha_inf:.6f}", f"{line[f.family_id]:.6f}"])
        wl.writerow([f.kind, f.label, rho, f"{line[f.family_id]:.6f}"])
    return pts.getvalue(), ln.getvalue()


# -- fan-in gap --------------------------------------------------------------------------------


MAX_SIGMA = 0.15
FANIN_CONSTANT = 1.0


def fan_in_gap(b: float, a0: float, J: int, sigma: float, eps_cert: float = 0.0) -> float:
    if not 0 <= sigma <= MAX_SIGMA:
        raise CBLInputError(f"sigma must lie in [0, {MAX_SIGMA}]")
    if J < 0 or a0 < 0 or not 0 <= eps_cert <= 1:
        raise CBLInputError("need J >= 0, a0 >= 0 and eps_cert in [0, 1]")
    return abs(b) + a0 * J * (math.cos(sigma) - math.sin(sigma)) - FANIN_CONSTANT * eps_cert * a0 * J


def simulate_fan_in(b: float, a0: float, J: int, sigma: float, eps_cert: float, draws: int, seed: int):
    """Realized marked amplitudes for random phases in ``[-sigma, sigma]``.

    ``floor(eps_cert * J)`` randomly chosen opens per draw are erroneous and
    contribute no amplitude. Returns ``(amplitudes, bound)``.
    """
    bound = fan_in_gap(b, a0, J, sigma, eps_cert)
    g = _rng.numpy_rng(seed, "fan-in")
    phases = g.uniform(-sigma, sigma, (draws, J))
    amp = np.full((draws, J), float(a0))
    k = int(math.floor(eps_cert * J))
    if k:
        bad = np.argsort(g.random((draws, J)), axis=1)[:, :k]
        np.put_along_axis(amp, bad, 0.0, axis=1)
    total = np.abs((amp * np.exp(1j * phases)).sum(axis=1))
    return abs(b) + total, bound


# -- vertex turning ------------------------------------------------------------------------------


def K(theta: float) -> np.ndarray:
    """Disk rotation by ``theta`` in SU(1,1)."""
    return np.diag([np.exp(0.5j * theta), np.exp(-0.5j * theta)])


def A(tau: float) -> np.ndarray:
    """Hyperbolic boost of rapidity ``tau``."""
    c, s = math.cosh(tau / 2), math.sinh(tau / 2)
    return np.array([[c, s], [s, c]], dtype=complex)


def _polygon_exterior_angles(n: int) -> list[float]:
    pts = [(math.cos(TWO_PI * k / n), math.sin(TWO_PI * k / n)) for k in range(n)]
    out = []
    for k in range(n):
        (x0, y0), (x1, y1), (x2, y2) = pts[k - 1], pts[k], pts[(k + 1) % n]
        a_in = math.atan2(y1 - y0, x1 - x0)
        a_out = math.atan2(y2 - y1, x2 - x1)
        out.append((a_out - a_in + math.pi) % TWO_PI - math.pi)
    return out


def turning_oracle(n: int, delta: float, seed: int = 0, substeps: int = 16) -> float:
    """Per-corner rotation from composing SU(1,1) corner transports around an n-gon.

    Corner ``k`` transports by ``C_{k-1} K(delta + ext_k) C_k^{-1}`` with random
    boosts ``C_k`` (and ``C_n = C_0``), so the boosts cancel around the closed
    loop. The accumulated rotation is read off the running product as
    ``2 arg(a)`` and unwrapped continuously over substeps.
    """
    if n < 3:
        raise CBLInputError("a polygon needs at least three corners")
    g = _rng.py_rng(seed, "turning", n)
    C = [K(g.uniform(-math.pi, math.pi)) @ A(g.uniform(-1.0, 1.0)) for _ in range(n)]
    C.append(C[0])
    ext = _polygon_exterior_angles(n)
    prod = np.eye(2, dtype=complex)
    total, last = 0.0, 0.0
    for k in range(n):
        theta = delta + ext[k]
        for j in range(1, substeps + 1):
            step = prod @ C[k] @ K(theta * j / substeps) @ np.linalg.inv(C[k + 1])
            frame = np.linalg.inv(C[0]) @ step @ C[k + 1]
            ang = 2 * np.angle(frame[0, 0])
            d = (ang - last + TWO_PI) % (2 * TWO_PI) - TWO_PI
            total += d
            last = ang
        prod = prod @ C[k] @ K(theta) @ np.linalg.inv(C[k + 1])
    return total / n


def vertex_turning(n: int, delta: float, seed: int = 0) -> float:
    """``delta + 2 pi / n``, confirmed against the matrix oracle to 1e-9."""
    if n < 3:
        raise CBLInputError("a polygon needs at least three corners")
    closed = delta + TWO_PI / n
    oracle = turning_oracle(n, delta, seed)
    if abs(oracle - closed) > 1e-9:
        raise InvariantViolation(f"turning oracle {oracle!r} disagrees with closed form {closed!r}")
    return closed


# -- variational rigidity ------------------------------------------------------------------------------


@dataclass(frozen=True)
class VariationalResult:
    theta_star: float
    sup_error: float
    profile: tuple[tuple[float, float], ...]


def sup_error(samples: Mapping[str, Mapping[str, Sequence[tuple[int, float]]]], rho: Mapping[str, float],
              L0: int, theta: float) -> float:
    return max(
        abs(h - theta * float(rho[fam]))
        for fam, laws in samples.items()
        for pts in laws.values()
        for L, h in pts
        if L >= L0
    )


def variational_theta(
    samples: Mapping[str, Mapping[str, Sequence[tuple[int, float]]]],
    rho: Mapping[str, float],
    L0: int,
    bracket: tuple[float, float] | None = None,
    iters: int = 200,
) -> VariationalResult:
    """Minimize ``E*(theta) = max |h_L - theta rho|`` by ternary search.

    ``samples[family][gate_law]`` lists ``(L, h_L)`` per-edge holonomies.
    """
    pts = [
        (h, float(rho[fam]))
        for fam, laws in samples.items()
        for ps in laws.values()
        for L, h in ps
        if L >= L0
    ]
    if not pts:
        raise CBLInputError("no samples at or above the cutoff")
    if bracket is None:
        ratios = [h / r for h, r in pts if r]
        lo, hi = min(ratios), max(ratios)
        pad = 1.0 + (hi - lo)
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = bracket
    E = lambda t: max(abs(h - t * r) for h, r in pts)  # noqa: E731
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if E(m1) <= E(m2):
            hi = m2
        else:
            lo = m1
    t = (lo + hi) / 2
    grid = np.linspace(t - 0.05, t + 0.05, 11)
    return VariationalResult(t, E(t), tuple((float(x), float(E(x))) for x in grid))


def variational_samples(model: ConnectionModel, families: Sequence[LoopFamily], gate_laws: Sequence[str]):
    samples: dict[str, dict[str, list[tuple[int, float]]]] = {}
    for f in families:
        for law in gate_laws:
            m = model.with_gate_law(law)
            samples.setdefault(f.family_id, {})[law] = [(L, per_edge_holonomy(m, f, L)) for L in f.L_grid]
    rho = {f.family_id: float(f.rho_face) for f in families}
    return samples, rho
