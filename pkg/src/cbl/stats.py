"""Synthetic streams, folded permutation scans, BH-FDR, stability and provenance."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rng as _rng
from .errors import CBLInputError


@dataclass(frozen=True)
class NoiseSpec:
    eta: float = 0.0
    rho: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if not 0 <= self.eta < 0.5:
            raise CBLInputError("eta must lie in [0, 0.5)")
        if not 0 <= self.rho < 1:
            raise CBLInputError("rho must lie in [0, 1)")
        if self.nu < 0:
            raise CBLInputError("nu must be non-negative")


@dataclass(frozen=True)
class Stream:
    x: np.ndarray  # context labels, alternating 0/1
    y: np.ndarray  # observed bits
    clean: np.ndarray  # bits before flips
    flips: np.ndarray
    spec: NoiseSpec
    seed: int
    effect: float

    def __len__(self) -> int:
        return len(self.x)


def eta_eff(eta: float, rho: float) -> float:
    NoiseSpec(eta, rho)
    return eta * (1 - rho) / (1 + rho)


def flip_process(n: int, eta: float, rho: float, gen: np.random.Generator) -> np.ndarray:
    """Stationary binary Markov chain with mean ``eta`` and lag-1 correlation ``rho``."""
    u = gen.random(n)
    out = np.empty(n, dtype=np.int8)
    if n == 0:
        return out
    if rho == 0:
        return (u < eta).astype(np.int8)
    p11 = eta + rho * (1 - eta)
    p01 = eta * (1 - rho)
    prev = u[0] < eta
    out[0] = prev
    for t in range(1, n):
        prev = u[t] < (p11 if prev else p01)
        out[t] = prev
    return out


def gen_stream(n: int, spec: NoiseSpec, seed: int, effect: float = 0.2) -> Stream:
    """Alternating contexts with ``P(y=1 | c) = 1/2 ± effect/2`` and Markov flips."""
    if n < 2:
        raise CBLInputError("a stream needs at least two samples")
    if not 0 <= effect <= 1:
        raise CBLInputError("effect must lie in [0, 1]")
    x = (np.arange(n) % 2).astype(np.int8)
    base = _rng.numpy_rng(seed, "stream-base")
    prob = np.where(x == 1, 0.5 + effect / 2, 0.5 - effect / 2)
    clean = (base.random(n) < prob).astype(np.int8)
    flips = flip_process(n, spec.eta, spec.rho, _rng.numpy_rng(seed, "stream-flips"))
    return Stream(x, clean ^ flips, clean, flips, spec, seed, effect)


# -- statistics (vectorized over leading axes of the label array) -------------


def _mean_diff(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    n1 = x.sum(-1)
    n0 = x.shape[-1] - n1
    s1 = (x * y).sum(-1)
    s0 = y.sum(-1) - s1
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.abs(s1 / n1 - s0 / n0)
    return np.where((n1 == 0) | (n0 == 0), 0.0, d)


def _mean(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.mean(y, axis=-1), x.shape[:-1]).astype(np.float64)


def _label_agreement(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.mean(x == y, axis=-1)


STATISTICS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "mean_diff": _mean_diff,
    "mean": _mean,
    "label_agreement": _label_agreement,
}
DEFAULT_STATISTIC = "mean_diff"


def statistic(name: str):
    try:
        return STATISTICS[name]
    except KeyError:
        raise CBLInputError(f"unknown statistic {name!r}; choose from {sorted(STATISTICS)}") from None


# -- p-values and FDR -------------------------------------------------------------


def empirical_p(t_obs: float, t_null: Sequence[float]) -> float:
    t_null = np.asarray(t_null, dtype=np.float64)
    if t_null.size == 0:
        raise CBLInputError("empty permutation null")
    return (1 + int(np.sum(t_null >= t_obs))) / (1 + t_null.size)


def bh_fdr(p: Sequence[float], alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Benjamini-Hochberg step-up; returns (discovery flags, q-values)."""
    if not 0 < alpha < 1:
        raise CBLInputError("alpha must lie in (0, 1)")
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum(np.minimum.accumulate(ranked[::-1])[::-1], 1.0)
    q = np.empty(m)
    q[order] = q_sorted
    passing = np.nonzero(p[order] <= alpha * np.arange(1, m + 1) / m)[0]
    flags = np.zeros(m, dtype=bool)
    if passing.size:
        flags[order[: passing[-1] + 1]] = True
    return flags, q


# -- folded scan ------------------------------------------------------------------


@dataclass
class ScanResult:
    starts: np.ndarray
    T: np.ndarray
    p: np.ndarray
    q: np.ndarray
    discoveries: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    delta: np.ndarray
    degenerate: np.ndarray
    params: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["window_start", "T", "p", "q", "band_lo", "band_hi", "delta"])
        for i in range(len(self.starts)):
            wr.writerow(
                [int(self.starts[i])]
                + [f"{float(v):.6f}" for v in (self.T[i], self.p[i], self.q[i], self.band_lo[i],
                                               self.band_hi[i], self.delta[i])]
            )
        return buf.getvalue()


def fold_scan(
    stream: Stream,
    w: int,
    s: int,
    stat: str = DEFAULT_STATISTIC,
    B: int = 999,
    alpha: float = 0.05,
    seed: int = 0,
    ties: str = "conservative",
) -> ScanResult:
    """Sliding-window permutation scan with BH across windows.

    Labels are permuted within each window (block length ``w``). Window ``i``
    draws its replicates in index order from its own generator keyed by
    ``(seed, i)``. ``ties="randomized"`` breaks ties with the null uniformly,
    which makes p-values exactly uniform under exchangeability.
    """
    n = len(stream)
    if B < 1:
        raise CBLInputError("B must be at least 1")
    if not 1 <= w <= n:
        raise CBLInputError("window length must lie in [1, N]")
    if s < 1:
        raise CBLInputError("step must be at least 1")
    if ties not in ("conservative", "randomized"):
        raise CBLInputError("ties must be 'conservative' or 'randomized'")
    f = statistic(stat)
    starts = np.arange(0, n - w + 1, s)
    m = len(starts)
    T = np.zeros(m)
    p = np.ones(m)
    lo = np.zeros(m)
    hi = np.zeros(m)
    delta = np.zeros(m)
    degenerate = np.zeros(m, dtype=bool)
    for i, a in enumerate(starts):
        x = stream.x[a : a + w]
        y = stream.y[a : a + w].astype(np.float64)
        t_obs = float(f(x, y))
        T[i] = t_obs
        if x.min() == x.max():
            degenerate[i] = True
            lo[i] = hi[i] = t_obs
            continue
        g = _rng.numpy_rng(seed, "fold", int(i))
        perms = g.permuted(np.broadcast_to(x, (B, w)), axis=1)
        null = f(perms, y)
        if ties == "randomized":
            u = g.random()
            gt = int(np.sum(null > t_obs))
            eq = int(np.sum(null == t_obs))
            p[i] = (gt + u * (eq + 1)) / (B + 1)
        else:
            p[i] = empirical_p(t_obs, null)
        lo[i], hi[i] = np.percentile(null, [2.5, 97.5])
        sd = float(np.std(null, ddof=1)) if B > 1 else 0.0
        delta[i] = (t_obs - float(np.mean(null))) / sd if sd > 0 else 0.0
    flags, q = bh_fdr(p, alpha) if m else (np.zeros(0, dtype=bool), np.zeros(0))
    params = {"w": w, "s": s, "B": B, "alpha": alpha, "seed": seed, "stat": stat, "ties": ties}
    return ScanResult(starts, T, p, q, flags, lo, hi, delta, degenerate, params)


# -- noise bounds -------------------------------------------------------------------


def _window_rate(z: np.ndarray) -> float:
    prev, nxt = z[:-1], z[1:]
    n1 = prev.sum()
    n0 = prev.size - n1
    if n1 == 0 or n0 == 0:
        r = 0.0
    else:
        r = (nxt[prev == 1].sum() / n1) - (nxt[prev == 0].sum() / n0)
    return float(z.mean() * (1 - r) / (1 + r))


def measured_eta_eff(flips: np.ndarray, w: int) -> tuple[float, float]:
    """Mean and standard error over windows of ``f (1 - r) / (1 + r)``.

    ``f`` is the window's flip fraction and ``r`` its lag-1 transition
    correlation ``P(1->1) - P(0->1)``, both estimated inside the window. A
    split-half jackknife removes the leading ``1/w`` bias of the ratio.
    """
    if w < 4:
        raise CBLInputError("window must hold at least four samples")
    vals = []
    h = w // 2
    for a in range(0, len(flips) - w + 1, w):
        z = flips[a : a + w].astype(np.int64)
        full = _window_rate(z)
        vals.append(2 * full - (_window_rate(z[:h]) + _window_rate(z[h:])) / 2)
    vals = np.asarray(vals)
    if vals.size < 2:
        raise CBLInputError("need at least two windows")
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


@dataclass(frozen=True)
class StabilityCurve:
    p_grid: tuple[float, ...]
    mean: tuple[float, ...]
    se: tuple[float, ...]
    slope: float
    slope_se: float


def epsilon_stability(
    generator: Callable[[int], Stream],
    p_grid: Sequence[float],
    stat: str | Callable = DEFAULT_STATISTIC,
    reps: int = 200,
    seed: int = 0,
) -> StabilityCurve:
    """Monte-Carlo ``S(p)`` under i.i.d. flips with common random numbers.

    ``stat`` is a registry name (called as ``f(x, y)``) or a callable
    ``f(x, y, clean)``. The slope is the forward difference at the two
    smallest grid points, with its paired standard error.
    """
    grid = [float(v) for v in p_grid]
    if len(grid) < 2 or grid != sorted(grid):
        raise CBLInputError("p_grid must be sorted with at least two points")
    if isinstance(stat, str):
        fn = statistic(stat)
        f = lambda x, y, clean: float(fn(x, y))  # noqa: E731
    else:
        f = stat
    vals = np.zeros((reps, len(grid)))
    for r in range(reps):
        st = generator(_rng.derive_seed(seed, "eps-stream", r))
        u = _rng.numpy_rng(seed, "eps-flips", r).random(len(st))
        for j, pj in enumerate(grid):
            y = st.y ^ (u < pj).astype(np.int8)
            vals[r, j] = f(st.x, y.astype(np.float64), st.y)
    mean = vals.mean(0)
    se = vals.std(0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(len(grid))
    h = grid[1] - grid[0]
    d = (vals[:, 1] - vals[:, 0]) / h
    slope_se = float(d.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return StabilityCurve(tuple(grid), tuple(map(float, mean)), tuple(map(float, se)), float(d.mean()), slope_se)


@dataclass(frozen=True)
class AdversarialCheck:
    delta_s: float
    bound: float
    passed: bool


def adversarial_bound_check(c, f, delta, nu: float) -> AdversarialCheck:
    """Worst-case shift of a linear statistic ``<c, f>`` under ``||delta|| <= nu``."""
    c = np.asarray(c, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if not (c.shape == f.shape == delta.shape):
        raise CBLInputError("c, f and delta must have the same shape")
    tol = 1e-12
    if np.linalg.norm(c) > 1 + tol:
        raise CBLInputError("coefficient vector must have l2 norm at most 1")
    if nu < 0 or np.linalg.norm(delta) > nu * (1 + tol) + tol:
        raise CBLInputError("perturbation exceeds the l2 budget nu")
    ds = abs(float(c @ (f + delta)) - float(c @ f))
    slack = tol * (1 + float(np.abs(f).sum()))
    return AdversarialCheck(ds, float(nu), ds <= nu + slack)


# -- power grid ---------------------------------------------------------------------


POWER_ETA = 0.1


def _power_cell(args) -> tuple[int, float, float, float]:
    n, eps, rho, B, alpha, reps, seed, window, eta = args
    rates = []
    w = min(window, n)
    for r in range(reps):
        s = _rng.derive_seed(seed, "power", n, repr(eps), repr(rho), r)
        st = gen_stream(n, NoiseSpec(eta, rho), s, effect=eps)
        res = fold_scan(st, w, w, DEFAULT_STATISTIC, B, alpha, s)
        rates.append(float(res.discoveries.mean()))
    return n, eps, rho, float(np.mean(rates))


def power_grid(
    n_list: Sequence[int],
    eps_list: Sequence[float],
    rho_list: Sequence[float],
    B: int = 199,
    alpha: float = 0.05,
    reps: int = 20,
    seed: int = 0,
    window: int = 1024,
    eta: float = POWER_ETA,
    threads: int = 1,
) -> list[tuple[int, float, float, float]]:
    """Mean BH discovery rate per ``(n, eps, rho)`` cell; rows in grid order."""
    if not (n_list and eps_list and rho_list):
        raise CBLInputError("grids must be non-empty")
    cells = [(n, e, r, B, alpha, reps, seed, window, eta) for n in n_list for e in eps_list for r in rho_list]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(_power_cell, cells))
    return [_power_cell(c) for c in cells]


def power_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["n", "eps", "rho", "power"])
    for n, e, r, pw in rows:
        wr.writerow([n, f"{e:.6f}", f"{r:.6f}", f"{pw:.6f}"])
    return buf.getvalue()


# -- provenance ---------------------------------------------------------------------


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class ProvenanceCertificate:
    document: dict

    @property
    def final_digest(self) -> str:
        return self.document["final_digest"]

    def to_bytes(self) -> bytes:
        return canonical_json(self.document) + b"\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())


def _chain(metadata: Mapping, blobs: Sequence[tuple[str, bytes]]):
    d = hashlib.sha256(canonical_json(dict(metadata))).hexdigest()
    entries = []
    for name, data in blobs:
        d = hashlib.sha256(bytes.fromhex(d) + data).hexdigest()
        entries.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "chain": d})
    return entries, d


def _read_artifacts(paths: Sequence[str | Path], root: Path) -> list[tuple[str, bytes]]:
    missing = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        raise FileNotFoundError("missing artifacts: " + ", ".join(missing))
    blobs = []
    for p in paths:
        p = Path(p)
        try:
            name = p.resolve().relative_to(root.resolve()).as_posix()
        except ValueError:
            name = p.name
        blobs.append((name, p.read_bytes()))
    return sorted(blobs)


def emit_certificate(metadata: Mapping, artifacts: Sequence[str | Path], root: str | Path | None = None) -> ProvenanceCertificate:
    """Canonical JSON certificate whose digests chain over the sorted artifacts.

    ``metadata`` should carry identity/scope, randomness provenance, the
    ε-perturbation parameters and scan statistics; artifact names are
    recorded relative to ``root`` (default: the first artifact's directory).
    """
    if root is None:
        root = Path(artifacts[0]).parent if artifacts else Path(".")
    blobs = _read_artifacts(artifacts, Path(root))
    meta = dict(metadata)
    meta.setdefault("randomness", {
        "generator": _rng.GENERATOR_NAME,
        "derivation": _rng.DERIVATION_RULE,
    })
    entries, final = _chain(meta, blobs)
    return ProvenanceCertificate({"metadata": meta, "artifacts": entries, "final_digest": final})


def verify_provenance(cert: ProvenanceCertificate, root: str | Path) -> bool:
    """Recompute the chain from the artifacts under ``root``."""
    names = [e["path"] for e in cert.document["artifacts"]]
    blobs = _read_artifacts([Path(root) / n for n in names], Path(root))
    entries, final = _chain(cert.document["metadata"], blobs)
    return entries == cert.document["artifacts"] and final == cert.final_digest


def spec_dict(spec: NoiseSpec) -> dict:
    return asdict(spec)
