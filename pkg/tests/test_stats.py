import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbl.errors import CBLInputError
from cbl.stats import (
    NoiseSpec, adversarial_bound_check, bh_fdr, emit_certificate, empirical_p, epsilon_stability,
    eta_eff, flip_process, fold_scan, gen_stream, measured_eta_eff, power_csv, power_grid, statistic,
    verify_provenance,
)
from cbl import rng


def naive_bh(p, alpha):
    m = len(p)
    order = sorted(range(m), key=lambda i: (p[i], i))
    k = 0
    for r, i in enumerate(order, start=1):
        if p[i] <= alpha * r / m:
            k = r
    flags = [False] * m
    for i in order[:k]:
        flags[i] = True
    return flags


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.sampled_from([0.01, 0.05, 0.2]))
def test_bh_matches_step_up_definition(p, alpha):
    flags, q = bh_fdr(p, alpha)
    assert list(flags) == naive_bh(p, alpha)
    assert np.all(q >= np.asarray(p) - 1e-12)
    # a window is a discovery iff its q-value is within alpha
    assert list(flags) == [bool(v <= alpha + 1e-12) for v in q]


def test_empirical_p_counts_ties_conservatively():
    assert empirical_p(1.0, [1.0, 0.0, 2.0]) == 3 / 4
    assert empirical_p(5.0, [0.0] * 9) == 0.1
    with pytest.raises(CBLInputError):
        empirical_p(0.0, [])


def test_noise_spec_validation():
    with pytest.raises(CBLInputError):
        NoiseSpec(eta=0.6)
    with pytest.raises(CBLInputError):
        NoiseSpec(rho=1.0)


def test_flip_process_moments():
    g = rng.numpy_rng(1, "flips")
    z = flip_process(200_000, 0.1, 0.5, g).astype(float)
    assert abs(z.mean() - 0.1) < 0.005
    r = np.corrcoef(z[:-1], z[1:])[0, 1]
    assert abs(r - 0.5) < 0.01


def test_measured_eta_eff_tracks_formula():
    for rho in (0.0, 0.3, 0.6):
        z = flip_process(400_000, 0.1, rho, rng.numpy_rng(2, "ar", int(rho * 10)))
        m, se = measured_eta_eff(z, 1000)
        assert abs(m - eta_eff(0.1, rho)) <= rho / 1000 + 3 * se + 1e-12


def test_statistics_registry():
    x = np.array([0, 1, 0, 1])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    assert statistic("mean_diff")(x, y) == 1.0
    assert statistic("label_agreement")(x, y) == 1.0
    assert statistic("mean")(x, y) == 0.5
    with pytest.raises(CBLInputError):
        statistic("median")


def test_scan_finds_a_strong_effect_and_is_reproducible():
    s = gen_stream(2048, NoiseSpec(0.05, 0.2), seed=3, effect=0.6)
    a = fold_scan(s, 256, 256, B=199, seed=1)
    b = fold_scan(s, 256, 256, B=199, seed=1)
    assert a.discoveries.all()
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "window_start,T,p,q,band_lo,band_hi,delta"


def test_scan_windows_are_independent_of_window_count():
    # window i draws from its own stream, so truncating the input keeps earlier p-values
    s = gen_stream(2048, NoiseSpec(), seed=4, effect=0.0)
    short = gen_stream(2048, NoiseSpec(), seed=4, effect=0.0)
    object.__setattr__(short, "x", short.x[:1024])
    object.__setattr__(short, "y", short.y[:1024])
    a = fold_scan(s, 256, 256, B=99, seed=2)
    b = fold_scan(short, 256, 256, B=99, seed=2)
    assert np.array_equal(a.p[:4], b.p)


def test_degenerate_window_is_flagged():
    s = gen_stream(64, NoiseSpec(), seed=0)
    r = fold_scan(s, 1, 1, B=9)
    assert r.degenerate.all() and np.all(r.p == 1.0)


def test_iid_perturbation_bound():
    gen = lambda sd: gen_stream(2000, NoiseSpec(), sd)  # noqa: E731
    for eta in (0.01, 0.1):
        curve = epsilon_stability(gen, [0.0, eta], reps=40, seed=5)
        gap = abs(curve.mean[1] - curve.mean[0])
        assert gap <= eta + 3 * curve.slope_se * eta


@settings(max_examples=200)
@given(st.integers(1, 20), st.floats(0, 2), st.integers(0, 2**31))
def test_adversarial_linear_bound(d, nu, seed):
    g = np.random.default_rng(seed)
    c = g.normal(size=d)
    c /= max(1.0, np.linalg.norm(c))
    f = g.normal(size=d)
    delta = g.normal(size=d)
    delta *= nu / np.linalg.norm(delta) * g.random()
    assert adversarial_bound_check(c, f, delta, nu).passed


def test_adversarial_rejects_out_of_budget():
    with pytest.raises(CBLInputError):
        adversarial_bound_check([1.0], [0.0], [2.0], 1.0)
    with pytest.raises(CBLInputError):
        adversarial_bound_check([2.0], [0.0], [0.0], 1.0)


def test_power_grid_is_thread_invariant():
    a = power_grid([512], [0.0, 0.5], [0.0], B=49, reps=2, window=256, threads=1)
    b = power_grid([512], [0.0, 0.5], [0.0], B=49, reps=2, window=256, threads=2)
    assert power_csv(a) == power_csv(b)
    assert a[1][3] > a[0][3]


def test_provenance_chain_detects_tampering(tmp_path):
    (tmp_path / "a.csv").write_text("x,y\n1,2\n")
    (tmp_path / "b.csv").write_text("z\n3\n")
    files = [tmp_path / "b.csv", tmp_path / "a.csv"]
    cert = emit_certificate({"seed": 1}, files, tmp_path)
    assert [e["path"] for e in cert.document["artifacts"]] == ["a.csv", "b.csv"]
    assert verify_provenance(cert, tmp_path)
    again = emit_certificate({"seed": 1}, files, tmp_path)
    assert again.to_bytes() == cert.to_bytes()
    json.loads(cert.to_bytes())
    (tmp_path / "a.csv").write_text("x,y\n1,3\n")
    assert not verify_provenance(cert, tmp_path)
    assert emit_certificate({"seed": 1}, files, tmp_path).final_digest != cert.final_digest
    assert emit_certificate({"seed": 2}, files, tmp_path).final_digest != cert.final_digest
