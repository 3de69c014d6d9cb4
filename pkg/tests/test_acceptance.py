"""Acceptance suite: one test per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.  Criterion 9 (mesh refinement
up to rf=2) is opt-in: set ``PARASTAB_LONG=1``.
"""
import functools
import math
import os
import sys
import time

import numpy as np
import pytest

from parastab.actuation import ActuatorArray, SensorArray, identity_report
from parastab.config import format_config, parse_config_text, write_trace_csv
from parastab.delay import (
    DDEParams,
    SpectralParams,
    classify,
    solve_dde,
    spectral_demo,
    tau_hat,
)
from parastab.engine import ScenarioConfig, fit_decay_rate, plateau_level, run, sweep_tau
from parastab.fem import SemidiscreteOperators
from parastab.mesh import build_regions, build_structured_mesh

REFERENCE = ScenarioConfig()  # nu=0.1, Lambda=(200,100), tau=0.1, t_s=1e-3, M=S=2


@functools.lru_cache(maxsize=None)
def _run_cached(text):
    cfg = parse_config_text(text)
    start = time.perf_counter()
    trace = run(cfg)
    return trace, time.perf_counter() - start


def simulate(cfg):
    """Runs are cached per resolved configuration across criteria."""
    return _run_cached(format_config(cfg))


# ---------------------------------------------------------------- 1

def test_criterion_01_operator_identities(record_property):
    start = time.perf_counter()
    ops = SemidiscreteOperators(build_structured_mesh(16), 0.1)
    ar, sr = build_regions(2, 2)
    act = ActuatorArray(ops, ar, 100.0)
    sen = SensorArray(ops, sr, 200.0)
    report = identity_report(act, sen)
    diag_err = max(np.max(np.abs(np.diag(a.gram) - 1 / 64)) for a in (act, sen))
    elapsed = time.perf_counter() - start
    worst = max(report.values())
    record_property("detail", f"worst identity residual {worst:.2e}, "
                              f"gram diagonal error {diag_err:.1e}, {elapsed:.2f} s")
    assert worst <= 1e-10
    assert diag_err <= 1e-10
    assert elapsed < 5.0


# ---------------------------------------------------------------- 2

def test_criterion_02_dde_threshold(record_property):
    start = time.perf_counter()
    th = tau_hat(1.0, -2.0)
    closed_form = math.acos(0.5) / math.sqrt(3.0)
    # nearest delays that are multiples of h inside [0.95, 1.05] * tau_hat
    lo = math.ceil(0.95 * th / 1e-3) * 1e-3
    hi = math.floor(1.05 * th / 1e-3) * 1e-3
    below = classify(solve_dde(DDEParams(rho=1.0, kappa=-2.0, tau=round(lo, 3), h=1e-3), 40.0))
    above = classify(solve_dde(DDEParams(rho=1.0, kappa=-2.0, tau=round(hi, 3), h=1e-3), 40.0))
    elapsed = time.perf_counter() - start
    record_property("detail", f"tau_hat={th:.7f}; tau={lo:.3f} {below}, tau={hi:.3f} {above}; "
                              f"{elapsed:.2f} s")
    assert abs(th - 0.6045998) <= 1e-6
    assert abs(th - closed_form) <= 1e-12
    assert (below, above) == ("decaying", "growing")
    assert elapsed < 10.0


# ---------------------------------------------------------------- 3

def test_criterion_03_threshold_bound_and_monotonicity(record_property):
    rng = np.random.default_rng(2024)
    rho = 10.0 ** rng.uniform(-2, 2, 100)
    gamma = 1.0 + 10.0 ** rng.uniform(-4, 3, 100)
    margins = [1.0 / r - tau_hat(r, -g * r) for r, g in zip(rho, gamma)]
    grid = [tau_hat(1.0, -g) for g in (1.1, 1.5, 2.0, 5.0, 50.0)]
    record_property("detail", f"min(1/rho - tau_hat) over 100 pairs = {min(margins):.3e}; "
                              f"grid {', '.join(f'{v:.4f}' for v in grid)}")
    assert min(margins) > 0
    assert all(a > b for a, b in zip(grid, grid[1:]))


# ---------------------------------------------------------------- 4

def test_criterion_04_predictor_equals_nominal(record_property):
    base = REFERENCE.replace(matched_plant=True, full_state=True, zeta_mag=0.0, T=5.0)
    pred, t_pred = simulate(base.replace(mode="delayed_predictor"))
    nom, t_nom = simulate(base.replace(mode="nominal", activation=base.tau))
    dev = float(np.max(np.abs(pred.norm_y - nom.norm_y) / nom.norm_y))
    elapsed = t_pred + t_nom
    record_property("detail", f"max relative deviation {dev:.2e} over [0, 5]; {elapsed:.0f} s")
    assert dev <= 1e-9
    assert elapsed < 120.0


# ---------------------------------------------------------------- 5

def test_criterion_05_free_dynamics_unstable(record_property):
    tr, _ = simulate(REFERENCE.replace(mode="free", T=10.0, rf=0))
    ratio = tr.norm_y[-1] / tr.norm_y[0]
    record_property("detail", f"|y(10)|/|y(0)| = {ratio:.3e}")
    assert ratio > 10


# ---------------------------------------------------------------- 6

CRITERION_6 = REFERENCE.replace(mode="delayed_predictor", zeta_mag=0.0, rf=0, T=10.0)


def test_criterion_06_predictor_stabilizes(record_property):
    tr, elapsed = simulate(CRITERION_6)
    rate_y = fit_decay_rate(tr, 1.0, 8.0)
    rate_e = fit_decay_rate(tr, 1.0, 8.0, column="norm_err")
    record_property("detail", f"rate |y| {rate_y:.3f}, rate |yhat - y| {rate_e:.3f}; "
                              f"{elapsed:.0f} s")
    assert rate_y <= -0.3
    assert rate_e <= -0.3
    assert elapsed < 600.0


# ---------------------------------------------------------------- 7

def test_criterion_07_plain_delay_destabilizes(record_property):
    # horizon 6: two comparison windows [3, 4.5] and [4.5, 6] after the transient
    res = sweep_tau(REFERENCE.replace(T=6.0))
    rows = ", ".join(f"{t:.1f}:{r:.3g}" for t, r in zip(res.taus, res.ratios))
    record_property("detail", f"onset tau={res.onset}; ratios {rows}; "
                              f"nominal {res.nominal_ratio:.3g} ({res.nominal_class})")
    assert any(c == "growing" for c in res.classes)
    assert res.nominal_class == "decaying"


# ---------------------------------------------------------------- 8

def test_criterion_08_noise_plateau(record_property):
    zetas = (1e-7, 1e-5, 1e-3)
    traces = [simulate(REFERENCE.replace(mode="delayed_predictor", zeta_mag=z, T=10.0))[0]
              for z in zetas]
    plateaus = [plateau_level(tr, 8.0) for tr in traces]
    err_plateaus = [plateau_level(tr, 8.0, column="norm_err") for tr in traces]
    ratio = plateaus[1] / plateaus[0]
    record_property(
        "detail",
        "plateau |y| on [8,10]: " + ", ".join(f"{p:.3e}" for p in plateaus)
        + f"; ratio(1e-5/1e-7) = {ratio:.3g} (need [10, 1000])"
        + "; |yhat - y| plateaus: " + ", ".join(f"{p:.2e}" for p in err_plateaus),
    )
    assert plateaus[0] < plateaus[1] < plateaus[2]
    assert 10.0 <= ratio <= 1000.0


# ---------------------------------------------------------------- 9

@pytest.mark.skipif(os.environ.get("PARASTAB_LONG") != "1",
                    reason="opt-in long run: set PARASTAB_LONG=1")
def test_criterion_09_mesh_convergence(record_property):
    traces = [simulate(REFERENCE.replace(T=4.0, rf=rf))[0] for rf in (0, 1, 2)]
    d10 = float(np.max(np.abs(traces[1].norm_y - traces[0].norm_y)))
    d21 = float(np.max(np.abs(traces[2].norm_y - traces[1].norm_y)))
    record_property("detail", f"|rf1 - rf0| = {d10:.3e}, |rf2 - rf1| = {d21:.3e}")
    assert d21 < d10


# ---------------------------------------------------------------- 10

def test_criterion_10_spectral_cross_check(record_property):
    start = time.perf_counter()
    p = SpectralParams.default(rho=1.0, kappa=-2.0, tau=0.5, h=1e-3)
    demo = spectral_demo(p, 20.0)
    scalar = solve_dde(DDEParams(rho=1.0, kappa=-2.0, tau=0.5, y0=1.0, h=1e-3), 20.0)
    diff = float(np.max(np.abs(demo.y[:, 0] - scalar.y)))
    late = classify(spectral_demo(SpectralParams.default(tau=1.1), 40.0).y[:, 0])
    elapsed = time.perf_counter() - start
    record_property("detail", f"max |coord 1 - scalar| = {diff:.1e}; tau=1.1 {late}; "
                              f"{elapsed:.2f} s")
    assert diff <= 1e-8
    assert late == "growing"
    assert elapsed < 5.0


# ---------------------------------------------------------------- 11

def test_criterion_11_determinism(record_property, tmp_path):
    def body(path):
        return b"".join(ln for ln in path.read_bytes().splitlines(keepends=True)
                        if not ln.startswith(b"#"))

    first, _ = simulate(CRITERION_6)
    second = run(CRITERION_6)
    paths = tmp_path / "first.csv", tmp_path / "second.csv"
    for trace, path in zip((first, second), paths):
        write_trace_csv(trace, path)
    a, b = body(paths[0]), body(paths[1])
    n_lines = a.count(b"\n")
    record_property("detail", f"{n_lines} lines, bodies byte-identical: {a == b}")
    assert a.startswith(b"t,norm_y,norm_err,norm_u\n")
    assert a == b


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
