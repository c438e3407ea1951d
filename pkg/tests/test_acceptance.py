"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible with ``-s`` or in
the captured log) before asserting.
"""

import os
from dataclasses import replace

import numpy as np
import pytest
from conftest import central_gradient

from rnfloc import energy, harness, metrics, radar, solver

WORKERS = os.cpu_count() or 1
CFG = solver.SolverConfig()


def report(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'}  {label}: {detail}")


def spec(name, snrs, methods, trials, seed, **kw):
    return harness.ExperimentSpec(scenario={"name": name}, snr_sweep=tuple(snrs), methods=methods,
                                  trials=trials, master_seed=seed, workers=WORKERS, **kw)


SPEC_2D = spec("scenario1-2d", (0.0, 10.0, 20.0, 30.0), ("rnfnn", "mlpnn"), 500, 2024)


@pytest.fixture(scope="module")
def run_2d():
    return harness.run_experiment(SPEC_2D)


def test_01_noise_free_convergence(sc2d, capsys):
    noise = radar.noise_from_snr(sc2d, 0.0)
    r = radar.range_matrix(sc2d.transmitters, sc2d.receivers, sc2d.target)
    meas = radar.MeasurementSet(br=r, weights=radar.normalized_weights(noise.per_pair_variance))
    rnf = [solver.solve_rnfnn(meas, sc2d, CFG, (1, k)) for k in range(100)]
    lp = [solver.solve_lpnn(meas, sc2d, CFG, (1, k)) for k in range(100)]
    err_rnf = max(np.linalg.norm(x.estimate - sc2d.target) for x in rnf)
    err_lp = max(np.linalg.norm(x.estimate - sc2d.target) for x in lp)
    # the truth is itself an equilibrium of the relaxed flow
    x_true = np.concatenate([sc2d.target, *energy.feasible_ranges(sc2d.target, sc2d.transmitters,
                                                                   sc2d.receivers)])
    rho = solver.effective_penalty(rnf[0], CFG)
    eq = float(np.abs(energy.rnfnn_derivative(x_true, meas, sc2d, rho)).max())
    ok = err_rnf < 1e-3 and err_lp < 1e-2 and eq < 1e-9 and all(x.converged for x in rnf + lp)
    report(capsys, "1 noise-free convergence", ok,
           f"max error rnfnn {err_rnf:.2e} m, mlpnn {err_lp:.2e} m over 100 inits; "
           f"|dx/dt| at truth {eq:.1e}")
    assert ok


@pytest.mark.slow
def test_02_crlb_attainment_2d(run_2d, capsys):
    lines, ok = [], True
    for method in ("rnfnn", "mlpnn"):
        for rep in run_2d.reports[method]:
            ratio = rep.rmse / rep.root_crlb
            ok &= abs(ratio - 1.0) <= 0.15
            lines.append(f"{method}@{rep.snr_db:g}dB={ratio:.3f}")
    report(capsys, "2 2-D RMSE/CRLB within 15%", ok, ", ".join(lines))
    assert ok


@pytest.mark.slow
def test_03_crlb_attainment_3d(capsys):
    res = harness.run_experiment(spec("scenario2-3d", (10.0, 20.0, 30.0), ("rnfnn",), 500, 2025))
    ratios = [rep.rmse / rep.root_crlb for rep in res.reports["rnfnn"]]
    ok = all(abs(r - 1.0) <= 0.15 for r in ratios)
    report(capsys, "3 3-D RMSE/CRLB within 15%", ok, ", ".join(f"{r:.3f}" for r in ratios))
    assert ok


@pytest.mark.slow
def test_04_iteration_ordering(capsys):
    res = harness.run_experiment(spec("scenario1-2d", (-20.0, 0.0, 20.0), ("rnfnn", "mlpnn"), 200, 2026))
    rnf = [r.mean_iterations for r in res.reports["rnfnn"]]
    lp = [r.mean_iterations for r in res.reports["mlpnn"]]
    ok = all(a < b for a, b in zip(rnf, lp)) and lp[0] / rnf[0] >= 2.0
    detail = ", ".join(f"{s:g}dB {a:.0f} vs {b:.0f}" for s, a, b in zip((-20, 0, 20), rnf, lp))
    report(capsys, "4 mean iterations rnfnn < mlpnn", ok, f"{detail}; ratio@-20dB {lp[0] / rnf[0]:.2f}")
    assert ok


@pytest.mark.slow
def test_05_approximation_error_cdf(run_2d, capsys):
    point = SPEC_2D.snr_sweep.index(30.0)
    rows = [o for o in run_2d.outcomes if o.point == point]
    gap_01 = [np.linalg.norm(o.estimates["rnfnn"] - o.estimates["mlpnn"]) for o in rows]
    stiff = replace(SPEC_2D, methods=("rnfnn",), solver=replace(CFG, rho=0.2), workers=1)
    gap_02 = [np.linalg.norm(harness.run_trial(stiff, point, o.trial).estimates["rnfnn"] - o.estimates["mlpnn"])
              for o in rows]
    q = [(metrics.ecdf_quantile(gap_02, p), metrics.ecdf_quantile(gap_01, p)) for p in (0.5, 0.9)]
    ok = all(a <= b for a, b in q)
    report(capsys, "5 approximation-error ECDF", ok,
           ", ".join(f"q{p}: rho=0.2 {a:.2e} <= rho=0.1 {b:.2e}" for p, (a, b) in zip((50, 90), q)))
    assert ok


def test_06_hessian_indefiniteness(capsys):
    g = np.random.default_rng(6)
    ok, count = True, 0
    for _ in range(100):
        m, n, d = int(g.integers(1, 11)), int(g.integers(1, 11)), int(g.choice([2, 3]))
        lam_t = g.uniform(1e-3, 10.0, m)
        lam_s = g.uniform(1e-3, 10.0, n)
        for hess in energy.multiplier_term_hessians(lam_t, lam_s, d):
            ev = np.linalg.eigvalsh(hess)
            ok &= bool(ev[0] < 0 < ev[-1])
            count += 1
    report(capsys, "6 multiplier Hessians indefinite", ok, f"{count} matrices")
    assert ok


def test_07_gradient_consistency(sc2d, capsys):
    g = np.random.default_rng(7)
    noise = radar.noise_from_snr(sc2d, 10.0, antenna_variance=10.0)
    meas = radar.simulate_measurements(sc2d, noise, 7)
    plain = meas.without_antennas()
    d, m, n = sc2d.dim, sc2d.m, sc2d.n
    # penalties as the solver applies them in meters
    unit = sc2d.scale / solver.AUTO_UNIT_DIVISOR
    rho, c = CFG.rho / unit ** 2, CFG.c / unit ** 2
    worst = {"rnfnn": 0.0, "lpnn": 0.0, "rnfnn-antenna": 0.0}

    def rel(a, b):
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))

    for _ in range(100):
        u = g.uniform(-400, 400, d)
        h = np.concatenate(energy.feasible_ranges(u, sc2d.transmitters, sc2d.receivers)) + g.normal(0, 20, m + n)
        x = np.concatenate([u, h])
        fd = central_gradient(lambda z: energy.rnf_energy(z, plain, sc2d, rho), x)
        worst["rnfnn"] = max(worst["rnfnn"], rel(energy.rnfnn_derivative(x, plain, sc2d, rho), -fd))
        y = np.concatenate([x, g.uniform(0, 1, m + n)])
        fd = central_gradient(lambda z: energy.augmented_lagrangian(z, plain, sc2d, c), y)
        fd[d + m + n:] *= -1  # multipliers ascend
        worst["lpnn"] = max(worst["lpnn"], rel(energy.lpnn_derivative(y, plain, sc2d, c), -fd))
        xa = np.concatenate([u, (meas.observed_transmitters + g.normal(0, 3, (m, d))).ravel(),
                             (meas.observed_receivers + g.normal(0, 3, (n, d))).ravel(), h])
        fd = central_gradient(lambda z: energy.extended_rnf_energy(z, meas, rho, 0.5), xa)
        worst["rnfnn-antenna"] = max(worst["rnfnn-antenna"],
                                     rel(energy.extended_rnfnn_derivative(xa, meas, rho), -fd))
    ok = all(v < 1e-6 for v in worst.values())
    report(capsys, "7 gradient consistency", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def test_08_oracle_equivalence(sc2d, capsys):
    noise = radar.noise_from_snr(sc2d, 20.0)
    resolution = 10.0 / 10 ** 3
    offsets = np.arange(-3, 4) * resolution
    neighbourhood = np.stack(np.meshgrid(offsets, offsets, indexing="ij"), -1).reshape(-1, 2)
    worst_gap, ok = 0.0, True
    for t in range(20):
        meas = radar.simulate_measurements(sc2d, noise, (8, t))
        net = solver.solve_rnfnn(meas, sc2d, CFG, (8, t)).estimate
        orc = solver.oracle_ml_estimate(meas, sc2d, 400.0, 10.0, 3)
        gap = float(np.linalg.norm(net - orc))
        f_orc = energy.ml_objective(orc, meas, sc2d)
        # slack: how much the objective can rise within the gap tolerance box
        slack = max(energy.ml_objective(orc + o, meas, sc2d) for o in neighbourhood) - f_orc
        ok &= gap <= 3 * resolution and energy.ml_objective(net, meas, sc2d) <= f_orc + slack
        worst_gap = max(worst_gap, gap)
    report(capsys, "8 oracle equivalence", ok, f"max gap {worst_gap:.4f} m (limit {3 * resolution:g} m)")
    assert ok


@pytest.mark.slow
def test_09_antenna_error_efficiency(capsys):
    res = harness.run_experiment(spec("scenario2-3d", (10.0, 20.0, 30.0), ("rnfnn",), 500, 2027,
                                      antenna_variance=(10.0,)))
    reps = res.reports["rnfnn"]
    ratios = [r.rmse / r.root_crlb for r in reps]
    ok = all(abs(r - 1.0) <= 0.20 for r in ratios)
    conv = min(r.convergence_rate for r in reps)
    report(capsys, "9 antenna-error RMSE/joint CRLB within 20%", ok,
           ", ".join(f"{r.snr_db:g}dB {x:.3f}" for r, x in zip(reps, ratios)) + f"; min conv rate {conv:.3f}")
    assert ok


def test_10_multiplication_counts(capsys):
    ok = metrics.rm_count("rnfnn", 3, 3, 2, 1) == 57 and metrics.rm_count("mlpnn", 3, 3, 2, 1) == 81
    ok &= all(metrics.rm_count("rnfnn", 3, 3, 2, i) == 57 * i and metrics.rm_count("mlpnn", 3, 3, 2, i) == 81 * i
              for i in (10, 1000, 123456))
    cases = [(m, n, d) for m in range(1, 11) for n in range(1, 11) for d in (2, 3)]
    ok &= all(metrics.rm_count("mlpnn", m, n, d) - metrics.rm_count("lpnn", m, n, d) == m * n
              for m, n, d in cases)
    report(capsys, "10 multiplication counts", ok, f"57/81 per iteration, weighting overhead MN on {len(cases)} shapes")
    assert ok


def test_11_determinism(tmp_path, capsys):
    s = spec("scenario1-2d", (0.0, 20.0), ("rnfnn", "mlpnn", "lpnn"), 25, 11,
             antenna_variance=(0.0, 5.0))
    a = harness.run_experiment(replace(s, output=str(tmp_path / "a")))
    b = harness.run_experiment(replace(s, output=str(tmp_path / "b")))
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for m in s.methods for f in (f"sweep_{m}.csv", f"trials_{m}.csv"))
    ok = same and all(a.sweep_table(m) == b.sweep_table(m) for m in s.methods)
    report(capsys, "11 determinism", ok, "sweep and trial tables byte-identical across two runs")
    assert ok
