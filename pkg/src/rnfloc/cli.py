"""Command-line entry point: ``rnfloc {run,scenario,crlb,oracle,validate}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import energy, harness, metrics, radar, solver
from .errors import LocalizationError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rnfloc", description="Neural-dynamics target localization for distributed MIMO radar.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    run = sub.add_parser("run", help="run a Monte-Carlo experiment from a TOML spec")
    run.add_argument("spec")
    run.add_argument("--output", help="override the output directory")
    run.add_argument("--trials", type=int, help="override trials per point")
    run.add_argument("--workers", type=int, help="override the worker count")
    run.add_argument("--quiet", action="store_true")

    sc = sub.add_parser("scenario", help="print a built-in geometry")
    sc.add_argument("name")
    sc.add_argument("--json", action="store_true")

    cr = sub.add_parser("crlb", help="print root CRLB for every sweep point of a spec")
    cr.add_argument("spec")

    orc = sub.add_parser("oracle", help="compare the relaxed-energy network against the grid oracle")
    orc.add_argument("spec")
    orc.add_argument("--trials", type=int, help="override trials per point")

    val = sub.add_parser("validate", help="run gradient and invariant self-checks")
    val.add_argument("--states", type=int, default=20, help="random states per check")
    val.add_argument("--seed", type=int, default=0)
    return p


def _spec(path: str, **overrides) -> harness.ExperimentSpec:
    if not Path(path).is_file():
        raise _UsageError(f"spec file not found: {path}")
    spec = harness.load_spec(path)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(spec, **overrides) if overrides else spec


def _cmd_run(args) -> int:
    spec = _spec(args.spec, output=args.output, trials=args.trials, workers=args.workers)

    def progress(done, total):
        if not args.quiet and (done == total or done % max(1, total // 20) == 0):
            print(f"\r{done}/{total} trials", end="", file=sys.stderr, flush=True)

    result = harness.run_experiment(spec, progress)
    if not args.quiet:
        print(file=sys.stderr)
    for method in spec.methods:
        print(f"# {method}")
        print(result.sweep_table(method), end="")
    if spec.output:
        print(f"# wrote {spec.output}", file=sys.stderr)
    return EXIT_OK


def _cmd_scenario(args) -> int:
    sc = radar.builtin_scenario(args.name)
    if args.json:
        print(json.dumps(sc.to_dict(), indent=2))
        return EXIT_OK
    print(f"{args.name}: D={sc.dim}, M={sc.m}, N={sc.n}")
    for i, t in enumerate(sc.transmitters, 1):
        print(f"Tx{i}  " + "  ".join(f"{v:g}" for v in t))
    for j, s in enumerate(sc.receivers, 1):
        print(f"Rx{j}  " + "  ".join(f"{v:g}" for v in s))
    print("target  " + "  ".join(f"{v:g}" for v in sc.target))
    return EXIT_OK


def _cmd_crlb(args) -> int:
    spec = _spec(args.spec)
    antenna = spec.antenna_variance is not None
    print("snr_db,root_crlb" + (",sigma2_p" if antenna else ""))
    for row in harness.crlb_sweep(spec):
        line = f"{row['snr_db']!r},{row['root_crlb']!r}"
        print(line + (f",{row['sigma2_p']!r}" if antenna else ""))
    return EXIT_OK


def _cmd_oracle(args) -> int:
    spec = _spec(args.spec, trials=args.trials)
    spec = replace(spec, methods=("rnfnn", "oracle"), output=None)
    result = harness.run_experiment(spec)
    resolution = spec.oracle_coarse_step / 1000.0
    print("point,trial,seed,gap,objective_rnfnn,objective_oracle")
    worst = 0.0
    for o in result.outcomes:
        gap = float(np.linalg.norm(o.estimates["rnfnn"] - o.estimates["oracle"]))
        worst = max(worst, gap)
        sc = harness.trial_scenario(spec, o.seed)
        snr, ant = spec.points[o.point]
        noise = radar.noise_from_snr(sc, snr, k2=spec.k2, antenna_variance=ant)
        meas = radar.simulate_measurements(sc, noise, o.seed)
        if meas.antenna_mode:
            sc = radar.Scenario(meas.observed_transmitters, meas.observed_receivers, sc.target)
            meas = meas.without_antennas()
        f_net = energy.ml_objective(o.estimates["rnfnn"], meas, sc)
        f_orc = energy.ml_objective(o.estimates["oracle"], meas, sc)
        print(f"{o.point},{o.trial},{o.seed},{gap!r},{f_net!r},{f_orc!r}")
    print(f"# max gap {worst:.4g} m (3x final grid resolution = {3 * resolution:g} m)", file=sys.stderr)
    return EXIT_OK


def _fd_gradient(f, x):
    g = np.empty_like(x)
    for i in range(x.size):
        h = 1e-5 * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def validation_checks(states: int = 20, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Self-checks mirroring the package invariants; returns (name, ok, detail)."""
    g = np.random.default_rng(seed)
    sc = radar.builtin_scenario("scenario1-2d")
    noise = radar.noise_from_snr(sc, 10.0, antenna_variance=10.0)
    meas = radar.simulate_measurements(sc, noise, seed)
    plain = meas.without_antennas()
    d, m, n = sc.dim, sc.m, sc.n
    out = []

    worst = [0.0, 0.0, 0.0]
    for _ in range(states):
        u = g.uniform(-400, 400, d)
        h = np.concatenate(energy.feasible_ranges(u, sc.transmitters, sc.receivers)) + g.normal(0, 20, m + n)
        x = np.concatenate([u, h])
        worst[0] = max(worst[0], _rel(energy.rnfnn_derivative(x, plain, sc, 1e-5),
                                      -_fd_gradient(lambda z: energy.rnf_energy(z, plain, sc, 1e-5), x)))
        y = np.concatenate([x, g.uniform(0, 1, m + n)])
        a = energy.lpnn_derivative(y, plain, sc, 1e-5)
        fd = _fd_gradient(lambda z: energy.augmented_lagrangian(z, plain, sc, 1e-5), y)
        worst[1] = max(worst[1], _rel(a[:d + m + n], -fd[:d + m + n]), _rel(a[d + m + n:], fd[d + m + n:]))
        xa = np.concatenate([u, (meas.observed_transmitters + g.normal(0, 3, (m, d))).ravel(),
                             (meas.observed_receivers + g.normal(0, 3, (n, d))).ravel(), h])
        worst[2] = max(worst[2], _rel(energy.extended_rnfnn_derivative(xa, meas, 1e-5),
                                      -_fd_gradient(lambda z: energy.extended_rnf_energy(z, meas, 1e-5, 0.5), xa)))
    for name, err in zip(("gradient rnfnn", "gradient lpnn", "gradient rnfnn-antenna"), worst):
        out.append((name, err < 1e-6, f"max relative error {err:.2e}"))

    indefinite = True
    for _ in range(states):
        for hess in energy.multiplier_term_hessians(g.uniform(0.01, 1, m), g.uniform(0.01, 1, n), d):
            ev = np.linalg.eigvalsh(hess)
            indefinite &= bool(ev[0] < 0 < ev[-1])
    out.append(("multiplier Hessians indefinite", indefinite, ""))

    gaps = [abs(radar.average_snr_db(radar.noise_from_snr(sc, s)) - s) for s in np.linspace(-30, 30, 13)]
    out.append(("snr round trip", max(gaps) < 1e-9, f"max gap {max(gaps):.1e} dB"))
    wsum = abs(meas.weights.sum() - 1) + abs(meas.antenna_weights_t.sum() - 1) + abs(meas.antenna_weights_s.sum() - 1)
    out.append(("weight normalization", wsum < 3e-12, f"{wsum:.1e}"))

    clean = radar.simulate_measurements(sc, radar.noise_from_snr(sc, 0.0).scaled(1e-30), seed)
    x_true = np.concatenate([sc.target, *energy.feasible_ranges(sc.target, sc.transmitters, sc.receivers)])
    eq = np.abs(energy.rnfnn_derivative(x_true, clean, sc, 0.1)).max()
    out.append(("equilibrium at truth", eq < 1e-6, f"max |dx/dt| {eq:.1e}"))
    ok_rm = (metrics.rm_count("rnfnn", 3, 3, 2, 1) == 57 and metrics.rm_count("mlpnn", 3, 3, 2, 1) == 81)
    out.append(("multiplication counts", ok_rm, ""))

    res = solver.solve_rnfnn(clean, sc, solver.SolverConfig(), seed)
    err = float(np.linalg.norm(res.estimate - sc.target))
    out.append(("noise-free solve", res.converged and err < 1e-3, f"error {err:.1e} m"))
    return out


def _cmd_validate(args) -> int:
    checks = validation_checks(args.states, args.seed)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_RUNTIME


_COMMANDS = {"run": _cmd_run, "scenario": _cmd_scenario, "crlb": _cmd_crlb,
             "oracle": _cmd_oracle, "validate": _cmd_validate}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (LocalizationError, OSError) as exc:
        print(f"rnfloc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
