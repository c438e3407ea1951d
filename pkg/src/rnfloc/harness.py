"""Monte-Carlo experiment runner.

A sweep point is one (SNR, antenna variance) pair.  Every trial draws its
own 63-bit seed from ``(master_seed, point, trial)``; measurements, random
targets/geometries and per-method initial states are all derived from that
seed, so a single trial can be replayed from its row in ``trials_*.csv``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, radar, rng, solver
from .errors import InvalidInputError

METHODS = ("rnfnn", "mlpnn", "lpnn", "oracle")
TRIAL_HEADER = ["point", "trial", "seed", "err", "iters", "converged"]
DEFAULT_TARGET_BOX = {2: [[-1000.0, 1000.0], [-1000.0, 1000.0]],
                      3: [[-1000.0, 1000.0], [-1000.0, 1000.0], [0.0, 1000.0]]}


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: dict
    snr_sweep: tuple = ()
    antenna_variance: tuple | None = None
    methods: tuple = ("rnfnn", "mlpnn")
    trials: int = 500
    master_seed: int = 0
    solver: solver.SolverConfig = field(default_factory=solver.SolverConfig)
    target_mode: str = "fixed"
    target_box: tuple | None = None
    k2: float = radar.DEFAULT_K2
    output: str | None = None
    workers: int = 1
    trials_table: bool = True
    oracle_bounds: float | tuple = 400.0
    oracle_coarse_step: float = 10.0

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if not self.methods:
            raise InvalidInputError("methods must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise InvalidInputError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if not self.snr_sweep:
            raise InvalidInputError("snr sweep must be nonempty")
        if self.target_mode not in ("fixed", "uniform-box"):
            raise InvalidInputError("target_mode must be 'fixed' or 'uniform-box'")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")
        if self.antenna_variance is not None and any(v < 0 for v in self.antenna_variance):
            raise InvalidInputError("antenna variances must be >= 0")

    @property
    def points(self) -> list[tuple[float, float | None]]:
        ant = self.antenna_variance if self.antenna_variance is not None else (None,)
        return [(float(s), None if a is None else float(a)) for s, a in itertools.product(self.snr_sweep, ant)]

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["solver"] = asdict(self.solver)
        return doc


def _tuple(v):
    if v is None:
        return None
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def spec_from_dict(doc: dict) -> ExperimentSpec:
    """Build a spec from the parsed sections ``scenario, noise, solver, sweep, output``."""
    unknown = set(doc) - {"scenario", "noise", "solver", "sweep", "output"}
    if unknown:
        raise InvalidInputError(f"unknown sections: {sorted(unknown)}")
    sc = dict(doc.get("scenario", {}))
    if not sc:
        raise InvalidInputError("missing [scenario] section")
    target_mode = sc.pop("target_mode", "fixed")
    target_box = sc.pop("target_box", None)
    noise = doc.get("noise", {})
    sweep = doc.get("sweep", {})
    out = doc.get("output", {})
    snr = _tuple(sweep.get("snr_db", noise.get("snr_db")))
    ant = _tuple(sweep.get("antenna_variance", noise.get("antenna_variance")))
    return ExperimentSpec(
        scenario=sc, snr_sweep=snr or (), antenna_variance=ant,
        methods=tuple(sweep.get("methods", ("rnfnn", "mlpnn"))),
        trials=int(sweep.get("trials", 500)), master_seed=int(sweep.get("master_seed", 0)),
        solver=solver.SolverConfig.from_dict(doc.get("solver", {})),
        target_mode=target_mode,
        target_box=None if target_box is None else tuple(map(tuple, target_box)),
        k2=float(noise.get("k2", radar.DEFAULT_K2)),
        output=out.get("dir"), workers=int(out.get("workers", 1)),
        trials_table=bool(out.get("trials_table", True)),
        oracle_bounds=sweep.get("oracle_bounds", 400.0),
        oracle_coarse_step=float(sweep.get("oracle_coarse_step", 10.0)))


def load_spec(path) -> ExperimentSpec:
    return spec_from_dict(radar.load_toml(path))


# ------------------------------------------------------------------ trials


@dataclass
class TrialOutcome:
    point: int
    trial: int
    seed: int
    truth: np.ndarray
    estimates: dict
    iterations: dict
    converged: dict
    root_crlb_sq: float


def trial_seed(spec: ExperimentSpec, point: int, trial: int) -> int:
    return rng.derive_seed(spec.master_seed, point, trial)


def trial_scenario(spec: ExperimentSpec, seed: int) -> radar.Scenario:
    """Geometry and target for one trial."""
    cfg = spec.scenario
    if "random_circle" in cfg:
        rc = cfg["random_circle"]
        return radar.random_circle_scenario(int(rc["m"]), int(rc["n"]), float(rc["radius"]), seed)
    base = radar.scenario_from_config(cfg)
    if spec.target_mode == "fixed":
        return base
    box = np.asarray(spec.target_box or DEFAULT_TARGET_BOX[base.dim], dtype=float)
    g = rng.generator(seed, rng.TARGET)
    return base.with_target(g.uniform(box[:, 0], box[:, 1]))


def run_trial(spec: ExperimentSpec, point: int, trial: int) -> TrialOutcome:
    """One Monte-Carlo trial: draw data once, run every method on it."""
    snr, ant = spec.points[point]
    seed = trial_seed(spec, point, trial)
    sc = trial_scenario(spec, seed)
    noise = radar.noise_from_snr(sc, snr, k2=spec.k2, antenna_variance=ant)
    meas = radar.simulate_measurements(sc, noise, seed)
    if ant is not None:
        _, root = metrics.crlb_with_antenna_errors(sc, noise)
        # methods without antenna states treat the observed positions as exact
        plain_sc = radar.Scenario(meas.observed_transmitters, meas.observed_receivers, sc.target)
        plain = meas.without_antennas()
    else:
        _, root = metrics.crlb(sc, noise)
        plain_sc, plain = sc, meas
    est, its, conv = {}, {}, {}
    for method in spec.methods:
        mseed = (seed, rng.method_stream(method))
        if method == "oracle":
            est[method] = solver.oracle_ml_estimate(plain, plain_sc, spec.oracle_bounds,
                                                    spec.oracle_coarse_step)
            its[method], conv[method] = 0, True
            continue
        if method == "rnfnn":
            res = (solver.solve_rnfnn_antenna(meas, spec.solver, mseed) if ant is not None
                   else solver.solve_rnfnn(meas, sc, spec.solver, mseed))
        elif method == "mlpnn":
            res = solver.solve_lpnn(plain, plain_sc, spec.solver, mseed)
        else:
            res = solver.solve_lpnn(plain.with_uniform_weights(), plain_sc, spec.solver, mseed)
        est[method], its[method], conv[method] = res.estimate, res.iterations, res.converged
    return TrialOutcome(point, trial, seed, sc.target.copy(), est, its, conv, root ** 2)


def _run_chunk(args):
    spec, items = args
    return [run_trial(spec, p, t) for p, t in items]


def _execute(spec: ExperimentSpec, progress=None) -> list[TrialOutcome]:
    items = [(p, t) for p in range(len(spec.points)) for t in range(spec.trials)]
    if spec.workers == 1:
        out = []
        for i, (p, t) in enumerate(items):
            out.append(run_trial(spec, p, t))
            if progress:
                progress(i + 1, len(items))
        return out
    size = max(1, len(items) // (spec.workers * 8))
    chunks = [(spec, items[i:i + size]) for i in range(0, len(items), size)]
    out = []
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        for block in pool.map(_run_chunk, chunks):
            out.extend(block)
            if progress:
                progress(len(out), len(items))
    return sorted(out, key=lambda o: (o.point, o.trial))


# ----------------------------------------------------------------- results


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    reports: dict  # method -> list of MetricsReport, one per point
    outcomes: list
    wall_time: float

    def sweep_table(self, method: str) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        header = list(metrics.SWEEP_HEADER)
        if self.spec.antenna_variance is not None:
            header.append("sigma2_p")
        wr.writerow(header)
        for rep in self.reports[method]:
            wr.writerow(rep.csv_row())
        return buf.getvalue()

    def trials_table(self, method: str) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TRIAL_HEADER)
        for o in self.outcomes:
            err = float(np.linalg.norm(o.estimates[method] - o.truth))
            wr.writerow([o.point, o.trial, o.seed, repr(err), o.iterations[method],
                         int(o.converged[method])])
        return buf.getvalue()

    def errors(self, method: str, point: int) -> np.ndarray:
        return np.array([np.linalg.norm(o.estimates[method] - o.truth)
                         for o in self.outcomes if o.point == point])

    def write(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for method in self.spec.methods:
            (out / f"sweep_{method}.csv").write_text(self.sweep_table(method))
            if self.spec.trials_table:
                (out / f"trials_{method}.csv").write_text(self.trials_table(method))
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))
        return out

    def manifest(self) -> dict:
        import numba

        from . import __version__
        return {
            "spec": self.spec.to_dict(),
            "points": [{"index": i, "snr_db": s, "sigma2_p": a} for i, (s, a) in enumerate(self.spec.points)],
            "seed_derivation": "trial seed = derive_seed(master_seed, point, trial); "
                               "method init key = (trial seed, method_stream(method))",
            "method_streams": {m: rng.method_stream(m) for m in self.spec.methods},
            "reports": {m: [_report_doc(r) for r in reps] for m, reps in self.reports.items()},
            "versions": {"rnfloc": __version__, "numpy": np.__version__, "numba": numba.__version__,
                         "python": platform.python_version()},
            "wall_time_s": self.wall_time,
        }


def _report_doc(rep: metrics.MetricsReport) -> dict:
    doc = rep.to_dict()
    doc.pop("ecdf")
    return doc


def run_experiment(spec: ExperimentSpec, progress=None) -> ExperimentResult:
    """Run every trial of every sweep point and aggregate per method.

    Aggregation walks outcomes in (point, trial) order, so results do not
    depend on the worker count.
    """
    t0 = time.perf_counter()
    outcomes = _execute(spec, progress)
    sc0 = trial_scenario(spec, trial_seed(spec, 0, 0))
    reports = {}
    for method in spec.methods:
        rm = {}
        if method != "oracle":
            rm = {"per_iteration": metrics.rm_count(method, sc0.m, sc0.n, sc0.dim, 1)}
        reps = []
        for p, (snr, ant) in enumerate(spec.points):
            rows = [o for o in outcomes if o.point == p]
            reps.append(metrics.summarize(
                [o.estimates[method] for o in rows], np.array([o.truth for o in rows]),
                [o.iterations[method] for o in rows], [o.converged[method] for o in rows],
                root_crlb=float(np.sqrt(np.mean([o.root_crlb_sq for o in rows]))),
                snr_db=snr, sigma2_p=ant, rm_counts=rm))
        reports[method] = reps
    result = ExperimentResult(spec, reports, outcomes, time.perf_counter() - t0)
    if spec.output:
        result.write(spec.output)
    return result


def crlb_sweep(spec: ExperimentSpec) -> list[dict]:
    """Root CRLB per sweep point for the experiment's first-trial geometry."""
    rows = []
    for p, (snr, ant) in enumerate(spec.points):
        sc = trial_scenario(spec, trial_seed(spec, p, 0))
        noise = radar.noise_from_snr(sc, snr, k2=spec.k2, antenna_variance=ant)
        bound = metrics.crlb_with_antenna_errors if ant is not None else metrics.crlb
        rows.append({"snr_db": snr, "sigma2_p": ant, "root_crlb": bound(sc, noise)[1]})
    return rows
