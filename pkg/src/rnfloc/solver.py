"""Explicit-Euler emulation of the localization networks.

Integration runs in normalized coordinates: every length is divided by a
length unit (default: the largest antenna coordinate over 35) while the
penalty ``rho`` and amplitude ``c`` keep their configured values in those
units.  The stopping quantity ``e`` is reported in squared meters per unit
time so the threshold ``eps1`` keeps a physical meaning.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import rng
from .energy import ANT, LPNN, RNF, field_kernel
from .errors import InvalidInputError
from .radar import MeasurementSet, Scenario, SeedLike, _seed_key

MODES = {"rnfnn": RNF, "lpnn": LPNN, "rnfnn-antenna": ANT}
AUTO_UNIT_DIVISOR = 35.0
TRAJECTORY_EVERY = 10
_CHUNK = 200_000

CONVERGED, DIVERGED, RUNNING = 0, 1, 2


@dataclass(frozen=True)
class SolverConfig:
    """Integrator settings.  ``dt=None`` picks a stable step from the initial state."""

    rho: float = 0.1
    c: float = 1.0
    dt: float | None = None
    eps1: float = 1e-10
    max_iters: int = 1_000_000
    init_box: float = 400.0
    record_trajectory: bool = False
    restart_on_divergence: bool = True
    max_restarts: int = 5
    length_unit: float | None = None
    divergence_e: float = 1e16

    def __post_init__(self):
        for name in ("rho", "c", "eps1", "init_box", "divergence_e"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.dt is not None and not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        if self.length_unit is not None and not self.length_unit > 0:
            raise InvalidInputError("length_unit must be positive")
        if int(self.max_iters) < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if int(self.max_restarts) < 0:
            raise InvalidInputError("max_restarts must be >= 0")

    @classmethod
    def from_dict(cls, cfg: dict) -> "SolverConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(cfg) - known
        if extra:
            raise InvalidInputError(f"unknown solver keys: {sorted(extra)}")
        cfg = dict(cfg)
        if cfg.get("dt") == "auto":
            cfg["dt"] = None
        if "max_iters" in cfg:
            cfg["max_iters"] = int(cfg["max_iters"])
        return cls(**cfg)


@dataclass
class SolveResult:
    estimate: np.ndarray
    iterations: int
    converged: bool
    final_e: float
    restarts: int
    wall_time: float
    mode: str
    state: np.ndarray = field(repr=False)
    length_unit: float = 1.0
    dt: float = float("nan")
    trajectory: np.ndarray | None = field(default=None, repr=False)
    message: str = ""


@numba.njit(cache=True)
def _record(traj, row, k, e, x):
    traj[row, 0] = k
    traj[row, 1] = e
    for i in range(x.shape[0]):
        traj[row, 2 + i] = x[i]


@numba.njit(cache=True)
def euler_kernel(mode, x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, dt, thr,
                 div_thr, k, k_stop, rec_every, traj, nrec):
    """Advance ``x`` in place from step ``k`` until convergence, divergence or ``k_stop``."""
    m, d = tx.shape
    n = rx.shape[0]
    a = np.empty_like(x)
    ft, fr = np.empty(m), np.empty(n)
    diff_t, diff_r = np.empty((m, d)), np.empty((n, d))
    e = np.inf
    while k < k_stop:
        k += 1
        field_kernel(mode, x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, a,
                     ft, fr, diff_t, diff_r)
        e = 0.0
        for i in range(x.shape[0]):
            e += a[i] * a[i]
        if not e <= div_thr:  # also catches NaN
            return k, e, DIVERGED, nrec
        for i in range(x.shape[0]):
            x[i] += dt * a[i]
        if rec_every > 0 and k % rec_every == 0 and nrec < traj.shape[0]:
            _record(traj, nrec, k, e, x)
            nrec += 1
        if e < thr:
            return k, e, CONVERGED, nrec
    return k, e, RUNNING, nrec


# One entry point per mode so the mode branches fold away at compile time.
@numba.njit(cache=True)
def _euler_rnf(x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, dt, thr, div_thr,
               k, k_stop, rec, traj):
    return euler_kernel(RNF, x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, dt, thr,
                        div_thr, k, k_stop, rec, traj, 0)


@numba.njit(cache=True)
def _euler_lpnn(x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, dt, thr, div_thr,
               k, k_stop, rec, traj):
    return euler_kernel(LPNN, x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, dt, thr,
                        div_thr, k, k_stop, rec, traj, 0)


@numba.njit(cache=True)
def _euler_ant(x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, dt, thr, div_thr,
               k, k_stop, rec, traj):
    return euler_kernel(ANT, x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, dt, thr,
                        div_thr, k, k_stop, rec, traj, 0)


_EULER = {RNF: _euler_rnf, LPNN: _euler_lpnn, ANT: _euler_ant}


# ------------------------------------------------------------- geometry


@dataclass(frozen=True)
class _Problem:
    """Everything the kernel needs, already in normalized units."""

    mode: int
    dim: int
    m: int
    n: int
    unit: float
    br: np.ndarray
    w: np.ndarray
    tx: np.ndarray
    rx: np.ndarray
    tobs: np.ndarray
    robs: np.ndarray
    wt: np.ndarray
    wr: np.ndarray
    free_t: np.ndarray
    free_r: np.ndarray


def _free_mask(var, size) -> np.ndarray:
    """1.0 for antennas whose position may move, 0.0 for exactly known ones."""
    if var is None:
        return np.ones(size)
    return (np.asarray(var) > 0).astype(float)


def _length_unit(tx, rx, config: SolverConfig) -> float:
    if config.length_unit is not None:
        return float(config.length_unit)
    scale = max(np.abs(tx).max(), np.abs(rx).max())
    return float(scale / AUTO_UNIT_DIVISOR) if scale > 0 else 1.0


def _problem(mode: int, meas: MeasurementSet, scenario: Scenario | None,
             config: SolverConfig) -> _Problem:
    if mode == ANT:
        tx, rx = meas.observed_transmitters, meas.observed_receivers
        wt, wr = meas.antenna_weights_t, meas.antenna_weights_s
        noise = meas.noise
        free_t = _free_mask(None if noise is None else noise.antenna_variance_t, tx.shape[0])
        free_r = _free_mask(None if noise is None else noise.antenna_variance_s, rx.shape[0])
    else:
        tx, rx = scenario.transmitters, scenario.receivers
        wt = wr = np.zeros(1)
        free_t = free_r = np.ones(1)
    if meas.br.shape != (tx.shape[0], rx.shape[0]):
        raise InvalidInputError("measurement shape does not match the antenna count")
    unit = _length_unit(tx, rx, config)
    txn = np.ascontiguousarray(tx / unit)
    rxn = np.ascontiguousarray(rx / unit)
    if mode == ANT:
        tobs, robs = txn, rxn
    else:
        tobs = robs = np.zeros((1, tx.shape[1]))
    return _Problem(mode, tx.shape[1], tx.shape[0], rx.shape[0], unit,
                    np.ascontiguousarray(meas.br / unit), np.ascontiguousarray(meas.weights),
                    txn, rxn, tobs, robs, np.ascontiguousarray(wt), np.ascontiguousarray(wr),
                    free_t, free_r)


def state_size(mode: int, d: int, m: int, n: int) -> int:
    if mode == RNF:
        return d + m + n
    if mode == LPNN:
        return d + 2 * (m + n)
    return d + (d + 1) * (m + n)


def _range_offset(mode: int, d: int, m: int, n: int) -> int:
    return d + (m + n) * d if mode == ANT else d


def _to_meters(x: np.ndarray, mode: int, d: int, m: int, n: int, unit: float) -> np.ndarray:
    """Rescale length entries; multipliers are left in normalized units."""
    y = x * unit
    if mode == LPNN:
        y[d + m + n:] = x[d + m + n:]
    return y


def _draw_position(seed: SeedLike, stream: tuple, d: int, box: float) -> np.ndarray:
    return rng.generator(*_seed_key(seed), *stream).uniform(-box, box, d)


def _fill_ranges(x: np.ndarray, mode: int, u, tx, rx) -> None:
    d, m, n = len(u), tx.shape[0], rx.shape[0]
    x[:d] = u
    oh = _range_offset(mode, d, m, n)
    x[oh:oh + m] = np.linalg.norm(u - tx, axis=1)
    x[oh + m:oh + m + n] = np.linalg.norm(u - rx, axis=1)


def _initial_vector(prob: _Problem, config: SolverConfig, seed: SeedLike,
                    restart: int = 0, lambdas: np.ndarray | None = None) -> np.ndarray:
    d, m, n = prob.dim, prob.m, prob.n
    stream = (rng.INIT,) if restart == 0 else (rng.RESTART, restart)
    u0 = _draw_position(seed, stream, d, config.init_box) / prob.unit
    x = np.zeros(state_size(prob.mode, d, m, n))
    if prob.mode == ANT:
        x[d:d + m * d] = prob.tx.ravel()
        x[d + m * d:d + (m + n) * d] = prob.rx.ravel()
    _fill_ranges(x, prob.mode, u0, prob.tx, prob.rx)
    if prob.mode == LPNN:
        if lambdas is None:
            lambdas = rng.generator(*_seed_key(seed), rng.INIT, 1).uniform(0.0, 1.0, m + n)
        x[d + m + n:] = lambdas
    return x


def init_state(geometry, meas: MeasurementSet, config: SolverConfig, seed: SeedLike,
               mode: str = "rnfnn") -> np.ndarray:
    """Initial network state in meters (multipliers dimensionless).

    ``geometry`` is a :class:`Scenario` or, in antenna mode, may be ``None``
    (the observed antenna positions in ``meas`` are used).
    """
    code = _mode_code(mode)
    prob = _problem(code, meas, geometry, config)
    return _to_meters(_initial_vector(prob, config, seed), code, prob.dim, prob.m, prob.n, prob.unit)


def _mode_code(mode: str) -> int:
    try:
        return MODES[mode]
    except KeyError:
        raise InvalidInputError(f"unknown mode {mode!r}; expected one of {sorted(MODES)}") from None


def stable_step(prob: _Problem, x: np.ndarray, gain: float) -> float:
    """Euler step ``1/L`` from a curvature bound ``L`` at state ``x`` (normalized units).

    The constraint part of the curvature is ``gain/2`` times the largest
    eigenvalue of the constraint-gradient Gram matrix; the weighted range
    misfit contributes at most 2.
    """
    d, m, n = prob.dim, prob.m, prob.n
    u = x[:d]
    if prob.mode == ANT:
        pos = np.vstack([x[d:d + (m + n) * d].reshape(m + n, d)])
    else:
        pos = np.vstack([prob.tx, prob.rx])
    oh = _range_offset(prob.mode, d, m, n)
    h = x[oh:oh + m + n]
    diff = u - pos
    gram = 4.0 * diff @ diff.T + np.diag(4.0 * h ** 2)
    if prob.mode == ANT:
        free = np.concatenate([prob.free_t, prob.free_r])
        gram += np.diag(4.0 * free * (diff ** 2).sum(1))
    bound = 0.5 * gain * float(np.linalg.eigvalsh(gram)[-1]) + 2.0
    if prob.mode == LPNN:
        bound += 2.0 * float(np.abs(x[d + m + n:]).sum())
    if prob.mode == ANT:
        bound += float(max((prob.wt * prob.free_t).max(), (prob.wr * prob.free_r).max()))
    return 1.0 / bound


def _solve(mode: int, meas: MeasurementSet, scenario: Scenario | None,
           config: SolverConfig, seed: SeedLike) -> SolveResult:
    t0 = time.perf_counter()
    prob = _problem(mode, meas, scenario, config)
    gain = config.c if mode == LPNN else config.rho
    unit2 = prob.unit ** 2
    thr, div_thr = config.eps1 / unit2, config.divergence_e / unit2
    max_iters = int(config.max_iters)
    size = state_size(mode, prob.dim, prob.m, prob.n)

    x = _initial_vector(prob, config, seed)
    lambdas = x[prob.dim + prob.m + prob.n:].copy() if mode == LPNN else None
    total, restarts = 0, 0
    rows = []
    rec_every = TRAJECTORY_EVERY if config.record_trajectory else 0
    while True:
        dt = config.dt if config.dt is not None else stable_step(prob, x, gain)
        k, e, status = 0, np.inf, RUNNING
        while status == RUNNING and k < max_iters:
            stop = min(max_iters, k + _CHUNK) if config.record_trajectory else max_iters
            rows_needed = (stop - k) // TRAJECTORY_EVERY + 1 if rec_every else 0
            traj = np.empty((rows_needed, 2 + size))
            k, e, status, nrec = _EULER[mode](
                x, prob.br, prob.w, prob.tx, prob.rx, prob.tobs, prob.robs, prob.wt, prob.wr,
                prob.free_t, prob.free_r, gain, dt, thr, div_thr, k, stop, rec_every, traj)
            if nrec:
                block = traj[:nrec].copy()
                block[:, 0] += total
                rows.append(block)
        total += k
        if status != DIVERGED or not config.restart_on_divergence or restarts >= config.max_restarts:
            break
        restarts += 1
        x = _initial_vector(prob, config, seed, restarts, lambdas)

    state = _to_meters(x, mode, prob.dim, prob.m, prob.n, prob.unit)
    trajectory = None
    if config.record_trajectory:
        trajectory = np.vstack(rows) if rows else np.empty((0, 2 + size))
        trajectory[:, 1] *= unit2
        for r in range(trajectory.shape[0]):
            trajectory[r, 2:] = _to_meters(trajectory[r, 2:], mode, prob.dim, prob.m, prob.n, prob.unit)
    message = {CONVERGED: "converged", RUNNING: "iteration limit reached",
               DIVERGED: "diverged (non-finite or exploding derivative)"}[status]
    return SolveResult(
        estimate=state[:prob.dim].copy(), iterations=int(total), converged=status == CONVERGED,
        final_e=float(e) * unit2, restarts=restarts, wall_time=time.perf_counter() - t0,
        mode={RNF: "rnfnn", LPNN: "lpnn", ANT: "rnfnn-antenna"}[mode], state=state,
        length_unit=prob.unit, dt=float(dt), trajectory=trajectory, message=message)


def _plain_guard(meas: MeasurementSet, scenario: Scenario):
    if meas.antenna_mode:
        raise InvalidInputError("measurement set carries observed antennas; use solve_rnfnn_antenna")
    if scenario is None:
        raise InvalidInputError("a scenario with antenna positions is required")


def solve_rnfnn(meas: MeasurementSet, scenario: Scenario, config: SolverConfig = SolverConfig(),
                seed: SeedLike = 0) -> SolveResult:
    """Relaxed-energy gradient flow; returns the equilibrium position."""
    _plain_guard(meas, scenario)
    return _solve(RNF, meas, scenario, config, seed)


def solve_lpnn(meas: MeasurementSet, scenario: Scenario, config: SolverConfig = SolverConfig(),
               seed: SeedLike = 0) -> SolveResult:
    """Augmented-Lagrangian network; pass ``meas.with_uniform_weights()`` for the unweighted variant."""
    _plain_guard(meas, scenario)
    return _solve(LPNN, meas, scenario, config, seed)


def solve_rnfnn_antenna(meas: MeasurementSet, config: SolverConfig = SolverConfig(),
                        seed: SeedLike = 0) -> SolveResult:
    """Relaxed-energy flow that also refines the observed antenna positions."""
    if not meas.antenna_mode:
        raise InvalidInputError("antenna mode needs observed antenna positions in the measurement set")
    return _solve(ANT, meas, None, config, seed)


def effective_penalty(result: SolveResult, config: SolverConfig) -> float:
    """Penalty in meter units that makes the meter-scale flow match the normalized run."""
    return config.rho / result.length_unit ** 2


# ---------------------------------------------------------------- oracle


def _ml_objective_grid(points: np.ndarray, meas: MeasurementSet, scenario: Scenario) -> np.ndarray:
    dt = np.linalg.norm(points[:, None, :] - scenario.transmitters[None], axis=2)
    ds = np.linalg.norm(points[:, None, :] - scenario.receivers[None], axis=2)
    res = meas.br[None] - dt[:, :, None] - ds[:, None, :]
    return (meas.weights[None] * res ** 2).sum(axis=(1, 2))


def _grid_argmin(axes, meas, scenario, chunk=50_000):
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    best, best_val = None, np.inf
    for i in range(0, mesh.shape[0], chunk):
        vals = _ml_objective_grid(mesh[i:i + chunk], meas, scenario)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best, best_val = mesh[i + j], float(vals[j])
    return best


def oracle_ml_estimate(meas: MeasurementSet, scenario: Scenario, bounds=400.0,
                       coarse_step: float = 10.0, refinements: int = 3) -> np.ndarray:
    """Brute-force minimizer of the weighted range misfit.

    A coarse grid over ``bounds`` (half-width or ``(D, 2)`` array) is scanned,
    then each refinement scans +-one previous step around the incumbent with
    a ten times finer step.  Final resolution is ``coarse_step / 10**refinements``.
    """
    d = scenario.dim
    b = np.asarray(bounds, dtype=float)
    box = np.column_stack([-np.broadcast_to(b, d), np.broadcast_to(b, d)]) if b.ndim == 0 else b.reshape(d, 2)
    if not coarse_step > 0 or (box[:, 1] <= box[:, 0]).any():
        raise InvalidInputError("bounds must be a nonempty box and coarse_step positive")
    step = float(coarse_step)
    axes = [np.arange(lo, hi + 0.5 * step, step) for lo, hi in box]
    best = _grid_argmin(axes, meas, scenario)
    for _ in range(refinements):
        fine = step / 10.0
        offsets = np.arange(-10, 11) * fine
        best = _grid_argmin([c + offsets for c in best], meas, scenario)
        step = fine
    return best


# ------------------------------------------------------------- trajectory


def state_labels(mode: str, d: int, m: int, n: int) -> list[str]:
    names = [f"u_{k + 1}" for k in range(d)]
    code = _mode_code(mode)
    if code == ANT:
        names += [f"t{i + 1}_{k + 1}" for i in range(m) for k in range(d)]
        names += [f"s{j + 1}_{k + 1}" for j in range(n) for k in range(d)]
    prefix = "g" if code == LPNN else "h"
    names += [f"{prefix}_t{i + 1}" for i in range(m)] + [f"{prefix}_s{j + 1}" for j in range(n)]
    if code == LPNN:
        names += [f"lambda_t{i + 1}" for i in range(m)] + [f"lambda_s{j + 1}" for j in range(n)]
    return names


def write_trajectory_csv(result: SolveResult, path, m: int, n: int) -> None:
    """Dump the recorded trajectory as ``k,e,u_1..u_D,states...``."""
    if result.trajectory is None:
        raise InvalidInputError("result has no recorded trajectory")
    d = result.estimate.shape[0]
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "e"] + state_labels(result.mode, d, m, n))
        for row in result.trajectory:
            wr.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
