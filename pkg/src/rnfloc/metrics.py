"""Accuracy metrics, Cramér-Rao bounds and analytic multiplication counts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError, NotFoundError
from .radar import NoiseModel, Scenario

SWEEP_HEADER = ["snr_db", "rmse", "bias", "root_crlb", "mean_iters", "conv_rate", "trials"]


def _unit_rows(u, pos) -> np.ndarray:
    diff = u - pos
    norm = np.linalg.norm(diff, axis=1)
    if (norm == 0).any():
        raise DegenerateGeometryError("target coincides with an antenna")
    return diff / norm[:, None]


def range_jacobian(scenario: Scenario) -> np.ndarray:
    """d r_mn / d u, one row per pair in row-major (m, n) order."""
    gt = _unit_rows(scenario.target, scenario.transmitters)
    gs = _unit_rows(scenario.target, scenario.receivers)
    return (gt[:, None, :] + gs[None, :, :]).reshape(-1, scenario.dim)


def joint_jacobian(scenario: Scenario) -> np.ndarray:
    """Range Jacobian w.r.t. ``[u; t_1..t_M; s_1..s_N]``."""
    d, m, n = scenario.dim, scenario.m, scenario.n
    gt = _unit_rows(scenario.target, scenario.transmitters)
    gs = _unit_rows(scenario.target, scenario.receivers)
    jac = np.zeros((m * n, d + (m + n) * d))
    for i in range(m):
        for j in range(n):
            row = i * n + j
            jac[row, :d] = gt[i] + gs[j]
            jac[row, d + i * d:d + (i + 1) * d] = -gt[i]
            jac[row, d + (m + j) * d:d + (m + j + 1) * d] = -gs[j]
    return jac


def _inverse(fim: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(fim)
    if not np.isfinite(cond) or cond > 1e14:
        raise DegenerateGeometryError(f"Fisher information is singular (cond={cond:.3g})")
    inv = np.linalg.solve(fim, np.eye(fim.shape[0]))
    return 0.5 * (inv + inv.T)


def crlb(scenario: Scenario, noise: NoiseModel) -> tuple[np.ndarray, float]:
    """Position bound matrix and its root trace (meters)."""
    jac = range_jacobian(scenario)
    inv_var = 1.0 / noise.per_pair_variance.reshape(-1)
    bound = _inverse(jac.T @ (inv_var[:, None] * jac))
    return bound, float(np.sqrt(np.trace(bound)))


def crlb_with_antenna_errors(scenario: Scenario, noise: NoiseModel) -> tuple[np.ndarray, float]:
    """Position block of the joint bound when antenna positions carry Gaussian errors.

    Antennas with zero variance are treated as exactly known.
    """
    if not noise.has_antenna_errors:
        return crlb(scenario, noise)
    d = scenario.dim
    jac = joint_jacobian(scenario)
    inv_var = 1.0 / noise.per_pair_variance.reshape(-1)
    fim = jac.T @ (inv_var[:, None] * jac)
    ant_var = np.repeat(np.concatenate([noise.antenna_variance_t, noise.antenna_variance_s]), d)
    free = np.concatenate([np.ones(d, bool), ant_var > 0])
    prior = np.zeros(fim.shape[0])
    prior[d:][ant_var > 0] = 1.0 / ant_var[ant_var > 0]
    fim = (fim + np.diag(prior))[np.ix_(free, free)]
    bound = _inverse(fim)[:d, :d]
    return bound, float(np.sqrt(np.trace(bound)))


# ---------------------------------------------------------------- accuracy


def _errors(estimates, truth) -> np.ndarray:
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if est.size == 0:
        raise InvalidInputError("need at least one estimate")
    return est - np.asarray(truth, dtype=float)


def rmse(estimates, truth) -> float:
    """Root mean squared position error; ``truth`` may be one position or one per estimate."""
    err = _errors(estimates, truth)
    return float(np.sqrt(np.mean((err ** 2).sum(axis=1))))


def bias(estimates, truth) -> float:
    """l1 norm of the mean position error."""
    return float(np.abs(_errors(estimates, truth).mean(axis=0)).sum())


def ecdf(errors) -> np.ndarray:
    """Empirical CDF as rows ``(value, P(err <= value))`` at each distinct value."""
    e = np.sort(np.asarray(errors, dtype=float).reshape(-1))
    if e.size == 0:
        raise InvalidInputError("need at least one error value")
    values, counts = np.unique(e, return_counts=True)
    return np.column_stack([values, np.cumsum(counts) / e.size])


def ecdf_at(errors, x) -> np.ndarray:
    e = np.sort(np.asarray(errors, dtype=float).reshape(-1))
    return np.searchsorted(e, np.asarray(x, dtype=float), side="right") / e.size


def ecdf_quantile(errors, p: float) -> float:
    """Smallest value where the empirical CDF reaches ``p``."""
    e = np.sort(np.asarray(errors, dtype=float).reshape(-1))
    if not 0 < p <= 1:
        raise InvalidInputError("p must be in (0, 1]")
    return float(e[int(np.ceil(p * e.size)) - 1])


# ----------------------------------------------------------- complexity


def rm_count(method: str, m: int, n: int, d: int, iters: int = 1,
             icwls_iters: int | None = None) -> int:
    """Real multiplications to produce one estimate, per the closed-form complexity table.

    ``iters`` is the iteration count of the neural methods; ICWLS needs its
    own outer-iteration count ``icwls_iters``.
    """
    if min(m, n, d) < 1 or iters < 0:
        raise InvalidInputError("counts must be positive")
    mn, md = m * n, m + d
    if method == "rnfnn":
        return iters * (mn + (2 * d + 4) * (m + n))
    if method == "mlpnn":
        return iters * (mn + (3 * d + 6) * (m + n))
    if method == "lpnn":
        return iters * (3 * d + 6) * (m + n)
    if method == "tswls":
        return (3 * mn ** 3 + mn ** 2 * md + 2 * mn * md ** 2 + mn * md + 4 * md ** 3
                + d * md ** 2 + 21 * (m + 3) + 27)
    if method == "tswls-mns":
        return 6 * mn ** 3 + 2 * d * mn ** 2 + 14 * d * mn + 6 * n + 63
    if method == "icwls":
        if icwls_iters is None:
            raise InvalidInputError("icwls needs icwls_iters")
        return icwls_iters * (mn ** 3 + md ** 3 + 3 * m ** 3) + mn ** 3 + md ** 3
    raise NotFoundError(f"unknown method {method!r}")


# ----------------------------------------------------------------- report


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class MetricsReport:
    rmse: float
    bias: float
    ecdf: np.ndarray = field(repr=False)
    root_crlb: float
    mean_iterations: float
    mean_iterations_converged: float
    convergence_rate: float
    trials: int
    snr_db: float = float("nan")
    sigma2_p: float | None = None
    rm_counts: dict = field(default_factory=dict)

    def csv_row(self) -> list[str]:
        row = [_fmt(v) for v in (self.snr_db, self.rmse, self.bias, self.root_crlb,
                                 self.mean_iterations, self.convergence_rate)] + [str(self.trials)]
        if self.sigma2_p is not None:
            row.append(_fmt(self.sigma2_p))
        return row

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["ecdf"] = self.ecdf.tolist()
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def summarize(estimates, truth, iterations, converged, root_crlb: float, snr_db: float = float("nan"),
              sigma2_p: float | None = None, rm_counts: dict | None = None) -> MetricsReport:
    """Aggregate per-trial outcomes (already ordered by trial index)."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    its = np.asarray(iterations, dtype=float)
    conv = np.asarray(converged, dtype=bool)
    errs = np.linalg.norm(_errors(est, truth), axis=1)
    return MetricsReport(
        rmse=rmse(est, truth), bias=bias(est, truth), ecdf=ecdf(errs), root_crlb=float(root_crlb),
        mean_iterations=float(its.mean()),
        mean_iterations_converged=float(its[conv].mean()) if conv.any() else float("nan"),
        convergence_rate=float(conv.mean()), trials=int(est.shape[0]), snr_db=float(snr_db),
        sigma2_p=sigma2_p, rm_counts=dict(rm_counts or {}))
