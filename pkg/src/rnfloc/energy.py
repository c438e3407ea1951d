"""Energy functions and gradient-flow fields of the two localization networks.

Three flows share one compiled kernel:

* ``RNF``: relaxed-energy descent over ``[u | h_t | h_s]``;
* ``LPNN``: augmented-Lagrangian descent/ascent over
  ``[u | g_t | g_s | lambda_t | lambda_s]``;
* ``ANT``: relaxed-energy descent with antenna positions as extra
  states, ``[u | t (M*D) | s (N*D) | h_t | h_s]``.

Everything here works in whatever length unit the inputs use; the solver
feeds normalized coordinates, the public wrappers are used in meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidInputError
from .radar import MeasurementSet, Scenario

RNF, LPNN, ANT = 0, 1, 2


@numba.njit(cache=True)
def field_kernel(mode, x, br, w, tx, rx, tobs, robs, wt, wr, free_t, free_r, rho, out,
                 ft, fr, diff_t, diff_r):
    """Write dx/dt for ``mode`` into ``out``.

    ``tx``/``rx`` are the fixed antenna positions (ignored in ANT mode,
    where they are read from the state).  In ANT mode ``free_t``/``free_r``
    (1.0 or 0.0) multiply the antenna rows so exactly known antennas stay
    put.  ``rho`` is the penalty for RNF/ANT and the augmented amplitude for
    LPNN.  The last four arguments are scratch space of shapes (M,), (N,),
    (M, D), (N, D).
    """
    m, d = tx.shape
    n = rx.shape[0]
    if mode == ANT:
        oh = d + (m + n) * d
    else:
        oh = d
    for i in range(m):
        c = x[oh + i] * x[oh + i]
        for k in range(d):
            p = x[d + i * d + k] if mode == ANT else tx[i, k]
            diff_t[i, k] = x[k] - p
            c -= diff_t[i, k] * diff_t[i, k]
        if mode == LPNN:
            out[d + m + n + i] = c
            ft[i] = 2.0 * x[d + m + n + i] + rho * c
        else:
            ft[i] = rho * c
    for j in range(n):
        c = x[oh + m + j] * x[oh + m + j]
        for k in range(d):
            p = x[d + m * d + j * d + k] if mode == ANT else rx[j, k]
            diff_r[j, k] = x[k] - p
            c -= diff_r[j, k] * diff_r[j, k]
        if mode == LPNN:
            out[d + 2 * m + n + j] = c
            fr[j] = 2.0 * x[d + 2 * m + n + j] + rho * c
        else:
            fr[j] = rho * c
    # range-residual rows
    for i in range(m):
        out[oh + i] = -x[oh + i] * ft[i]
    for j in range(n):
        out[oh + m + j] = -x[oh + m + j] * fr[j]
    for i in range(m):
        for j in range(n):
            res = w[i, j] * (br[i, j] - x[oh + i] - x[oh + m + j])
            out[oh + i] += res
            out[oh + m + j] += res
    for k in range(d):
        acc = 0.0
        for i in range(m):
            acc += ft[i] * diff_t[i, k]
        for j in range(n):
            acc += fr[j] * diff_r[j, k]
        out[k] = acc
    if mode == ANT:
        for i in range(m):
            for k in range(d):
                q = d + i * d + k
                out[q] = free_t[i] * (wt[i] * (tobs[i, k] - x[q]) - ft[i] * diff_t[i, k])
        for j in range(n):
            for k in range(d):
                q = d + m * d + j * d + k
                out[q] = free_r[j] * (wr[j] * (robs[j, k] - x[q]) - fr[j] * diff_r[j, k])


# ---------------------------------------------------------------- states


def _vec(a, size=None, name="state"):
    v = np.asarray(a, dtype=float).reshape(-1)
    if size is not None and v.shape[0] != size:
        raise InvalidInputError(f"{name} has length {v.shape[0]}, expected {size}")
    return v


def run_field(mode, x, br, w, tx, rx, tobs, robs, wt, wr, rho) -> np.ndarray:
    m, d = tx.shape
    n = rx.shape[0]
    out = np.empty_like(x)
    field_kernel(mode, x, br, w, tx, rx, tobs, robs, wt, wr, np.ones(m), np.ones(n), float(rho), out,
                 np.empty(m), np.empty(n), np.empty((m, d)), np.empty((n, d)))
    return out


@dataclass
class RnfState:
    u: np.ndarray
    h_t: np.ndarray
    h_s: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([_vec(self.u), _vec(self.h_t), _vec(self.h_s)])

    @classmethod
    def from_vector(cls, x, d: int, m: int, n: int) -> "RnfState":
        x = _vec(x, d + m + n)
        return cls(x[:d].copy(), x[d:d + m].copy(), x[d + m:].copy())


@dataclass
class ExtendedRnfState:
    u: np.ndarray
    t_hat: np.ndarray
    s_hat: np.ndarray
    h_t: np.ndarray
    h_s: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([_vec(self.u), _vec(self.t_hat), _vec(self.s_hat),
                               _vec(self.h_t), _vec(self.h_s)])

    @classmethod
    def from_vector(cls, x, d: int, m: int, n: int) -> "ExtendedRnfState":
        x = _vec(x, d + (d + 1) * (m + n))
        a, b = d + m * d, d + (m + n) * d
        return cls(x[:d].copy(), x[d:a].reshape(m, d).copy(), x[a:b].reshape(n, d).copy(),
                   x[b:b + m].copy(), x[b + m:].copy())


@dataclass
class LpnnState:
    u: np.ndarray
    g_t: np.ndarray
    g_s: np.ndarray
    lambda_t: np.ndarray
    lambda_s: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([_vec(self.u), _vec(self.g_t), _vec(self.g_s),
                               _vec(self.lambda_t), _vec(self.lambda_s)])

    @classmethod
    def from_vector(cls, x, d: int, m: int, n: int) -> "LpnnState":
        x = _vec(x, d + 2 * (m + n))
        return cls(x[:d].copy(), x[d:d + m].copy(), x[d + m:d + m + n].copy(),
                   x[d + m + n:d + 2 * m + n].copy(), x[d + 2 * m + n:].copy())


def _as_vector(state) -> np.ndarray:
    if isinstance(state, (RnfState, ExtendedRnfState, LpnnState)):
        return state.to_vector()
    return _vec(state)


# --------------------------------------------------------------- energies


def _distances(u, pos) -> np.ndarray:
    return np.linalg.norm(np.asarray(u, float) - np.asarray(pos, float), axis=-1)


def _residuals(meas: MeasurementSet, ht, hs) -> np.ndarray:
    return meas.br - np.asarray(ht)[:, None] - np.asarray(hs)[None, :]


def ml_objective(u, meas: MeasurementSet, scenario: Scenario) -> float:
    """Weighted squared range misfit at position ``u``."""
    dt = _distances(u, scenario.transmitters)
    ds = _distances(u, scenario.receivers)
    return float((meas.weights * _residuals(meas, dt, ds) ** 2).sum())


def _check_rho(rho, name="rho"):
    if not rho > 0:
        raise InvalidInputError(f"{name} must be positive")


def _split(x, scenario_or_dims):
    d, m, n = scenario_or_dims
    return x[:d], x[d:d + m], x[d + m:d + m + n]


def _dims(scenario: Scenario):
    return scenario.dim, scenario.m, scenario.n


def rnf_energy(x, meas: MeasurementSet, scenario: Scenario, rho: float) -> float:
    """Relaxed energy: half the weighted range misfit plus quartic constraint penalties."""
    _check_rho(rho)
    x = _vec(x, sum(_dims(scenario)))
    u, ht, hs = _split(x, _dims(scenario))
    ct = ht ** 2 - _distances(u, scenario.transmitters) ** 2
    cs = hs ** 2 - _distances(u, scenario.receivers) ** 2
    fit = 0.5 * float((meas.weights * _residuals(meas, ht, hs) ** 2).sum())
    return fit + 0.25 * rho * float((ct ** 2).sum() + (cs ** 2).sum())


def lagrangian(y_lambda, meas: MeasurementSet, scenario: Scenario) -> float:
    """Weighted Lagrangian with the range-consistency equality constraints."""
    return augmented_lagrangian(y_lambda, meas, scenario, 0.0)


def augmented_lagrangian(y_lambda, meas: MeasurementSet, scenario: Scenario, c: float) -> float:
    if c < 0:
        raise InvalidInputError("c must be nonnegative")
    d, m, n = _dims(scenario)
    x = _vec(_as_vector(y_lambda), d + 2 * (m + n))
    u, gt, gs = _split(x, (d, m, n))
    lt, ls = x[d + m + n:d + 2 * m + n], x[d + 2 * m + n:]
    ct = gt ** 2 - _distances(u, scenario.transmitters) ** 2
    cs = gs ** 2 - _distances(u, scenario.receivers) ** 2
    value = 0.5 * float((meas.weights * _residuals(meas, gt, gs) ** 2).sum())
    value += float(lt @ ct + ls @ cs)
    return value + 0.25 * c * float((ct ** 2).sum() + (cs ** 2).sum())


def _require_antennas(meas: MeasurementSet):
    if not meas.antenna_mode:
        raise InvalidInputError("measurement set has no observed antenna positions")


def extended_ml_objective(u, p_states, meas: MeasurementSet) -> float:
    """Range misfit at antenna states ``p_states = (t, s)`` plus weighted antenna deviations."""
    _require_antennas(meas)
    t, s = (np.asarray(p, float).reshape(-1, len(u)) for p in p_states)
    fit = ml_objective(u, meas, Scenario(t, s, u))
    dev = (meas.antenna_weights_t @ ((meas.observed_transmitters - t) ** 2).sum(1)
           + meas.antenna_weights_s @ ((meas.observed_receivers - s) ** 2).sum(1))
    return fit + float(dev)


def extended_rnf_energy(x, meas: MeasurementSet, rho: float, antenna_coef: float = 1.0) -> float:
    """Relaxed energy with antenna states.

    ``antenna_coef`` scales the antenna-deviation terms; the flow returned by
    :func:`extended_rnfnn_derivative` is the exact negative gradient of the
    ``antenna_coef=0.5`` variant.
    """
    _check_rho(rho)
    _require_antennas(meas)
    m, n = meas.m, meas.n
    d = meas.observed_transmitters.shape[1]
    st = ExtendedRnfState.from_vector(_as_vector(x), d, m, n)
    ct = st.h_t ** 2 - _distances(st.u, st.t_hat) ** 2
    cs = st.h_s ** 2 - _distances(st.u, st.s_hat) ** 2
    value = 0.5 * float((meas.weights * _residuals(meas, st.h_t, st.h_s) ** 2).sum())
    value += 0.25 * rho * float((ct ** 2).sum() + (cs ** 2).sum())
    dev = (meas.antenna_weights_t @ ((meas.observed_transmitters - st.t_hat) ** 2).sum(1)
           + meas.antenna_weights_s @ ((meas.observed_receivers - st.s_hat) ** 2).sum(1))
    return value + antenna_coef * float(dev)


# ------------------------------------------------------------ derivatives


def _no_antennas(d):
    return np.zeros((1, d)), np.zeros(1)


def rnfnn_derivative(x, meas: MeasurementSet, scenario: Scenario, rho: float) -> np.ndarray:
    _check_rho(rho)
    x = _vec(_as_vector(x), sum(_dims(scenario)))
    z, zw = _no_antennas(scenario.dim)
    return run_field(RNF, x, meas.br, meas.weights, scenario.transmitters, scenario.receivers,
                     z, z, zw, zw, rho)


def lpnn_derivative(y_lambda, meas: MeasurementSet, scenario: Scenario, c: float) -> np.ndarray:
    _check_rho(c, "c")
    d, m, n = _dims(scenario)
    x = _vec(_as_vector(y_lambda), d + 2 * (m + n))
    z, zw = _no_antennas(d)
    return run_field(LPNN, x, meas.br, meas.weights, scenario.transmitters, scenario.receivers,
                     z, z, zw, zw, c)


def extended_rnfnn_derivative(x, meas: MeasurementSet, rho: float) -> np.ndarray:
    """Flow over ``[u | t | s | h_t | h_s]``; antenna rows pull toward the observed positions."""
    _check_rho(rho)
    _require_antennas(meas)
    d = meas.observed_transmitters.shape[1]
    x = _vec(_as_vector(x), d + (d + 1) * (meas.m + meas.n))
    return run_field(ANT, x, meas.br, meas.weights, meas.observed_transmitters,
                 meas.observed_receivers, meas.observed_transmitters, meas.observed_receivers,
                 meas.antenna_weights_t, meas.antenna_weights_s, rho)


def multiplier_term_hessians(lambda_t, lambda_s, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Hessians of the multiplier terms w.r.t. ``[u; g_t]`` and ``[u; g_s]``."""

    def block(lam):
        lam = _vec(lam)
        hess = np.zeros((dim + lam.size, dim + lam.size))
        hess[:dim, :dim] = -2.0 * lam.sum() * np.eye(dim)
        hess[dim:, dim:] = np.diag(2.0 * lam)
        return hess

    return block(lambda_t), block(lambda_s)


def feasible_ranges(u, transmitters, receivers) -> tuple[np.ndarray, np.ndarray]:
    """Auxiliary ranges that satisfy every constraint at ``u``."""
    return _distances(u, transmitters), _distances(u, receivers)
