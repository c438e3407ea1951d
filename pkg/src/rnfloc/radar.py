"""Distributed MIMO radar geometry and bistatic-range measurement model.

Measurements are indexed row-major over transmitter/receiver pairs, i.e.
``(1,1), (1,2), ..., (M,N)``; arrays of per-pair quantities have shape
``(M, N)``.  All lengths are in meters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng
from .errors import InvalidInputError, NotFoundError, SingularGeometryError

DEFAULT_K2 = 1000.0

SeedLike = int | Sequence[int]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _seed_key(seed: SeedLike) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


@dataclass(frozen=True)
class Scenario:
    """Antenna geometry plus the true target position."""

    transmitters: np.ndarray
    receivers: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.transmitters, dtype=float))
        s = np.atleast_2d(np.asarray(self.receivers, dtype=float))
        u = np.asarray(self.target, dtype=float).reshape(-1)
        if t.shape[0] < 1 or s.shape[0] < 1:
            raise InvalidInputError("need at least one transmitter and one receiver")
        dim = u.shape[0]
        if dim not in (2, 3):
            raise InvalidInputError(f"dimension must be 2 or 3, got {dim}")
        if t.shape[1] != dim or s.shape[1] != dim:
            raise InvalidInputError("antenna and target dimensions differ")
        if not (np.isfinite(t).all() and np.isfinite(s).all() and np.isfinite(u).all()):
            raise InvalidInputError("coordinates must be finite")
        object.__setattr__(self, "transmitters", _frozen(t))
        object.__setattr__(self, "receivers", _frozen(s))
        object.__setattr__(self, "target", _frozen(u))

    @property
    def dim(self) -> int:
        return self.target.shape[0]

    @property
    def m(self) -> int:
        return self.transmitters.shape[0]

    @property
    def n(self) -> int:
        return self.receivers.shape[0]

    @property
    def scale(self) -> float:
        """Largest absolute antenna coordinate, used to normalize lengths."""
        return float(max(np.abs(self.transmitters).max(), np.abs(self.receivers).max()))

    def with_target(self, target) -> "Scenario":
        return Scenario(self.transmitters, self.receivers, target)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "transmitters": self.transmitters.tolist(),
            "receivers": self.receivers.tolist(),
            "target": self.target.tolist(),
        }


@dataclass(frozen=True)
class NoiseModel:
    """Per-pair range-noise variances and optional antenna-position variances."""

    per_pair_variance: np.ndarray
    k1: float = float("nan")
    k2: float = DEFAULT_K2
    antenna_variance_t: np.ndarray | None = None
    antenna_variance_s: np.ndarray | None = None

    def __post_init__(self):
        var = np.atleast_2d(np.asarray(self.per_pair_variance, dtype=float))
        if not (np.isfinite(var).all() and (var > 0).all()):
            raise InvalidInputError("range variances must be finite and > 0")
        object.__setattr__(self, "per_pair_variance", _frozen(var))
        for name, size in (("antenna_variance_t", var.shape[0]), ("antenna_variance_s", var.shape[1])):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.broadcast_to(np.asarray(v, dtype=float), (size,))
            if not (np.isfinite(v).all() and (v >= 0).all()):
                raise InvalidInputError(f"{name} must be finite and >= 0")
            object.__setattr__(self, name, _frozen(v))
        if (self.antenna_variance_t is None) != (self.antenna_variance_s is None):
            raise InvalidInputError("give both antenna variance vectors or neither")

    @property
    def has_antenna_errors(self) -> bool:
        return self.antenna_variance_t is not None

    def with_antenna_variance(self, var_t, var_s=None) -> "NoiseModel":
        """Copy with antenna variances; a scalar ``var_t`` applies to every antenna."""
        if var_s is None:
            var_s = var_t
        return replace(self, antenna_variance_t=var_t, antenna_variance_s=var_s)

    def scaled(self, factor: float) -> "NoiseModel":
        """Copy with every range variance multiplied by ``factor``."""
        return replace(self, per_pair_variance=self.per_pair_variance * factor, k1=self.k1 * factor)


def normalized_weights(variance) -> np.ndarray:
    """Inverse-variance weights normalized to sum to one."""
    var = np.asarray(variance, dtype=float)
    if not (np.isfinite(var).all() and (var > 0).all()):
        raise InvalidInputError("variances must be finite and > 0")
    inv = 1.0 / var
    return inv / inv.sum()


def uniform_weights(shape) -> np.ndarray:
    """Weights used when no variance information is available (all ones, normalized)."""
    w = np.ones(shape)
    return w / w.sum()


@dataclass(frozen=True)
class MeasurementSet:
    """Noisy bistatic ranges with their weights (and observed antennas if any)."""

    br: np.ndarray
    weights: np.ndarray
    noise: NoiseModel | None = None
    true_br: np.ndarray | None = None
    observed_transmitters: np.ndarray | None = None
    observed_receivers: np.ndarray | None = None
    antenna_weights_t: np.ndarray | None = None
    antenna_weights_s: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        br = np.atleast_2d(np.asarray(self.br, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(br.shape)
        if (w <= 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError("pair weights must be positive and sum to 1")
        object.__setattr__(self, "br", _frozen(br))
        object.__setattr__(self, "weights", _frozen(w))
        for name in ("true_br", "observed_transmitters", "observed_receivers",
                     "antenna_weights_t", "antenna_weights_s"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(v))
        if self.antenna_mode:
            for wa in (self.antenna_weights_t, self.antenna_weights_s):
                if wa is None or (wa < 0).any() or abs(wa.sum() - 1.0) > 1e-12:
                    raise InvalidInputError("antenna weights must be nonnegative and sum to 1")

    @property
    def m(self) -> int:
        return self.br.shape[0]

    @property
    def n(self) -> int:
        return self.br.shape[1]

    @property
    def antenna_mode(self) -> bool:
        return self.observed_transmitters is not None

    def with_uniform_weights(self) -> "MeasurementSet":
        """Same data with equal pair weights (the unweighted LPNN setting)."""
        return replace(self, weights=uniform_weights(self.br.shape))

    def without_antennas(self) -> "MeasurementSet":
        return replace(self, observed_transmitters=None, observed_receivers=None,
                       antenna_weights_t=None, antenna_weights_s=None)

    @classmethod
    def from_ranges(cls, br, variance=None, **kw) -> "MeasurementSet":
        br = np.atleast_2d(np.asarray(br, dtype=float))
        w = uniform_weights(br.shape) if variance is None else normalized_weights(variance)
        return cls(br=br, weights=w, **kw)


def bistatic_range(u, t, s) -> float:
    """Transmitter-target-receiver path length ``|u - t| + |u - s|``."""
    u, t, s = (np.asarray(a, dtype=float).reshape(-1) for a in (u, t, s))
    if not (u.shape == t.shape == s.shape):
        raise InvalidInputError("positions must share one dimension")
    return float(math.sqrt(((u - t) ** 2).sum()) + math.sqrt(((u - s) ** 2).sum()))


def range_matrix(transmitters, receivers, u) -> np.ndarray:
    """All noise-free bistatic ranges, shape ``(M, N)``."""
    u = np.asarray(u, dtype=float)
    dt = np.linalg.norm(u - np.asarray(transmitters, dtype=float), axis=-1)
    ds = np.linalg.norm(u - np.asarray(receivers, dtype=float), axis=-1)
    return dt[:, None] + ds[None, :]


def antenna_distances(scenario: Scenario, u=None) -> tuple[np.ndarray, np.ndarray]:
    u = scenario.target if u is None else np.asarray(u, dtype=float)
    return (np.linalg.norm(u - scenario.transmitters, axis=1),
            np.linalg.norm(u - scenario.receivers, axis=1))


def simulate_antenna_positions(scenario: Scenario, noise: NoiseModel,
                               seed: SeedLike) -> tuple[np.ndarray, np.ndarray]:
    """Observed antenna positions, each true position plus isotropic Gaussian error."""
    if not noise.has_antenna_errors:
        raise InvalidInputError("noise model has no antenna variances")
    g = rng.generator(*_seed_key(seed), rng.ANTENNA)
    zt = g.standard_normal((scenario.m, scenario.dim))
    zs = g.standard_normal((scenario.n, scenario.dim))
    t_obs = scenario.transmitters + zt * np.sqrt(noise.antenna_variance_t)[:, None]
    s_obs = scenario.receivers + zs * np.sqrt(noise.antenna_variance_s)[:, None]
    return t_obs, s_obs


def _antenna_weights(var: np.ndarray) -> np.ndarray:
    # Zero variance means a perfectly known antenna.  Such antennas are held
    # fixed by the solver, so they get zero weight and the rest share the sum.
    exact = var == 0
    if exact.all():
        return uniform_weights(var.shape)
    w = np.zeros(var.shape)
    w[~exact] = normalized_weights(var[~exact])
    return w


def simulate_measurements(scenario: Scenario, noise: NoiseModel, seed: SeedLike) -> MeasurementSet:
    """Draw one set of noisy bistatic ranges (and observed antennas if modelled)."""
    var = noise.per_pair_variance
    if var.shape != (scenario.m, scenario.n):
        raise InvalidInputError(f"variance shape {var.shape} != {(scenario.m, scenario.n)}")
    key = _seed_key(seed)
    r_true = range_matrix(scenario.transmitters, scenario.receivers, scenario.target)
    z = rng.generator(*key, rng.NOISE).standard_normal(var.shape)
    br = r_true + z * np.sqrt(var)
    extra = {}
    if noise.has_antenna_errors:
        t_obs, s_obs = simulate_antenna_positions(scenario, noise, key)
        extra = dict(
            observed_transmitters=t_obs,
            observed_receivers=s_obs,
            antenna_weights_t=_antenna_weights(noise.antenna_variance_t),
            antenna_weights_s=_antenna_weights(noise.antenna_variance_s),
        )
    return MeasurementSet(br=br, weights=normalized_weights(var), noise=noise, true_br=r_true, **extra)


def _gain_products(scenario: Scenario) -> np.ndarray:
    gt, gs = antenna_distances(scenario)
    if (gt == 0).any() or (gs == 0).any():
        raise SingularGeometryError("target coincides with an antenna")
    return gt[:, None] ** 2 * gs[None, :] ** 2


def noise_from_snr(scenario: Scenario, snr_db: float, k2: float = DEFAULT_K2,
                   antenna_variance=None) -> NoiseModel:
    """Noise model whose average SNR equals ``snr_db``.

    Per-pair variances follow ``k1 * g_t^2 * g_s^2`` where ``g`` are the
    target-antenna distances; ``k1`` is solved in closed form.
    """
    if not math.isfinite(snr_db):
        raise InvalidInputError("snr_db must be finite")
    if k2 <= 0:
        raise InvalidInputError("k2 must be positive")
    g2 = _gain_products(scenario)
    k1 = k2 * float(np.mean(1.0 / g2)) / 10.0 ** (snr_db / 10.0)
    noise = NoiseModel(per_pair_variance=k1 * g2, k1=k1, k2=k2)
    if antenna_variance is not None:
        noise = noise.with_antenna_variance(antenna_variance)
    return noise


def average_snr_db(noise: NoiseModel) -> float:
    """Average SNR in dB implied by the per-pair variances."""
    return 10.0 * math.log10(float(np.mean(noise.k2 / noise.per_pair_variance)))


_TABLE_2D = Scenario(
    transmitters=[[-1000, -1300], [500, 2000], [2500, 0]],
    receivers=[[1500, -1800], [2100, 1500], [-1200, 1000]],
    target=[50, 50],
)
_TABLE_3D = Scenario(
    transmitters=[[2000, 3000, 800], [2000, -3000, 1200], [-2000, 3000, 1000],
                  [-2000, -3000, 1600], [0, 0, 1500]],
    receivers=[[4000, 4000, 1000], [-4500, 5000, 1500], [-4500, -4500, 1000],
               [0, 6000, 1200], [0, -6000, 1000], [-6000, 0, 1000]],
    target=[-500, 600, 550],
)
BUILTIN_SCENARIOS = {"scenario1-2d": _TABLE_2D, "scenario2-3d": _TABLE_3D}


def builtin_scenario(name: str) -> Scenario:
    try:
        return BUILTIN_SCENARIOS[name]
    except KeyError:
        raise NotFoundError(f"unknown scenario {name!r}; known: {sorted(BUILTIN_SCENARIOS)}") from None


def random_circle_scenario(m: int, n: int, radius: float, seed: SeedLike) -> Scenario:
    """Antennas on a circle, target uniform in the inner disk of half the radius.

    The first two transmitters sit at angles 0 and pi, the first two
    receivers at pi/2 and -pi/2; the remaining angles are uniform.
    """
    if m < 2 or n < 2:
        raise InvalidInputError("need m >= 2 and n >= 2")
    if not radius > 0:
        raise InvalidInputError("radius must be positive")
    g = rng.generator(*_seed_key(seed), rng.GEOMETRY)
    at = np.concatenate([[0.0, np.pi], g.uniform(-np.pi, np.pi, m - 2)])
    ar = np.concatenate([[np.pi / 2, -np.pi / 2], g.uniform(-np.pi, np.pi, n - 2)])
    # sqrt of a uniform radius fraction gives a uniform density over the disk
    rho = 0.5 * radius * math.sqrt(g.uniform())
    phi = g.uniform(-np.pi, np.pi)
    circle = lambda a: radius * np.column_stack([np.cos(a), np.sin(a)])
    return Scenario(circle(at), circle(ar), [rho * math.cos(phi), rho * math.sin(phi)])


def scenario_from_config(cfg: dict) -> Scenario:
    """Build a scenario from a parsed ``[scenario]`` table.

    Either ``name = "scenario1-2d"`` (optionally overriding ``target``) or
    explicit ``transmitters``/``receivers``/``target`` arrays.
    """
    if "name" in cfg:
        sc = builtin_scenario(cfg["name"])
        return sc.with_target(cfg["target"]) if "target" in cfg else sc
    try:
        sc = Scenario(cfg["transmitters"], cfg["receivers"], cfg["target"])
    except KeyError as exc:
        raise InvalidInputError(f"scenario config missing {exc.args[0]!r}") from None
    if "dim" in cfg and int(cfg["dim"]) != sc.dim:
        raise InvalidInputError("declared dim does not match coordinates")
    return sc


def noise_from_config(cfg: dict, scenario: Scenario) -> NoiseModel:
    """Build a noise model from a ``[noise]`` table (``snr_db`` or explicit variances)."""
    k2 = float(cfg.get("k2", DEFAULT_K2))
    ant = cfg.get("antenna_variance")
    if "per_pair_variance" in cfg:
        var = np.asarray(cfg["per_pair_variance"], dtype=float).reshape(scenario.m, scenario.n)
        noise = NoiseModel(per_pair_variance=var, k2=k2)
        return noise.with_antenna_variance(ant) if ant is not None else noise
    if "snr_db" not in cfg:
        raise InvalidInputError("noise config needs snr_db or per_pair_variance")
    return noise_from_snr(scenario, float(cfg["snr_db"]), k2=k2, antenna_variance=ant)


def load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def export_measurements_csv(meas: MeasurementSet, path) -> None:
    """Write ``m,n,r_true,r_meas,sigma2,w`` rows (1-based pair indices)."""
    r_true = meas.true_br if meas.true_br is not None else np.full(meas.br.shape, np.nan)
    var = meas.noise.per_pair_variance if meas.noise is not None else np.full(meas.br.shape, np.nan)
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["m", "n", "r_true", "r_meas", "sigma2", "w"])
        for i in range(meas.m):
            for j in range(meas.n):
                wr.writerow([i + 1, j + 1, repr(float(r_true[i, j])), repr(float(meas.br[i, j])),
                             repr(float(var[i, j])), repr(float(meas.weights[i, j]))])
