"""
Effect densities and decoherence factors.

Once every pulse has the same integral impact phi(t), each coherence of the
system factorizes as

    rho_A[m, n](t) = rho_mn exp(-i omega_mn t) D_mn(t),
    D_mn(t)       = integral p_mn(x) exp(-i x M phi(t)) dx,

so D_mn is the characteristic function of the normalized effect density p_mn
evaluated at M phi(t). The density is either empirical (weighted atoms at the
mean eigenvalue gaps of the device levels) or one of two parametric laws:

    gaussian  ->  D = exp(-sigma^2 M^2 phi^2 / 2)
    lorentz   ->  D = exp(-sigma M |phi|)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config import DECOHERENCE_BOUND_TOL, HISTOGRAM_BINS, NORMALIZATION_TOL, TIME_CHUNK
from src.errors import (
    NonUniformImpact,
    RepresentationError,
    ShapeMismatchError,
    ValidationError,
    ZeroWeight,
)
from src.evolution import ReducedDensitySeries, check_grid
from src.model import CompositeModel, InteractionSpec
from src.protocol import Protocol, PulseShape, phase_matrix, uniform_impacts

logger = logging.getLogger(__name__)

PARAMETRIC_FAMILIES = ("gaussian", "lorentz")
FAMILIES = ("empirical",) + PARAMETRIC_FAMILIES


@dataclass(frozen=True)
class EffectDensity:
    """
    Normalized effect density p_mn of one coherence, with its weight rho_mn.

    Empirical densities hold atoms x_k with weights w_k (sum w_k = 1); the
    weights are complex in general and form a probability only when every
    w_k is real and nonnegative (for instance for product initial states).
    Parametric densities hold a family name and a scale sigma.
    """

    pair: Tuple[int, int]
    weight: complex = 1.0
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    family: str = "empirical"
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family '{self.family}'", path="family")
        if self.family == "empirical":
            if self.atoms is None or self.weights is None:
                raise ValidationError("empirical density needs atoms and weights", path="atoms")
            atoms = np.array(self.atoms, dtype=float)
            weights = np.array(self.weights, dtype=complex)
            if atoms.ndim != 1 or atoms.shape != weights.shape or atoms.size == 0:
                raise ShapeMismatchError("atoms and weights must be equal-length nonempty vectors", path="atoms")
            if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
                raise ValidationError("atoms and weights must be finite", path="atoms")
            total = weights.sum()
            if abs(total - 1.0) > NORMALIZATION_TOL * max(1.0, float(np.abs(weights).sum())):
                raise ValidationError(f"atom weights sum to {total!r}, expected 1", path="weights")
            atoms.setflags(write=False)
            weights.setflags(write=False)
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "weights", weights)
        else:
            if self.sigma is None or not self.sigma > 0:
                raise ValidationError(f"{self.family} density needs sigma > 0, got {self.sigma}", path="sigma")
        object.__setattr__(self, "weight", complex(self.weight))

    @classmethod
    def parametric(cls, pair: Tuple[int, int], family: str, sigma: float, weight: complex = 1.0) -> "EffectDensity":
        if family not in PARAMETRIC_FAMILIES:
            raise ValidationError(f"'{family}' is not a parametric family", path="family")
        return cls(pair=tuple(pair), weight=weight, family=family, sigma=float(sigma))

    @property
    def is_empirical(self) -> bool:
        return self.family == "empirical"

    @property
    def is_probability(self) -> bool:
        if not self.is_empirical:
            return True
        return bool(np.all(np.abs(self.weights.imag) <= NORMALIZATION_TOL) and np.all(self.weights.real >= -NORMALIZATION_TOL))

    def masses(self) -> np.ndarray:
        """Atom masses of the unnormalized effect density g_mn = rho_mn p_mn."""
        if not self.is_empirical:
            raise RepresentationError("parametric densities have no atoms", path="family")
        return self.weight * self.weights


@dataclass(frozen=True)
class DecoherenceParams:
    """Parametric law with a default scale and optional per-pair overrides."""

    family: str
    sigma: float = 1.0
    overrides: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown decoherence family '{self.family}'", path="decoherence.family")
        if self.family != "empirical" and not self.sigma >= 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}", path="decoherence.sigma")
        for pair, value in self.overrides.items():
            if not value >= 0:
                raise ValidationError(f"override sigma for {pair} must be >= 0", path="decoherence.overrides")

    def sigma_for(self, m: int, n: int) -> float:
        """Scale of pair (m, n); an override for (m, n) also applies to (n, m)."""
        if (m, n) in self.overrides:
            return float(self.overrides[(m, n)])
        if (n, m) in self.overrides:
            return float(self.overrides[(n, m)])
        return float(self.sigma)


@dataclass(frozen=True)
class DecoherenceCurve:
    """D_mn(t) sampled on a grid, with the protocol it was computed for."""

    pair: Tuple[int, int]
    times: np.ndarray
    values: np.ndarray
    descriptor: str
    count: int
    family: str
    sigma: Optional[float] = None
    t_dec: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        m, n = self.pair
        return pd.DataFrame({
            "t": self.times,
            "m": np.full(self.times.size, m),
            "n": np.full(self.times.size, n),
            "re_D": self.values.real,
            "im_D": self.values.imag,
            "abs_D": np.abs(self.values),
        })

    def sidecar(self) -> dict:
        return {"family": self.family, "sigma": self.sigma, "M": self.count, "t_dec": self.t_dec}


def _check_pair(model: CompositeModel, m: int, n: int):
    for name, value in (("m", m), ("n", n)):
        if not 0 <= value < model.N:
            raise ValidationError(f"index {name}={value} out of range [0, {model.N})", path=name)


def _is_zero_weight(rho_mnk: np.ndarray, rho_mn: complex) -> bool:
    scale = float(np.abs(rho_mnk).sum())
    return scale == 0.0 or abs(rho_mn) <= NORMALIZATION_TOL * scale


def _mean_gaps(model: CompositeModel, m: int, n: int) -> np.ndarray:
    """x_mnk averaged over the acts, shape (K,)."""
    return model.interaction.gaps()[:, m, n, :].sum(axis=0) / model.M


def _characteristic(atoms: np.ndarray, weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """sum_k w_k exp(-i x_k u) for every u, chunked over u."""
    out = np.empty(u.size, dtype=complex)
    for start in range(0, u.size, TIME_CHUNK):
        chunk = u[start:start + TIME_CHUNK]
        terms = np.ascontiguousarray(weights[None, :] * np.exp(-1j * atoms[None, :] * chunk[:, None]))
        out[start:start + TIME_CHUNK] = terms.sum(axis=-1)
    return out


def effect_density_from_model(model: CompositeModel, m: int, n: int) -> EffectDensity:
    """Empirical effect density of coherence (m, n): atoms at the mean gaps x_mnk."""
    if model.M < 1:
        raise ValidationError("effect density needs at least one measurement act", path="interaction")
    _check_pair(model, m, n)
    rho_mnk = model.rho0.rho[m, n, :]
    rho_mn = complex(rho_mnk.sum())
    if _is_zero_weight(rho_mnk, rho_mn):
        raise ZeroWeight(m, n)
    return EffectDensity(pair=(m, n), weight=rho_mn, atoms=_mean_gaps(model, m, n), weights=rho_mnk / rho_mn)


def _check_scale(sigma: float, count: int):
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}", path="sigma")
    if count < 0:
        raise ValidationError(f"measurement count must be >= 0, got {count}", path="M")


def decoherence_factor_exact(density: EffectDensity, M: int, phi):
    """Characteristic function of an empirical density at M * phi (phi scalar or array)."""
    if not density.is_empirical:
        raise RepresentationError("use the analytic factor for parametric densities", path="family")
    phi_arr = np.atleast_1d(np.asarray(phi, dtype=float))
    out = _characteristic(density.atoms, density.weights, M * phi_arr)
    return complex(out[0]) if np.ndim(phi) == 0 else out


def decoherence_factor_gaussian(sigma: float, M: int, phi):
    """exp(-sigma^2 M^2 phi^2 / 2)."""
    _check_scale(sigma, M)
    value = np.exp(-0.5 * (sigma * M * np.asarray(phi, dtype=float)) ** 2)
    return float(value) if np.ndim(phi) == 0 else value


def decoherence_factor_lorentz(sigma: float, M: int, phi):
    """exp(-sigma M |phi|)."""
    _check_scale(sigma, M)
    value = np.exp(-sigma * M * np.abs(np.asarray(phi, dtype=float)))
    return float(value) if np.ndim(phi) == 0 else value


def decoherence_time(sigma: float, count: int = 1) -> float:
    """t_dec = 1 / (sigma M) for M simultaneous continuous unit-amplitude measurements."""
    if not sigma > 0:
        raise ValidationError(f"decoherence time needs sigma > 0, got {sigma}", path="sigma")
    if count < 1:
        raise ValidationError(f"decoherence time needs at least one measurement, got {count}", path="M")
    return 1.0 / (sigma * count)


def _uniform_phi(protocol: Protocol, grid: np.ndarray) -> np.ndarray:
    phases = phase_matrix(protocol, grid)
    mask, phi = uniform_impacts(phases)
    if not mask.all():
        first = int(np.flatnonzero(~mask)[0])
        raise NonUniformImpact(float(grid[first]), phases=phases[first])
    return phi


def uniform_mask(protocol: Protocol, times) -> np.ndarray:
    """Boolean mask of grid times where the uniform-impact condition holds."""
    mask, _ = uniform_impacts(phase_matrix(protocol, check_grid(times)))
    return mask


Source = Union[CompositeModel, DecoherenceParams, EffectDensity]


def decoherence_curve(source: Source, pair: Tuple[int, int], protocol: Protocol, times) -> DecoherenceCurve:
    """
    D_mn(t) along a protocol.

    source is a CompositeModel (exact atom sum from its effect density), a
    DecoherenceParams (analytic law) or an EffectDensity (either path).
    Raises NonUniformImpact at the first grid time where impacts differ.
    """
    grid = check_grid(times)
    m, n = pair
    phi = _uniform_phi(protocol, grid)
    count = protocol.count

    family, sigma, t_dec = "empirical", None, None
    if count == 0 or m == n:
        values = np.ones(grid.size, dtype=complex)
        if isinstance(source, DecoherenceParams) and source.family != "empirical":
            family, sigma = source.family, source.sigma_for(m, n)
    elif isinstance(source, CompositeModel):
        if count != source.M:
            raise ShapeMismatchError(f"protocol has {count} pulses but model has {source.M}", path="protocol")
        values = decoherence_factor_exact(effect_density_from_model(source, m, n), count, phi)
    else:
        if isinstance(source, DecoherenceParams):
            if source.family == "empirical":
                raise RepresentationError("empirical curves need a model or an empirical density", path="decoherence.family")
            family, sigma = source.family, source.sigma_for(m, n)
        elif source.is_empirical:
            family = "empirical"
        else:
            family, sigma = source.family, source.sigma

        if family == "empirical":
            values = decoherence_factor_exact(source, count, phi)
        elif family == "gaussian":
            values = decoherence_factor_gaussian(sigma, count, phi).astype(complex)
        else:
            values = decoherence_factor_lorentz(sigma, count, phi).astype(complex)

    if sigma is not None and sigma > 0 and protocol.descriptor == "continuous":
        t_dec = decoherence_time(sigma, count)

    return DecoherenceCurve(
        pair=(m, n),
        times=grid,
        values=np.asarray(values, dtype=complex),
        descriptor=protocol.descriptor,
        count=count,
        family=family,
        sigma=sigma,
        t_dec=t_dec,
    )


def factorized_reduced_density(model: CompositeModel, pair: Tuple[int, int], protocol: Protocol, times,
                               params: Optional[DecoherenceParams] = None) -> np.ndarray:
    """rho_A[m, n](t) = rho_mn exp(-i omega_mn t) D_mn(t) on the grid."""
    grid = check_grid(times)
    m, n = pair
    _check_pair(model, m, n)
    rho_mnk = model.rho0.rho[m, n, :]
    rho_mn = complex(rho_mnk.sum())

    source = model if params is None or params.family == "empirical" else params
    omega = model.system.transition_frequencies()[m, n]

    if source is model and m != n and _is_zero_weight(rho_mnk, rho_mn):
        # p_mn is undefined but rho_mn D_mn is still the transform of the masses rho_mnk
        phi = _uniform_phi(protocol, grid)
        if protocol.count == 0:
            coherence = np.full(grid.size, rho_mn)
        else:
            if protocol.count != model.M:
                raise ShapeMismatchError(f"protocol has {protocol.count} pulses but model has {model.M}",
                                         path="protocol")
            coherence = _characteristic(_mean_gaps(model, m, n), rho_mnk, model.M * phi)
        return coherence * np.exp(-1j * omega * grid)

    curve = decoherence_curve(source, (m, n), protocol, grid)
    return rho_mn * np.exp(-1j * omega * grid) * curve.values


def factorized_series(model: CompositeModel, protocol: Protocol, times,
                      params: Optional[DecoherenceParams] = None) -> ReducedDensitySeries:
    """Full rho_A(t) assembled pair by pair from the factorized form."""
    grid = check_grid(times)
    rho = np.empty((grid.size, model.N, model.N), dtype=complex)
    for m in range(model.N):
        for n in range(model.N):
            rho[:, m, n] = factorized_reduced_density(model, (m, n), protocol, grid, params)
    return ReducedDensitySeries(times=grid, rho=rho)


def sanity_check_curve(curve: DecoherenceCurve, probability: bool = True) -> bool:
    """
    Check |D| <= 1 (for probability densities) and D = 1 at phi = 0.
    Returns True if the curve looks valid, False otherwise.
    """
    issues_found = False
    if probability:
        excess = float(np.abs(curve.values).max() - 1.0) if curve.values.size else 0.0
        if excess > DECOHERENCE_BOUND_TOL:
            logger.error("  ERROR: |D_%d%d| exceeds 1 by %.3g", curve.pair[0], curve.pair[1], excess)
            issues_found = True
    if curve.times.size and curve.times[0] == 0.0 and abs(curve.values[0] - 1.0) > DECOHERENCE_BOUND_TOL:
        logger.error("  ERROR: D_%d%d(0) = %r, expected 1", curve.pair[0], curve.pair[1], curve.values[0])
        issues_found = True
    return not issues_found


def sample_atoms(family: str, sigma: float, count: int, seed: int) -> np.ndarray:
    """count i.i.d. draws from the centred Gaussian or Lorentz (Cauchy) law of scale sigma."""
    if family not in PARAMETRIC_FAMILIES:
        raise ValidationError(f"cannot sample family '{family}'", path="family")
    if count < 1:
        raise ValidationError(f"need at least one atom, got {count}", path="count")
    rng = np.random.default_rng(seed)
    if family == "gaussian":
        return rng.normal(0.0, sigma, size=count)
    return sigma * rng.standard_cauchy(size=count)


def sample_effect_density(family: str, sigma: float, count: int, seed: int,
                          pair: Tuple[int, int] = (0, 1)) -> EffectDensity:
    """Equal-weight empirical density with atoms sampled from a parametric law."""
    atoms = sample_atoms(family, sigma, count, seed)
    return EffectDensity(pair=pair, atoms=atoms, weights=np.full(count, 1.0 / count))


def sampled_interaction(family: str, sigma: float, system_levels: int, device_levels: int,
                        pulses: Sequence[PulseShape], seed: int) -> InteractionSpec:
    """
    Interaction whose pairs (0, n) have i.i.d. sampled gaps x_0nk.

    Level 0 carries the sampled eigenvalues for every act; all other levels
    carry zero, so pairs (m, n) with m, n >= 1 do not dephase.
    """
    pulses = tuple(pulses)
    atoms = sample_atoms(family, sigma, device_levels, seed)
    xi = np.zeros((len(pulses), system_levels, device_levels))
    xi[:, 0, :] = atoms[None, :]
    return InteractionSpec(xi=xi, pulses=pulses)


def decoherence_by_count(family: str, sigma: float, counts: Sequence[int], phi: float = 1.0) -> np.ndarray:
    """Plateau factor after M instantaneous acts, for each M in counts."""
    counts = np.asarray(counts, dtype=int)
    if family == "gaussian":
        return np.array([decoherence_factor_gaussian(sigma, int(c), phi) for c in counts])
    if family == "lorentz":
        return np.array([decoherence_factor_lorentz(sigma, int(c), phi) for c in counts])
    raise ValidationError(f"'{family}' is not a parametric family", path="family")


def crossing_time(curve: DecoherenceCurve, level: float) -> Optional[float]:
    """First sampled time with |D| < level, or None if the curve never drops below it."""
    below = np.flatnonzero(np.abs(curve.values) < level)
    return float(curve.times[below[0]]) if below.size else None


def histogram(density: EffectDensity, bins: int = HISTOGRAM_BINS) -> pd.DataFrame:
    """Binned atom weights of an empirical density, for plotting only."""
    if not density.is_empirical:
        raise RepresentationError("only empirical densities can be binned", path="family")
    real, edges = np.histogram(density.atoms, bins=bins, weights=density.weights.real)
    imag, _ = np.histogram(density.atoms, bins=edges, weights=density.weights.imag)
    return pd.DataFrame({"left": edges[:-1], "right": edges[1:], "re_w": real, "im_w": imag})
