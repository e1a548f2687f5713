"""
Time evolution of the reduced system density matrix.

Two independent paths are provided:
- Closed form: every device-diagonal element only picks up a phase,
      rho[m, n, k](t) = rho[m, n, k](0) exp{-i [omega_mn t + sum_j x[j, m, n, k] phi_j(t)]}
  and rho_A(t) is the sum over k.
- Oracle: the composite state is stepped through time with short-time
  propagators exp(-i H_AB(t + dt/2) dt), built only from the spectra and the
  pulse amplitudes, then the device is traced out. It shares no phase-assembly
  code with the closed form.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import pandas as pd

from src.config import HERMITICITY_TOL, NORMALIZATION_TOL, TIME_CHUNK
from src.errors import StepSizeError, ValidationError
from src.model import CompositeModel
from src.protocol import all_phases, phase_matrix, pulse_value

logger = logging.getLogger(__name__)

# Grid times within this fraction of a step from a lattice point are snapped to it
_LATTICE_SNAP = 1e-9


@dataclass(frozen=True)
class ReducedDensitySeries:
    """rho_A(t) sampled on a time grid: times (T,), rho (T, N, N)."""

    times: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        rho = np.array(self.rho, dtype=complex)
        times.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "rho", rho)

    @property
    def size(self) -> int:
        return int(self.rho.shape[1])

    def element(self, m: int, n: int) -> np.ndarray:
        return self.rho[:, m, n]

    def to_frame(self) -> pd.DataFrame:
        """Long table with columns t, m, n, re, im (t-major, then m, then n)."""
        steps, n_levels = self.times.size, self.size
        m_idx, n_idx = np.meshgrid(np.arange(n_levels), np.arange(n_levels), indexing="ij")
        return pd.DataFrame({
            "t": np.repeat(self.times, n_levels * n_levels),
            "m": np.tile(m_idx.ravel(), steps),
            "n": np.tile(n_idx.ravel(), steps),
            "re": self.rho.real.ravel(),
            "im": self.rho.imag.ravel(),
        })

    def to_dict(self) -> dict:
        pairs = np.stack([self.rho.real, self.rho.imag], axis=-1)
        return {"times": self.times.tolist(), "rho": pairs.tolist()}


def check_grid(times) -> np.ndarray:
    grid = np.asarray(times, dtype=float).ravel()
    if grid.size == 0:
        raise ValidationError("time grid is empty", path="times")
    if not np.all(np.isfinite(grid)) or grid.min() < 0:
        raise ValidationError("time grid must be finite and >= 0", path="times")
    if np.any(np.diff(grid) < 0):
        raise ValidationError("time grid must be nondecreasing", path="times")
    return grid


def _check_index(value: int, size: int, name: str):
    if not 0 <= value < size:
        raise ValidationError(f"index {name}={value} out of range [0, {size})", path=name)


def evolve_element(model: CompositeModel, m: int, n: int, k: int, t: float) -> complex:
    """rho[m, n, k](t) from the closed form."""
    _check_index(m, model.N, "m")
    _check_index(n, model.N, "n")
    _check_index(k, model.K, "k")
    if t < 0:
        raise ValidationError(f"time must be >= 0, got {t}", path="t")

    phases = all_phases(model.protocol, t).phases
    gaps = model.interaction.gaps()
    theta = model.system.transition_frequencies()[m, n] * t
    for j in range(model.M):
        theta = theta + gaps[j, m, n, k] * phases[j]
    return complex(model.rho0.rho[m, n, k] * np.exp(-1j * theta))


def _closed_form_chunk(model: CompositeModel, gaps: np.ndarray, times: np.ndarray,
                       phases: np.ndarray) -> np.ndarray:
    omega = model.system.transition_frequencies()
    theta = omega[None, :, :, None] * times[:, None, None, None]
    for j in range(model.M):
        theta = theta + gaps[j][None, :, :, :] * phases[:, j][:, None, None, None]
    # k is the last, contiguous axis: the per-element sum order never depends on chunking
    terms = np.ascontiguousarray(model.rho0.rho[None, :, :, :] * np.exp(-1j * theta))
    return terms.sum(axis=-1)


def _chunks(size: int) -> List[slice]:
    return [slice(i, min(i + TIME_CHUNK, size)) for i in range(0, size, TIME_CHUNK)]


def reduced_density(model: CompositeModel, times: Sequence[float], threads: int = 1) -> ReducedDensitySeries:
    """rho_A(t) = sum_k rho[m, n, k](t) on every grid time."""
    grid = check_grid(times)
    phases = phase_matrix(model.protocol, grid)
    gaps = model.interaction.gaps()

    pieces = _chunks(grid.size)

    def work(sl):
        return _closed_form_chunk(model, gaps, grid[sl], phases[sl])

    if threads > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(work, pieces))
    else:
        blocks = [work(sl) for sl in pieces]

    return ReducedDensitySeries(times=grid, rho=np.concatenate(blocks, axis=0))


def _composite_initial_state(model: CompositeModel) -> np.ndarray:
    """Full (NK x NK) matrix holding the device-diagonal slices, system-major."""
    n, k = model.N, model.K
    full = np.zeros((n, k, n, k), dtype=complex)
    for d in range(k):
        full[:, d, :, d] = model.rho0.rho[:, :, d]
    return full.reshape(n * k, n * k)


def _pulse_values(protocol, instants: np.ndarray) -> np.ndarray:
    values = np.zeros((instants.size, protocol.count))
    for j, pulse in enumerate(protocol.pulses):
        values[:, j] = pulse_value(pulse, instants)
    return values


def oracle_evolve(model: CompositeModel, times: Sequence[float], dt: float,
                  smoothing_width: float) -> ReducedDensitySeries:
    """
    Brute-force reduced dynamics by short-time stepping of the composite state.

    Delta kicks are replaced by smoothed kicks of the given width. Propagation
    runs on the uniform lattice n*dt from t = 0; a grid time between lattice
    points is reached by one extra partial step that is not carried forward.
    """
    if not dt > 0:
        raise StepSizeError(f"step must be positive, got {dt}", path="dt")
    grid = check_grid(times)
    protocol = model.protocol
    if protocol.has_kicks:
        if not smoothing_width > 0:
            raise StepSizeError("smoothing width must be positive when kicks are present", path="smoothing_width")
        if dt > smoothing_width / 10.0 * (1 + 1e-12):
            raise StepSizeError(
                f"step {dt} too coarse for smoothing width {smoothing_width}: need dt <= w/10",
                path="dt",
            )
        protocol = protocol.smoothed(smoothing_width)
        for pulse in protocol.pulses:
            if pulse.kind == "smoothed_delta" and pulse.t < 3.0 * pulse.width:
                raise StepSizeError(
                    f"kick at t={pulse.t} lies within 3 widths of t=0 and cannot be smoothed",
                    path="pulses",
                )

    n_steps = int(math.floor(grid.max() / dt + _LATTICE_SNAP))
    midpoints = (np.arange(n_steps) + 0.5) * dt
    # instantaneous eigenvalues of H_AB at each step midpoint, flattened system-major
    step_levels = model.composite_diagonal(_pulse_values(protocol, midpoints)).reshape(n_steps, model.N * model.K)
    factors = np.exp(-1j * step_levels * dt)
    # propagator diagonal after i full steps, i = 0..n_steps
    propagators = np.vstack([np.ones((1, model.N * model.K), dtype=complex), np.cumprod(factors, axis=0)])

    rho0 = _composite_initial_state(model)
    out = np.empty((grid.size, model.N, model.N), dtype=complex)
    for i, t in enumerate(grid):
        full_steps = min(n_steps, int(math.floor(t / dt + _LATTICE_SNAP)))
        u = propagators[full_steps]
        remainder = t - full_steps * dt
        if remainder > _LATTICE_SNAP * dt:
            mid = np.array([full_steps * dt + 0.5 * remainder])
            partial = model.composite_diagonal(_pulse_values(protocol, mid)[0]).ravel()
            u = u * np.exp(-1j * partial * remainder)
        state = u[:, None] * rho0 * np.conj(u)[None, :]
        blocks = state.reshape(model.N, model.K, model.N, model.K)
        out[i] = np.einsum("mknk->mn", blocks)

    return ReducedDensitySeries(times=grid, rho=out)


def sanity_check_series(series: ReducedDensitySeries, populations: np.ndarray = None) -> bool:
    """
    Check the invariants every reduced series must satisfy.
    Returns True if the series looks valid, False otherwise.
    """
    logger.info("Performing reduced density sanity checks...")
    issues_found = False
    rho = series.rho

    traces = np.trace(rho, axis1=1, axis2=2)
    trace_error = float(np.abs(traces - 1.0).max())
    if trace_error > NORMALIZATION_TOL:
        logger.error("  ERROR: trace deviates from 1 by %.3g", trace_error)
        issues_found = True

    hermiticity_error = float(np.abs(rho - np.conj(np.transpose(rho, (0, 2, 1)))).max())
    if hermiticity_error > HERMITICITY_TOL:
        logger.error("  ERROR: series is not Hermitian (defect %.3g)", hermiticity_error)
        issues_found = True

    diagonals = np.real(np.diagonal(rho, axis1=1, axis2=2))
    reference = diagonals[0] if populations is None else np.asarray(populations)
    drift = float(np.abs(diagonals - reference[None, :]).max())
    if drift > NORMALIZATION_TOL:
        logger.error("  ERROR: populations drift by %.3g", drift)
        issues_found = True

    if issues_found:
        logger.error("  SANITY CHECK FAILED: One or more issues detected.")
        return False
    logger.info("  SANITY CHECK PASSED: %d samples, trace/Hermiticity/populations intact.", series.times.size)
    return True
