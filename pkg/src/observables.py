"""
Expectation values of system observables along the reduced evolution.

    <A(t)> = sum_n rho_nn A_nn  +  sum_{m != n} rho_A[m, n](t) A[n, m]

The first (diagonal) term never changes in time; the second (coherent) term
is what decoherence suppresses, so the long-time limit is the diagonal
ensemble sum_n rho_nn A_nn.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from src.config import HERMITICITY_TOL, REALNESS_TOL
from src.decoherence import DecoherenceParams, decoherence_curve, factorized_reduced_density
from src.errors import HermiticityError, ShapeMismatchError, ValidationError, ZeroWeight
from src.evolution import ReducedDensitySeries, check_grid
from src.model import CompositeModel
from src.protocol import Protocol

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observable:
    """Hermitian system operator A[m, n] in the energy basis."""

    matrix: np.ndarray
    label: str = "A"

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
            raise ShapeMismatchError(
                f"observable '{self.label}' must be a nonempty square matrix, got shape {mat.shape}",
                path=f"observables.{self.label}",
            )
        if not np.all(np.isfinite(mat)):
            raise ValidationError(f"observable '{self.label}' has non-finite entries", path=f"observables.{self.label}")
        scale = max(1.0, float(np.abs(mat).max()))
        defect = np.abs(mat - mat.conj().T)
        if defect.max() > HERMITICITY_TOL * scale:
            i, j = np.unravel_index(int(np.argmax(defect)), defect.shape)
            raise HermiticityError(
                f"observable '{self.label}' is not Hermitian at [{i}][{j}]",
                path=f"observables.{self.label}[{i}][{j}]",
            )
        mat = 0.5 * (mat + mat.conj().T)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def size(self) -> int:
        return int(self.matrix.shape[0])

    def norm(self) -> float:
        """Spectral norm ||A||."""
        return float(np.linalg.norm(self.matrix, ord=2))


@dataclass(frozen=True)
class ObservableSeries:
    """<A(t)> per sample, split into its constant diagonal part and its coherent part."""

    label: str
    times: np.ndarray
    values: np.ndarray
    diagonal_part: np.ndarray
    coherent_part: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.times,
            "value": self.values,
            "diagonal_part": self.diagonal_part,
            "coherent_part": self.coherent_part,
        })


def _check_dimension(observable: Observable, size: int):
    if observable.size != size:
        raise ShapeMismatchError(
            f"observable '{observable.label}' is {observable.size}x{observable.size} "
            f"but the system has {size} levels",
            path=f"observables.{observable.label}",
        )


def _real(values: np.ndarray, label: str, part: str) -> np.ndarray:
    values = np.asarray(values, dtype=complex)
    if values.size:
        imag = float(np.abs(values.imag).max())
        if imag > REALNESS_TOL:
            logger.warning("  WARNING: %s part of <%s> has imaginary residue %.3g", part, label, imag)
    return values.real.copy()


def _series(label: str, grid: np.ndarray, diagonal: complex, coherent: np.ndarray) -> ObservableSeries:
    diagonal_part = np.full(grid.size, _real(np.array([diagonal]), label, "diagonal")[0])
    coherent_part = _real(coherent, label, "coherent")
    return ObservableSeries(
        label=label,
        times=grid,
        values=diagonal_part + coherent_part,
        diagonal_part=diagonal_part,
        coherent_part=coherent_part,
    )


def expectation_direct(series: ReducedDensitySeries, A: Observable) -> ObservableSeries:
    """<A(t)> = Tr[rho_A(t) A] from a sampled reduced density series."""
    _check_dimension(A, series.size)
    # terms[t, m, n] = rho_A[m, n](t) A[n, m]
    terms = series.rho * A.matrix.T[None, :, :]
    diagonal = np.trace(terms, axis1=1, axis2=2)
    off = ~np.eye(series.size, dtype=bool)
    coherent = terms[:, off].sum(axis=-1)

    diagonal_part = _real(diagonal, A.label, "diagonal")
    drift = float(np.ptp(diagonal_part)) if diagonal_part.size else 0.0
    if drift > REALNESS_TOL:
        logger.warning("  WARNING: diagonal part of <%s> drifts by %.3g", A.label, drift)
    coherent_part = _real(coherent, A.label, "coherent")
    return ObservableSeries(
        label=A.label,
        times=series.times,
        values=diagonal_part + coherent_part,
        diagonal_part=diagonal_part,
        coherent_part=coherent_part,
    )


def diagonal_ensemble(model: CompositeModel, A: Observable) -> float:
    """Complete-decoherence limit sum_n rho_nn A_nn."""
    _check_dimension(A, model.N)
    populations = np.diag(model.rho0.marginal())
    return float(np.real(np.sum(populations * np.diag(A.matrix))))


def expectation_factorized(model: CompositeModel, A: Observable, protocol: Protocol, times,
                           params: Optional[DecoherenceParams] = None) -> ObservableSeries:
    """
    <A(t)> from the factorized coherences rho_mn exp(-i omega_mn t) D_mn(t).

    Raises NonUniformImpact when the integral impacts differ on the grid.
    """
    _check_dimension(A, model.N)
    grid = check_grid(times)
    coherent = np.zeros(grid.size, dtype=complex)
    for m in range(model.N):
        for n in range(model.N):
            if m == n:
                continue
            coherent += factorized_reduced_density(model, (m, n), protocol, grid, params) * A.matrix[n, m]
    if model.N == 1:
        # No coherences, but the impact condition still has to be checked
        factorized_reduced_density(model, (0, 0), protocol, grid, params)
    return _series(A.label, grid, diagonal_ensemble(model, A), coherent)


def equilibration_bound(model: CompositeModel, A: Observable, protocol: Protocol, times,
                        params: Optional[DecoherenceParams] = None) -> np.ndarray:
    """
    Upper bound on |<A(t)> - diagonal_ensemble|:

        (sum_{m != n} |rho_mn| |A_nm|) * max_{m != n} |D_mn(t)|

    A pair whose slices cancel to rho_mn = 0 has no D_mn; it adds
    |A_nm| |rho_A[m, n](t)| instead.
    """
    _check_dimension(A, model.N)
    grid = check_grid(times)
    marginal = model.rho0.marginal()
    weight = 0.0
    envelope = np.zeros(grid.size)
    cancelled = np.zeros(grid.size)
    source = model if params is None or params.family == "empirical" else params
    for m in range(model.N):
        for n in range(model.N):
            if m == n:
                continue
            coupling = abs(A.matrix[n, m])
            if coupling == 0.0:
                continue
            try:
                curve = decoherence_curve(source, (m, n), protocol, grid)
            except ZeroWeight:
                cancelled += coupling * np.abs(factorized_reduced_density(model, (m, n), protocol, grid, params))
                continue
            amplitude = abs(marginal[m, n]) * coupling
            if amplitude == 0.0:
                continue
            weight += amplitude
            envelope = np.maximum(envelope, np.abs(curve.values))
    return weight * envelope + cancelled


def coherence_l1(series: ReducedDensitySeries) -> np.ndarray:
    """l1 norm of coherence sum_{m != n} |rho_A[m, n](t)| per sample."""
    off = ~np.eye(series.size, dtype=bool)
    return np.abs(series.rho[:, off]).sum(axis=-1)
