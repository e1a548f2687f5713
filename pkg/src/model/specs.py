"""
Spectral description of the system, the measuring device and their interaction.

Everything downstream works with the joint eigenbasis |n>|k>, in which
    H_A      -> E_n
    H_B      -> beta_k
    X_j      -> xi[j, n, k]
and the initial state enters only through its device-diagonal slices
    rho[m, n, k] = <m k| rho_AB(0) |n k>.

All records are frozen and their arrays are made read-only on construction.
Units: hbar = 1, energies in inverse time.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from src.config import (
    HERMITICITY_TOL,
    NEGATIVE_POPULATION_TOL,
    NORMALIZATION_TOL,
    PSD_TOL,
)
from src.errors import (
    HermiticityError,
    NormalizationError,
    PositivityError,
    ShapeMismatchError,
    ValidationError,
)
from src.protocol import Protocol, PulseShape

logger = logging.getLogger(__name__)

PROVENANCES = ("direct", "product", "full-composite")


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def _real_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ShapeMismatchError(f"{name} must be a nonempty list of numbers", path=name)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise ValidationError(f"{name}[{bad[0]}] is not finite", path=f"{name}[{bad[0]}]")
    return _frozen(arr)


@dataclass(frozen=True)
class SystemSpec:
    """System spectrum E_n. Degenerate levels are allowed."""

    energies: np.ndarray
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "energies", _real_vector(self.energies, "system.energies"))
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.energies.size:
                raise ShapeMismatchError(
                    f"{len(labels)} labels for {self.energies.size} levels", path="system.labels"
                )
            object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.energies.size)

    def transition_frequencies(self) -> np.ndarray:
        """omega[m, n] = E_m - E_n."""
        return self.energies[:, None] - self.energies[None, :]


@dataclass(frozen=True)
class DeviceSpec:
    """Device spectrum beta_k."""

    energies: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "energies", _real_vector(self.energies, "device.energies"))

    @property
    def size(self) -> int:
        return int(self.energies.size)


@dataclass(frozen=True)
class InteractionSpec:
    """Eigenvalues xi[j, n, k] of the measurement operators and one pulse per act."""

    xi: np.ndarray
    pulses: Tuple[PulseShape, ...] = field(default_factory=tuple)

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if xi.ndim != 3:
            raise ShapeMismatchError(f"xi must have shape (M, N, K), got ndim={xi.ndim}", path="interaction.xi")
        pulses = tuple(self.pulses)
        if len(pulses) != xi.shape[0]:
            raise ShapeMismatchError(
                f"{xi.shape[0]} measurement operators but {len(pulses)} pulses",
                path="interaction.pulses",
            )
        bad = np.argwhere(~np.isfinite(xi))
        if bad.size:
            j, n, k = bad[0]
            raise ValidationError(f"xi[{j}][{n}][{k}] is not finite", path=f"interaction.xi[{j}][{n}][{k}]")
        object.__setattr__(self, "xi", _frozen(xi))
        object.__setattr__(self, "pulses", pulses)

    @property
    def count(self) -> int:
        return int(self.xi.shape[0])

    @property
    def protocol(self) -> Protocol:
        return Protocol(self.pulses)

    def gaps(self) -> np.ndarray:
        """x[j, m, n, k] = xi[j, m, k] - xi[j, n, k]; antisymmetric in (m, n)."""
        return self.xi[:, :, None, :] - self.xi[:, None, :, :]


@dataclass(frozen=True)
class RhoInitial:
    """Device-diagonal slices rho[m, n, k] of the composite initial state."""

    rho: np.ndarray
    provenance: str = "direct"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance '{self.provenance}'", path="provenance")
        rho = np.array(self.rho, dtype=complex)
        if rho.ndim != 3 or rho.shape[0] != rho.shape[1]:
            raise ShapeMismatchError(f"rho must have shape (N, N, K), got {rho.shape}", path="rho")
        if not np.all(np.isfinite(rho)):
            raise ValidationError("rho contains non-finite entries", path="rho")

        # Hermiticity in the system indices, slice by slice
        defect = np.abs(rho - np.conj(np.transpose(rho, (1, 0, 2))))
        if defect.size and defect.max() > HERMITICITY_TOL:
            m, n, k = np.unravel_index(int(np.argmax(defect)), defect.shape)
            raise HermiticityError(
                f"Hermiticity violated at rho[{m}][{n}][{k}] (defect {defect[m, n, k]:.3g})",
                path=f"rho[{m}][{n}][{k}]",
            )
        # Symmetrize away sub-tolerance defects
        rho = 0.5 * (rho + np.conj(np.transpose(rho, (1, 0, 2))))

        n_levels = rho.shape[0]
        diag = np.array([rho[n, n, :] for n in range(n_levels)])  # (N, K)
        if np.abs(diag.imag).max() > HERMITICITY_TOL:
            n, k = np.unravel_index(int(np.argmax(np.abs(diag.imag))), diag.shape)
            raise HermiticityError(f"population rho[{n}][{n}][{k}] is not real", path=f"rho[{n}][{n}][{k}]")
        populations = diag.real
        if populations.min() < -NEGATIVE_POPULATION_TOL:
            n, k = np.unravel_index(int(np.argmin(populations)), populations.shape)
            raise PositivityError(
                f"negative population rho[{n}][{n}][{k}] = {populations[n, k]:.3g}",
                path=f"rho[{n}][{n}][{k}]",
            )
        populations = np.clip(populations, 0.0, None)
        for n in range(n_levels):
            rho[n, n, :] = populations[n]

        trace = float(populations.sum())
        if abs(trace - 1.0) > NORMALIZATION_TOL:
            raise NormalizationError(f"normalization violated: sum of populations is {trace!r}", path="rho")

        object.__setattr__(self, "rho", _frozen(rho))

    @property
    def system_size(self) -> int:
        return int(self.rho.shape[0])

    @property
    def device_size(self) -> int:
        return int(self.rho.shape[2])

    def marginal(self) -> np.ndarray:
        """rho_mn = sum_k rho[m, n, k], the system state at t = 0."""
        return self.rho.sum(axis=2)


@dataclass(frozen=True)
class CompositeModel:
    """System + device + interaction + initial state, with consistent shapes."""

    system: SystemSpec
    device: DeviceSpec
    interaction: InteractionSpec
    rho0: RhoInitial

    def __post_init__(self):
        n, k = self.system.size, self.device.size
        _, xn, xk = self.interaction.xi.shape
        if (xn, xk) != (n, k):
            raise ShapeMismatchError(
                f"xi has shape (M, {xn}, {xk}) but system has {n} levels and device {k}",
                path="interaction.xi",
            )
        if self.rho0.rho.shape != (n, n, k):
            raise ShapeMismatchError(
                f"initial state has shape {self.rho0.rho.shape}, expected {(n, n, k)}",
                path="initial_state",
            )

    @property
    def N(self) -> int:
        return self.system.size

    @property
    def K(self) -> int:
        return self.device.size

    @property
    def M(self) -> int:
        return self.interaction.count

    @property
    def protocol(self) -> Protocol:
        return self.interaction.protocol

    def composite_diagonal(self, pulse_values) -> np.ndarray:
        """
        Diagonal of H_AB in the joint basis for pulse amplitudes f_j.

        pulse_values has shape (M,) for one instant, giving (N, K), or (S, M)
        for S instants, giving (S, N, K).
        """
        f = np.asarray(pulse_values, dtype=float)
        if f.ndim not in (1, 2) or f.shape[-1] != self.M:
            raise ShapeMismatchError(f"expected pulse values of shape (M,) or (S, M) with M={self.M}, got {f.shape}")
        base = self.system.energies[:, None] + self.device.energies[None, :]
        if self.M == 0:
            return np.broadcast_to(base, f.shape[:-1] + base.shape).copy()
        return base + np.tensordot(f, self.interaction.xi, axes=(-1, 0))


def build_from_spectral(
    system: SystemSpec,
    device: DeviceSpec,
    interaction: InteractionSpec,
    rho0: RhoInitial,
) -> CompositeModel:
    """Assemble a validated model from spectral data (joint basis by construction)."""
    model = CompositeModel(system=system, device=device, interaction=interaction, rho0=rho0)
    logger.debug("Built spectral model N=%d K=%d M=%d (%s)", model.N, model.K, model.M, rho0.provenance)
    return model


def check_density_matrix(matrix, name: str) -> np.ndarray:
    """
    Validate a user density matrix and return a unit-trace copy.

    Hermiticity, unit trace and positivity are checked within PSD_TOL.
    Small negative eigenvalues inside the tolerance are clamped to zero.
    """
    mat = np.array(matrix, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
        raise ShapeMismatchError(f"{name} must be a nonempty square matrix, got shape {mat.shape}", path=name)
    if not np.all(np.isfinite(mat)):
        raise ValidationError(f"{name} contains non-finite entries", path=name)

    defect = np.abs(mat - mat.conj().T)
    if defect.max() > PSD_TOL:
        i, j = np.unravel_index(int(np.argmax(defect)), defect.shape)
        raise HermiticityError(f"{name} is not Hermitian at [{i}][{j}]", path=f"{name}[{i}][{j}]")
    mat = 0.5 * (mat + mat.conj().T)

    trace = float(np.trace(mat).real)
    if abs(trace - 1.0) > PSD_TOL:
        raise NormalizationError(f"normalization violated: trace of {name} is {trace!r}", path=name)

    eigvals, eigvecs = np.linalg.eigh(mat)
    if eigvals[0] < -PSD_TOL:
        raise PositivityError(f"{name} has negative eigenvalue {eigvals[0]:.3g}", path=name)
    if eigvals[0] < 0:
        clipped = np.clip(eigvals, 0.0, None)
        mat = (eigvecs * clipped) @ eigvecs.conj().T

    return mat / np.trace(mat).real


def check_populations(values, name: str) -> np.ndarray:
    """Validate a diagonal density matrix given by its populations; returns them summing to 1."""
    pops = np.asarray(values)
    if pops.ndim != 1 or pops.size == 0:
        raise ShapeMismatchError(f"{name} populations must be a nonempty vector, got shape {pops.shape}", path=name)
    if not np.all(np.isfinite(pops)):
        raise ValidationError(f"{name} contains non-finite entries", path=name)
    if np.iscomplexobj(pops):
        imag = np.abs(pops.imag)
        if imag.max() > PSD_TOL:
            i = int(np.argmax(imag))
            raise HermiticityError(f"{name} population [{i}] is not real", path=f"{name}[{i}][{i}]")
        pops = pops.real
    pops = np.array(pops, dtype=float)
    if pops.min() < -PSD_TOL:
        i = int(np.argmin(pops))
        raise PositivityError(f"{name} has negative population {pops[i]:.3g} at [{i}]", path=f"{name}[{i}][{i}]")
    pops = np.clip(pops, 0.0, None)
    total = float(pops.sum())
    if abs(total - 1.0) > PSD_TOL:
        raise NormalizationError(f"normalization violated: trace of {name} is {total!r}", path=name)
    return pops / total


def device_populations(rhoB) -> np.ndarray:
    """
    Populations of the device state, the only part of rho_B the slices keep.

    rhoB is either a population vector or a K x K matrix. A diagonal matrix is
    checked through its populations alone; only a matrix with coherences goes
    through the full positivity check.
    """
    mat = np.asarray(rhoB)
    if mat.ndim == 1:
        return check_populations(mat, "rhoB")
    if mat.ndim == 2 and mat.shape[0] == mat.shape[1] and mat.size:
        off = mat[~np.eye(mat.shape[0], dtype=bool)]
        if not np.any(off):
            return check_populations(np.diagonal(mat), "rhoB")
    return np.diag(check_density_matrix(mat, "rhoB")).real


def rho_from_product(rhoA, rhoB) -> RhoInitial:
    """Initial slices for an uncorrelated state rho_A (x) rho_B; rhoB may be given as populations."""
    a = check_density_matrix(rhoA, "rhoA")
    populations = device_populations(rhoB)
    rho = a[:, :, None] * populations[None, None, :]
    return RhoInitial(rho=rho, provenance="product")


def rho_from_full_composite(rhoAB, system_dim: int, device_dim: int) -> RhoInitial:
    """
    Device-diagonal slices of a full composite density matrix.

    Index flattening is system-major: row (m, k) -> m * K + k.
    """
    mat = np.asarray(rhoAB)
    if mat.ndim != 2 or mat.shape[0] != system_dim * device_dim:
        raise ShapeMismatchError(
            f"composite matrix of shape {mat.shape} does not factor as N*K = {system_dim}*{device_dim}",
            path="rhoAB",
        )
    mat = check_density_matrix(mat, "rhoAB")
    blocks = mat.reshape(system_dim, device_dim, system_dim, device_dim)
    rho = np.einsum("mknk->mnk", blocks)
    return RhoInitial(rho=rho, provenance="full-composite")
