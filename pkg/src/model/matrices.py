"""
Matrix-mode input: reduce commuting Hermitian matrices to the spectral model.

Steps performed by build_from_matrices:
1. Lift factor-space Hamiltonians to the composite space when needed
2. Check every pairwise commutator of {H_A, H_B, X_1..X_M} (nondestructiveness)
3. Find a system basis and a device basis by jointly diagonalizing partial
   traces of the family, and verify every operator is diagonal in their
   tensor product
4. Read off E_n, beta_k, xi[j, n, k] and the device-diagonal state slices
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src.config import (
    COMMUTATOR_TOL,
    DIAGONALIZATION_TOL,
    JOINT_DIAG_RETRIES,
    PRODUCT_STRUCTURE_TOL,
    PSD_TOL,
    settings,
)
from src.errors import (
    CommutatorViolation,
    HermiticityError,
    JointDiagonalizationFailure,
    ShapeMismatchError,
)
from src.model.specs import (
    CompositeModel,
    DeviceSpec,
    InteractionSpec,
    SystemSpec,
    build_from_spectral,
    rho_from_full_composite,
)
from src.protocol import PulseShape

logger = logging.getLogger(__name__)

# Relative gap below which eigenvalues count as degenerate in the block-wise fallback
_DEGENERACY_TOL = 1e-8


@dataclass(frozen=True)
class CommutatorRecord:
    """Residual of one pairwise commutator."""

    pair: Tuple[str, str]
    residual: float
    relative: float
    accepted: bool

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "residual": self.residual,
            "relative": self.relative,
            "accepted": self.accepted,
        }


def commutator_residual(p: np.ndarray, q: np.ndarray) -> Tuple[float, float]:
    """Absolute and relative Frobenius norm of [p, q]."""
    residual = float(np.linalg.norm(p @ q - q @ p))
    scale = float(np.linalg.norm(p) * np.linalg.norm(q))
    relative = residual / scale if scale > 0 else 0.0
    return residual, relative


def check_commutators(named_ops: Sequence[Tuple[str, np.ndarray]]) -> List[CommutatorRecord]:
    """
    Pairwise commutator check for a family of operators.

    A pair is accepted when ||[P, Q]||_F <= COMMUTATOR_TOL * ||P||_F * ||Q||_F.
    """
    records = []
    for (name_p, p), (name_q, q) in combinations(named_ops, 2):
        residual, relative = commutator_residual(p, q)
        scale = float(np.linalg.norm(p) * np.linalg.norm(q))
        accepted = residual <= COMMUTATOR_TOL * scale
        records.append(CommutatorRecord((name_p, name_q), residual, relative, accepted))
    return records


def _offdiagonal_residual(op: np.ndarray, basis: np.ndarray) -> float:
    rotated = basis.conj().T @ op @ basis
    off = rotated - np.diag(np.diag(rotated))
    return float(np.linalg.norm(off)) / max(1.0, float(np.linalg.norm(op)))


def _clusters(values: np.ndarray) -> List[np.ndarray]:
    """Group indices of (sorted) eigenvalues that coincide within _DEGENERACY_TOL."""
    order = np.argsort(values, kind="stable")
    scale = max(1.0, float(np.abs(values).max())) if values.size else 1.0
    groups, current = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if values[b] - values[a] <= _DEGENERACY_TOL * scale:
            current.append(b)
        else:
            groups.append(np.array(current))
            current = [b]
    groups.append(np.array(current))
    return groups


def _blockwise(ops: Sequence[np.ndarray]) -> np.ndarray:
    """Sequential diagonalization, refining degenerate subspaces one operator at a time."""
    dim = ops[0].shape[0]
    basis = np.eye(dim, dtype=complex)
    groups = [np.arange(dim)]
    for op in ops:
        refined = []
        for group in groups:
            sub_basis = basis[:, group]
            sub = sub_basis.conj().T @ op @ sub_basis
            values, vectors = linalg.eigh(0.5 * (sub + sub.conj().T))
            basis[:, group] = sub_basis @ vectors
            for cluster in _clusters(values):
                refined.append(group[np.sort(cluster)])
        groups = refined
    return basis


def joint_diagonalize(ops: Sequence[np.ndarray], seed: Optional[int] = None) -> np.ndarray:
    """
    Common eigenbasis (columns) of a commuting family of Hermitian matrices.

    A random real combination of the family is diagonalized; degeneracies of the
    combination are lifted generically. Each attempt is verified, with up to
    JOINT_DIAG_RETRIES fresh combinations before the block-wise fallback.
    """
    ops = [np.asarray(op, dtype=complex) for op in ops]
    rng = np.random.default_rng(settings.seed if seed is None else seed)

    worst = np.inf
    for attempt in range(JOINT_DIAG_RETRIES):
        coefficients = rng.standard_normal(len(ops))
        combination = sum(c * op for c, op in zip(coefficients, ops))
        _, basis = linalg.eigh(0.5 * (combination + combination.conj().T))
        worst = max(_offdiagonal_residual(op, basis) for op in ops)
        if worst <= DIAGONALIZATION_TOL:
            return basis
        logger.debug("Random combination %d left residual %.3g, retrying", attempt + 1, worst)

    logger.info("Random combinations failed (residual %.3g); using block-wise diagonalization", worst)
    basis = _blockwise(ops)
    worst = max(_offdiagonal_residual(op, basis) for op in ops)
    if worst > DIAGONALIZATION_TOL:
        raise JointDiagonalizationFailure(
            f"family could not be jointly diagonalized: residual {worst:.3g}", residual=worst
        )
    return basis


def lappo_danilevsky_residual(HA, HB, Xj, pulse_values, phases, t: float) -> float:
    """
    Relative Frobenius norm of [H(t), integral_0^t H] for matrix inputs.

    H(t) = HA + HB + sum_j f_j X_j and its integral is t (HA + HB) + sum_j phi_j X_j.
    """
    h0 = np.asarray(HA, dtype=complex) + np.asarray(HB, dtype=complex)
    h_t = h0 + sum(f * np.asarray(x) for f, x in zip(pulse_values, Xj))
    integral = t * h0 + sum(p * np.asarray(x) for p, x in zip(phases, Xj))
    _, relative = commutator_residual(h_t, integral)
    return relative


def _lift(op, system_dim: int, device_dim: int, side: str, name: str) -> np.ndarray:
    mat = np.asarray(op, dtype=complex)
    total = system_dim * device_dim
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeMismatchError(f"{name} must be square, got shape {mat.shape}", path=name)
    if mat.shape[0] == total:
        return mat
    if side == "system" and mat.shape[0] == system_dim:
        return np.kron(mat, np.eye(device_dim))
    if side == "device" and mat.shape[0] == device_dim:
        return np.kron(np.eye(system_dim), mat)
    raise ShapeMismatchError(
        f"{name} has dimension {mat.shape[0]}, expected {total}"
        + (f" or {system_dim}" if side == "system" else f" or {device_dim}" if side == "device" else ""),
        path=name,
    )


def lift_family(HA, HB, Xj: Sequence, system_dim: int, device_dim: int) -> List[Tuple[str, np.ndarray]]:
    """Named composite-space operators [("HA", .), ("HB", .), ("X1", .), ...]."""
    n, k = int(system_dim), int(device_dim)
    if n < 1 or k < 1:
        raise ShapeMismatchError(f"factor dimensions must be >= 1, got {n} and {k}", path="system_dim")
    named = [("HA", _lift(HA, n, k, "system", "HA")), ("HB", _lift(HB, n, k, "device", "HB"))]
    named += [(f"X{j + 1}", _lift(x, n, k, "composite", f"X{j + 1}")) for j, x in enumerate(Xj)]
    return named


def _require_hermitian(mat: np.ndarray, name: str):
    defect = float(np.abs(mat - mat.conj().T).max())
    if defect > PSD_TOL * max(1.0, float(np.abs(mat).max())):
        raise HermiticityError(f"{name} is not Hermitian (defect {defect:.3g})", path=name)


def _system_marginal(op: np.ndarray, weight: np.ndarray, n: int, k: int) -> np.ndarray:
    """Tr_B[op (1 (x) weight)] as an N x N matrix."""
    return np.einsum("mknl,lk->mn", op.reshape(n, k, n, k), weight)


def _device_marginal(op: np.ndarray, weight: np.ndarray, n: int, k: int) -> np.ndarray:
    """Tr_A[op (weight (x) 1)] as a K x K matrix."""
    return np.einsum("mknl,nm->kl", op.reshape(n, k, n, k), weight)


def _random_hermitian(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (a + a.conj().T)


def _hermitian_part(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.conj().T)


def build_from_matrices(
    HA,
    HB,
    Xj: Sequence,
    rhoAB,
    system_dim: int,
    device_dim: int,
    pulses: Sequence[PulseShape] = (),
    seed: Optional[int] = None,
) -> CompositeModel:
    """
    Spectral model from commuting Hermitian matrices on the composite space.

    HA may be given as an N x N factor (lifted to HA (x) 1) and HB as a K x K
    factor (lifted to 1 (x) HB). X_j and rhoAB are composite (NK x NK) matrices
    in system-major ordering.
    """
    n, k = int(system_dim), int(device_dim)
    named = lift_family(HA, HB, Xj, n, k)
    ha, hb = named[0][1], named[1][1]
    xs = [mat for _, mat in named[2:]]
    pulses = tuple(pulses) if pulses else tuple(PulseShape.delta(0.0) for _ in xs)
    if len(pulses) != len(xs):
        raise ShapeMismatchError(f"{len(xs)} operators but {len(pulses)} pulses", path="pulses")

    for name, mat in named:
        _require_hermitian(mat, name)

    for record in check_commutators(named):
        if not record.accepted:
            raise CommutatorViolation(record.pair, record.residual, record.relative)

    rng = np.random.default_rng(settings.seed if seed is None else seed)
    device_mix = _random_hermitian(rng, k)
    system_mix = _random_hermitian(rng, n)

    system_family = [_system_marginal(ha, np.eye(k), n, k) / k]
    device_family = [_device_marginal(hb, np.eye(n), n, k) / n]
    for x in xs:
        system_family.append(_system_marginal(x, np.eye(k), n, k))
        system_family.append(_hermitian_part(_system_marginal(x, device_mix, n, k)))
        device_family.append(_device_marginal(x, np.eye(n), n, k))
        device_family.append(_hermitian_part(_device_marginal(x, system_mix, n, k)))

    u_sys = joint_diagonalize(system_family, seed=seed)
    u_dev = joint_diagonalize(device_family, seed=seed)

    # Order levels by energy (stable) so recovered spectra come out sorted
    e_levels = np.real(np.einsum("ia,ij,ja->a", u_sys.conj(), system_family[0], u_sys))
    b_levels = np.real(np.einsum("ia,ij,ja->a", u_dev.conj(), device_family[0], u_dev))
    u_sys = u_sys[:, np.argsort(e_levels, kind="stable")]
    u_dev = u_dev[:, np.argsort(b_levels, kind="stable")]

    basis = np.kron(u_sys, u_dev)
    diagonals = {}
    for name, mat in named:
        residual = _offdiagonal_residual(mat, basis)
        if residual > DIAGONALIZATION_TOL:
            raise JointDiagonalizationFailure(
                f"{name} is not diagonal in the product basis (residual {residual:.3g}); "
                "the family has no product eigenbasis",
                residual=residual,
            )
        diagonals[name] = np.real(np.einsum("ia,ij,ja->a", basis.conj(), mat, basis)).reshape(n, k)

    energy_grid = diagonals["HA"]
    device_grid = diagonals["HB"]
    spread_a = float(np.ptp(energy_grid, axis=1).max())
    spread_b = float(np.ptp(device_grid, axis=0).max())
    scale = max(1.0, float(np.abs(energy_grid).max()), float(np.abs(device_grid).max()))
    if max(spread_a, spread_b) > PRODUCT_STRUCTURE_TOL * scale:
        raise JointDiagonalizationFailure(
            "HA or HB does not act on its own factor only", residual=max(spread_a, spread_b)
        )

    system = SystemSpec(energies=energy_grid.mean(axis=1))
    device = DeviceSpec(energies=device_grid.mean(axis=0))
    if xs:
        xi = np.stack([diagonals[f"X{j + 1}"] for j in range(len(xs))])
    else:
        xi = np.zeros((0, n, k))
    interaction = InteractionSpec(xi=xi, pulses=pulses)

    rotated = basis.conj().T @ np.asarray(rhoAB, dtype=complex) @ basis
    rho0 = rho_from_full_composite(rotated, n, k)

    logger.info("Matrix family accepted: N=%d K=%d M=%d", n, k, len(xs))
    return build_from_spectral(system, device, interaction, rho0)
