"""Shared builders for random spectral models."""

from pathlib import Path

import numpy as np
import pytest

from src.model import (
    DeviceSpec,
    InteractionSpec,
    RhoInitial,
    SystemSpec,
    build_from_spectral,
    rho_from_full_composite,
    rho_from_product,
)
from src.protocol import PulseShape

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def random_density(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Full-rank random density matrix."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_model(seed: int, N: int = 3, K: int = 4, pulses=(), state: str = "product",
                 xi_scale: float = 1.0):
    """Random energies, eigenvalues and initial state; one xi slice per pulse."""
    rng = np.random.default_rng(seed)
    pulses = tuple(pulses)
    system = SystemSpec(energies=rng.uniform(-2.0, 2.0, N))
    device = DeviceSpec(energies=rng.uniform(-2.0, 2.0, K))
    xi = xi_scale * rng.standard_normal((len(pulses), N, K))
    interaction = InteractionSpec(xi=xi, pulses=pulses)
    if state == "product":
        rho0 = rho_from_product(random_density(rng, N), np.diag(rng.dirichlet(np.ones(K))))
    else:
        rho0 = rho_from_full_composite(random_density(rng, N * K), N, K)
    return build_from_spectral(system, device, interaction, rho0)


@pytest.fixture(scope="session")
def make_model():
    return random_model


@pytest.fixture
def plus_state_model():
    """N=2 qubit in |+>, omega_01 = -1, K=1 device, no measurement."""
    system = SystemSpec(energies=[0.0, 1.0])
    device = DeviceSpec(energies=[0.0])
    interaction = InteractionSpec(xi=np.zeros((0, 2, 1)), pulses=())
    rho0 = RhoInitial(rho=np.full((2, 2, 1), 0.5, dtype=complex))
    return build_from_spectral(system, device, interaction, rho0)


@pytest.fixture
def kicks():
    return (PulseShape.delta(1.0), PulseShape.delta(2.0))


@pytest.fixture
def cancelled_coherence_model():
    """
    (|+><+| (x) |0><0| + |-><-| (x) |1><1|) / 2 under one continuous measurement.

    The slices rho_01k = (1/4, -1/4) cancel at t = 0 but the gaps x_01k = (1, -1)
    turn them into rho_A[0, 1](t) = -i/2 sin(t) exp(i t).
    """
    plus = np.full((2, 2), 0.5)
    minus = np.array([[0.5, -0.5], [-0.5, 0.5]])
    rho = np.stack([plus, minus], axis=-1) / 2
    xi = np.zeros((1, 2, 2))
    xi[0, 0] = [1.0, -1.0]
    system = SystemSpec(energies=[0.0, 1.0])
    device = DeviceSpec(energies=[0.0, 0.0])
    interaction = InteractionSpec(xi=xi, pulses=(PulseShape.constant(0.0, 10.0),))
    return build_from_spectral(system, device, interaction, RhoInitial(rho=rho))
