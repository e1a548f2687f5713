# Model package initializer
# Exports the spectral records and the two ways of building a CompositeModel

from .specs import (
    CompositeModel,
    DeviceSpec,
    InteractionSpec,
    RhoInitial,
    SystemSpec,
    build_from_spectral,
    check_density_matrix,
    check_populations,
    rho_from_full_composite,
    rho_from_product,
)
from .matrices import (
    CommutatorRecord,
    build_from_matrices,
    check_commutators,
    joint_diagonalize,
    lappo_danilevsky_residual,
    lift_family,
)
