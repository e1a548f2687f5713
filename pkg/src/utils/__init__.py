# Utils package initializer
# Exports the scenario loader and the artifact writer for the runner and CLI

from .artifact_writer import ArtifactWriter
from .scenario_loader import MatrixInputs, Scenario, load_matrices, load_scenario
