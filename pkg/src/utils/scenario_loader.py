"""
Scenario and matrix-file loading.

A scenario file fixes one run completely: the model (system, device,
interaction, initial state), the time grid, the observables, the decoherence
law and the output options. Optional sections fall back to the defaults in
src.config. Matrix files feed the `validate` command.

Every parse error is raised as a ScenarioError carrying the JSON path of the
offending entry.
"""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import DEFAULT_COMPARE_TOLERANCES, DEFAULT_ORACLE_DT, DEFAULT_SMOOTHING_WIDTH
from src.decoherence import FAMILIES, PARAMETRIC_FAMILIES, DecoherenceParams, sampled_interaction
from src.errors import ScenarioError, ShapeMismatchError, ValidationError
from src.model import (
    CompositeModel,
    DeviceSpec,
    InteractionSpec,
    RhoInitial,
    SystemSpec,
    build_from_spectral,
    rho_from_full_composite,
    rho_from_product,
)
from src.observables import Observable
from src.protocol import Protocol, PulseShape

logger = logging.getLogger(__name__)

REQUIRED_SECTIONS = ("system", "initial_state", "time_grid")
KNOWN_SECTIONS = REQUIRED_SECTIONS + (
    "device", "interaction", "observables", "decoherence", "oracle", "tolerances", "output", "seed", "name",
)
OUTPUT_FORMATS = ("csv", "json")
INITIAL_STATE_MODES = ("direct", "product", "composite")


@dataclass(frozen=True)
class Scenario:
    """Everything one run needs, validated."""

    model: CompositeModel
    times: np.ndarray
    observables: Tuple[Observable, ...] = ()
    decoherence: DecoherenceParams = field(default_factory=lambda: DecoherenceParams("empirical"))
    pairs: Tuple[Tuple[int, int], ...] = ()
    oracle_dt: float = DEFAULT_ORACLE_DT
    smoothing_width: float = DEFAULT_SMOOTHING_WIDTH
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_COMPARE_TOLERANCES))
    output_dir: Optional[str] = None
    formats: Tuple[str, ...] = OUTPUT_FORMATS
    seed: Optional[int] = None
    name: str = "scenario"

    @property
    def protocol(self) -> Protocol:
        return self.model.protocol


@dataclass(frozen=True)
class MatrixInputs:
    """Contents of a matrix-mode file."""

    system_dim: int
    device_dim: int
    HA: np.ndarray
    HB: np.ndarray
    X: Tuple[np.ndarray, ...]
    rho: np.ndarray
    pulses: Tuple[PulseShape, ...] = ()


@contextmanager
def _located(prefix: str):
    """Prefix the JSON path of validation errors raised inside the block."""
    try:
        yield
    except ScenarioError:
        raise
    except ValidationError as exc:
        exc.path = f"{prefix}.{exc.path}" if exc.path else prefix
        raise


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON object from disk; parse failures become ScenarioError."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror or exc}", path="$") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", path="$") from exc
    if not isinstance(data, dict):
        raise ScenarioError("top level must be a JSON object", path="$")
    return data


def validate_scenario_format(data: Dict[str, Any]) -> bool:
    """
    Pre-flight check of the scenario layout before any numbers are parsed.
    Raises ScenarioError naming the first offending path; returns True otherwise.
    """
    for section in REQUIRED_SECTIONS:
        if section not in data:
            raise ScenarioError(f"required section '{section}' not found; found keys: {sorted(data)}", path=section)

    unknown = sorted(set(data) - set(KNOWN_SECTIONS))
    if unknown:
        raise ScenarioError(f"unknown section '{unknown[0]}'", path=unknown[0])

    for section in ("system", "device", "interaction", "initial_state", "time_grid",
                    "decoherence", "oracle", "tolerances", "output"):
        if section in data and not isinstance(data[section], dict):
            raise ScenarioError(f"'{section}' must be an object", path=section)
    if "observables" in data and not isinstance(data["observables"], list):
        raise ScenarioError("'observables' must be a list", path="observables")

    if "energies" not in data["system"]:
        raise ScenarioError("'energies' key not found in system", path="system.energies")
    if "device" in data and not ({"energies", "levels"} & set(data["device"])):
        raise ScenarioError("device needs 'energies' or 'levels'", path="device")

    interaction = data.get("interaction")
    if interaction is not None:
        if "xi" in interaction and "sampled" in interaction:
            raise ScenarioError("interaction takes either 'xi' or 'sampled', not both", path="interaction")
        if "xi" not in interaction and "sampled" not in interaction:
            raise ScenarioError("interaction needs 'xi' or 'sampled'", path="interaction")
        if not isinstance(interaction.get("pulses", []), list):
            raise ScenarioError("'pulses' must be a list", path="interaction.pulses")

    mode = data["initial_state"].get("mode")
    if mode not in INITIAL_STATE_MODES:
        raise ScenarioError(
            f"initial_state.mode must be one of {list(INITIAL_STATE_MODES)}, got {mode!r}",
            path="initial_state.mode",
        )

    for key in ("start", "stop", "samples"):
        if key not in data["time_grid"]:
            raise ScenarioError(f"'{key}' key not found in time_grid", path=f"time_grid.{key}")

    logger.info("Scenario format validation passed.")
    logger.debug("  Sections: %s", sorted(data))
    return True


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"expected a number, got {type(value).__name__}", path=path)
    if not np.isfinite(value):
        raise ScenarioError("number is not finite", path=path)
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"expected an integer, got {value!r}", path=path)
    return value


def parse_complex(value, path: str) -> complex:
    """A plain number or a two-element [re, im] array."""
    if isinstance(value, list):
        if len(value) != 2:
            raise ScenarioError(f"complex numbers are [re, im], got {len(value)} entries", path=path)
        return complex(_number(value[0], f"{path}[0]"), _number(value[1], f"{path}[1]"))
    return complex(_number(value, path))


def _complex_nested(value, depth: int, path: str):
    if depth == 0:
        return parse_complex(value, path)
    if not isinstance(value, list):
        raise ScenarioError(f"expected a list, got {type(value).__name__}", path=path)
    return [_complex_nested(item, depth - 1, f"{path}[{i}]") for i, item in enumerate(value)]


def parse_complex_array(value, ndim: int, path: str) -> np.ndarray:
    """Nested lists of complex entries with exactly ndim list levels."""
    nested = _complex_nested(value, ndim, path)
    try:
        arr = np.array(nested, dtype=complex)
    except ValueError as exc:
        raise ScenarioError("array is ragged", path=path) from exc
    if arr.ndim != ndim:
        raise ScenarioError(f"array is ragged or has the wrong rank (expected {ndim})", path=path)
    return arr


def _real_array(value, ndim: int, path: str) -> np.ndarray:
    arr = parse_complex_array(value, ndim, path)
    if arr.size and np.abs(arr.imag).max() > 0:
        raise ScenarioError("entries must be real", path=path)
    return arr.real.copy()


def parse_pulse(obj, path: str) -> PulseShape:
    """One pulse record: delta, constant, piecewise_linear or smoothed_delta."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ScenarioError("pulse must be an object with a 'kind'", path=path)
    kind = obj["kind"]
    with _located(path):
        if kind == "delta":
            return PulseShape.delta(_number(obj.get("t"), f"{path}.t"))
        if kind == "constant":
            return PulseShape.constant(
                _number(obj.get("start", 0.0), f"{path}.start"),
                _number(obj.get("stop"), f"{path}.stop"),
                _number(obj.get("amplitude", 1.0), f"{path}.amplitude"),
            )
        if kind == "piecewise_linear":
            knots = _real_array(obj.get("knots"), 2, f"{path}.knots")
            if knots.ndim != 2 or knots.shape[1] != 2:
                raise ScenarioError("knots must be [[t, value], ...]", path=f"{path}.knots")
            return PulseShape.piecewise_linear(knots.tolist())
        if kind == "smoothed_delta":
            return PulseShape.smoothed_delta(
                _number(obj.get("t"), f"{path}.t"),
                _number(obj.get("width", DEFAULT_SMOOTHING_WIDTH), f"{path}.width"),
            )
    raise ScenarioError(f"unknown pulse kind {kind!r}", path=f"{path}.kind")


def _pulses(items: Sequence, path: str) -> Tuple[PulseShape, ...]:
    return tuple(parse_pulse(item, f"{path}[{i}]") for i, item in enumerate(items))


def _system(data: Dict) -> SystemSpec:
    section = data["system"]
    energies = _real_array(section["energies"], 1, "system.energies")
    return SystemSpec(energies=energies, labels=section.get("labels"))


def _device(data: Dict) -> DeviceSpec:
    section = data.get("device", {"levels": 1})
    if "energies" in section:
        return DeviceSpec(energies=_real_array(section["energies"], 1, "device.energies"))
    levels = _integer(section["levels"], "device.levels")
    if levels < 1:
        raise ScenarioError("device.levels must be >= 1", path="device.levels")
    return DeviceSpec(energies=np.zeros(levels))


def _interaction(data: Dict, system: SystemSpec, device: DeviceSpec, seed: Optional[int]) -> InteractionSpec:
    section = data.get("interaction")
    if section is None:
        return InteractionSpec(xi=np.zeros((0, system.size, device.size)), pulses=())
    pulses = _pulses(section.get("pulses", []), "interaction.pulses")
    if "sampled" in section:
        sampled = section["sampled"]
        if not isinstance(sampled, dict):
            raise ScenarioError("'sampled' must be an object", path="interaction.sampled")
        family = sampled.get("family")
        if family not in PARAMETRIC_FAMILIES:
            raise ScenarioError(
                f"sampled family must be one of {list(PARAMETRIC_FAMILIES)}, got {family!r}",
                path="interaction.sampled.family",
            )
        if seed is None:
            raise ScenarioError("sampled interactions need a top-level 'seed'", path="seed")
        sigma = _number(sampled.get("sigma", 1.0), "interaction.sampled.sigma")
        with _located("interaction.sampled"):
            return sampled_interaction(family, sigma, system.size, device.size, pulses, seed)
    xi = _real_array(section["xi"], 3, "interaction.xi") if section["xi"] else np.zeros((0, system.size, device.size))
    return InteractionSpec(xi=xi, pulses=pulses)


def _initial_state(data: Dict, system: SystemSpec, device: DeviceSpec) -> RhoInitial:
    section = data["initial_state"]
    mode = section["mode"]
    n, k = system.size, device.size
    with _located("initial_state"):
        if mode == "direct":
            rho = parse_complex_array(section.get("rho"), 3, "initial_state.rho")
            if rho.shape != (n, n, k):
                raise ShapeMismatchError(f"rho has shape {rho.shape}, expected {(n, n, k)}", path="rho")
            return RhoInitial(rho=rho, provenance="direct")
        if mode == "product":
            rho_a = parse_complex_array(section.get("system"), 2, "initial_state.system")
            if rho_a.shape != (n, n):
                raise ShapeMismatchError(f"system state has shape {rho_a.shape}, expected {(n, n)}", path="system")
            if section.get("device", "uniform") == "uniform":
                rho_b = np.full(k, 1.0 / k)
            else:
                rho_b = parse_complex_array(section["device"], 2, "initial_state.device")
                if rho_b.shape != (k, k):
                    raise ShapeMismatchError(f"device state has shape {rho_b.shape}, expected {(k, k)}", path="device")
            return rho_from_product(rho_a, rho_b)
        rho_ab = parse_complex_array(section.get("rho"), 2, "initial_state.rho")
        return rho_from_full_composite(rho_ab, n, k)


def _time_grid(data: Dict) -> np.ndarray:
    section = data["time_grid"]
    start = _number(section["start"], "time_grid.start")
    stop = _number(section["stop"], "time_grid.stop")
    samples = _integer(section["samples"], "time_grid.samples")
    if start < 0:
        raise ScenarioError("time_grid.start must be >= 0", path="time_grid.start")
    if start > stop:
        raise ScenarioError(f"time_grid.start {start} exceeds stop {stop}", path="time_grid.stop")
    if samples < 1:
        raise ScenarioError("time_grid.samples must be >= 1", path="time_grid.samples")
    if samples == 1:
        return np.array([start])
    return np.linspace(start, stop, samples)


def _observables(data: Dict) -> Tuple[Observable, ...]:
    result: List[Observable] = []
    for i, item in enumerate(data.get("observables", [])):
        path = f"observables[{i}]"
        if not isinstance(item, dict) or "matrix" not in item:
            raise ScenarioError("observable must be an object with a 'matrix'", path=path)
        label = str(item.get("label", f"A{i}"))
        with _located(path):
            result.append(Observable(parse_complex_array(item["matrix"], 2, f"{path}.matrix"), label=label))
    labels = [obs.label for obs in result]
    if len(set(labels)) != len(labels):
        raise ScenarioError("observable labels must be unique", path="observables")
    return tuple(result)


def _decoherence(data: Dict, n_levels: int) -> Tuple[DecoherenceParams, Tuple[Tuple[int, int], ...]]:
    section = data.get("decoherence", {})
    family = section.get("family", "empirical")
    if family not in FAMILIES:
        raise ScenarioError(f"decoherence.family must be one of {list(FAMILIES)}, got {family!r}",
                            path="decoherence.family")
    sigma = _number(section.get("sigma", 1.0), "decoherence.sigma")

    overrides = {}
    for i, item in enumerate(section.get("overrides", [])):
        path = f"decoherence.overrides[{i}]"
        if not isinstance(item, dict):
            raise ScenarioError("override must be an object {m, n, sigma}", path=path)
        m, n = _integer(item.get("m"), f"{path}.m"), _integer(item.get("n"), f"{path}.n")
        overrides[(m, n)] = _number(item.get("sigma"), f"{path}.sigma")

    if "pairs" in section:
        pairs = []
        for i, item in enumerate(section["pairs"]):
            path = f"decoherence.pairs[{i}]"
            if not isinstance(item, list) or len(item) != 2:
                raise ScenarioError("pair must be [m, n]", path=path)
            m, n = _integer(item[0], f"{path}[0]"), _integer(item[1], f"{path}[1]")
            if not (0 <= m < n_levels and 0 <= n < n_levels):
                raise ScenarioError(f"pair ({m}, {n}) out of range for {n_levels} levels", path=path)
            pairs.append((m, n))
    else:
        pairs = [(m, n) for m in range(n_levels) for n in range(m + 1, n_levels)]

    with _located("decoherence"):
        params = DecoherenceParams(family=family, sigma=sigma, overrides=overrides)
    return params, tuple(pairs)


def _tolerances(data: Dict) -> Dict[str, float]:
    tolerances = dict(DEFAULT_COMPARE_TOLERANCES)
    for key, value in data.get("tolerances", {}).items():
        if key not in DEFAULT_COMPARE_TOLERANCES:
            raise ScenarioError(f"unknown tolerance '{key}'", path=f"tolerances.{key}")
        tolerances[key] = _number(value, f"tolerances.{key}")
    return tolerances


def _output(data: Dict) -> Tuple[Optional[str], Tuple[str, ...]]:
    section = data.get("output", {})
    formats = section.get("formats", list(OUTPUT_FORMATS))
    if not isinstance(formats, list) or not formats or any(f not in OUTPUT_FORMATS for f in formats):
        raise ScenarioError(f"output.formats must be a nonempty subset of {list(OUTPUT_FORMATS)}",
                            path="output.formats")
    directory = section.get("directory")
    return (str(directory) if directory is not None else None), tuple(f for f in OUTPUT_FORMATS if f in formats)


def parse_scenario(data: Dict[str, Any], name: str = "scenario") -> Scenario:
    """Build a Scenario from an already-decoded JSON object."""
    validate_scenario_format(data)
    seed = data.get("seed")
    if seed is not None:
        seed = _integer(seed, "seed")

    system = _system(data)
    device = _device(data)
    interaction = _interaction(data, system, device, seed)
    rho0 = _initial_state(data, system, device)
    model = build_from_spectral(system, device, interaction, rho0)

    oracle = data.get("oracle", {})
    params, pairs = _decoherence(data, model.N)
    output_dir, formats = _output(data)
    return Scenario(
        model=model,
        times=_time_grid(data),
        observables=_observables(data),
        decoherence=params,
        pairs=pairs,
        oracle_dt=_number(oracle.get("dt", DEFAULT_ORACLE_DT), "oracle.dt"),
        smoothing_width=_number(oracle.get("smoothing_width", DEFAULT_SMOOTHING_WIDTH), "oracle.smoothing_width"),
        tolerances=_tolerances(data),
        output_dir=output_dir,
        formats=formats,
        seed=seed,
        name=str(data.get("name", name)),
    )


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read, validate and build a scenario file."""
    path = Path(path)
    logger.info("Loading scenario %s", path)
    return parse_scenario(read_json(path), name=path.stem)


def parse_matrices(data: Dict[str, Any]) -> MatrixInputs:
    """Build matrix-mode inputs from a decoded JSON object."""
    for key in ("system_dim", "device_dim", "HA", "HB"):
        if key not in data:
            raise ScenarioError(f"required key '{key}' not found", path=key)
    n = _integer(data["system_dim"], "system_dim")
    k = _integer(data["device_dim"], "device_dim")
    if n < 1 or k < 1:
        raise ScenarioError("system_dim and device_dim must be >= 1", path="system_dim")

    operators = data.get("X", [])
    if not isinstance(operators, list):
        raise ScenarioError("'X' must be a list of matrices", path="X")
    xs = tuple(parse_complex_array(x, 2, f"X[{j}]") for j, x in enumerate(operators))
    if "rho" in data:
        rho = parse_complex_array(data["rho"], 2, "rho")
    else:
        rho = np.eye(n * k, dtype=complex) / (n * k)
    pulses = _pulses(data.get("pulses", []), "pulses")

    logger.info("Matrix file format validation passed.")
    return MatrixInputs(
        system_dim=n,
        device_dim=k,
        HA=parse_complex_array(data["HA"], 2, "HA"),
        HB=parse_complex_array(data["HB"], 2, "HB"),
        X=xs,
        rho=rho,
        pulses=pulses,
    )


def load_matrices(path: Union[str, Path]) -> MatrixInputs:
    """Read a matrix-mode file."""
    path = Path(path)
    logger.info("Loading matrix file %s", path)
    return parse_matrices(read_json(path))
