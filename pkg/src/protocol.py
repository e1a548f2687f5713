"""
Measurement protocols.

A protocol is an ordered list of pulse shapes f_j(t), one per measurement
act. The quantity every other module needs is the integral impact

    phi_j(t) = integral_0^t f_j(t') dt'

which is available here in closed form for each supported kind:
- delta:            instantaneous kick at t_j, phi_j is the unit step (1 at t = t_j)
- constant:         continuous measurement on [start, stop) with a fixed amplitude
- piecewise_linear: linear interpolation between knots, zero outside them
- smoothed_delta:   unit-area Gaussian standing in for a kick, used by the oracle
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from src.config import UNIFORM_IMPACT_TOL
from src.errors import ValidationError

PULSE_KINDS = ("delta", "constant", "piecewise_linear", "smoothed_delta")

# A smoothed kick of width w is a Gaussian with standard deviation w / 3
SMOOTHING_SIGMAS = 3.0


@dataclass(frozen=True)
class PulseShape:
    """One measurement act. Build instances through the classmethods."""

    kind: str
    t: float = 0.0
    start: float = 0.0
    stop: float = 0.0
    amplitude: float = 1.0
    knots: Tuple[Tuple[float, float], ...] = ()
    width: float = 0.0

    def __post_init__(self):
        if self.kind not in PULSE_KINDS:
            raise ValidationError(f"unknown pulse kind '{self.kind}'", path="kind")

        if self.kind in ("delta", "smoothed_delta"):
            if not math.isfinite(self.t) or self.t < 0:
                raise ValidationError(f"kick time must be finite and >= 0, got {self.t}", path="t")
        if self.kind == "smoothed_delta" and not (self.width > 0 and math.isfinite(self.width)):
            raise ValidationError(f"smoothing width must be positive, got {self.width}", path="width")

        if self.kind == "constant":
            if not (math.isfinite(self.start) and math.isfinite(self.stop)):
                raise ValidationError("constant pulse needs a finite start and stop", path="stop")
            if not 0 <= self.start < self.stop:
                raise ValidationError(
                    f"constant pulse needs 0 <= start < stop, got [{self.start}, {self.stop}]",
                    path="start",
                )
            if not math.isfinite(self.amplitude) or self.amplitude < 0:
                raise ValidationError(
                    f"pulse amplitude must be finite and nonnegative, got {self.amplitude}",
                    path="amplitude",
                )

        if self.kind == "piecewise_linear":
            if len(self.knots) < 2:
                raise ValidationError("piecewise_linear pulse needs at least two knots", path="knots")
            times = [k[0] for k in self.knots]
            values = [k[1] for k in self.knots]
            if not all(math.isfinite(x) for x in times + values):
                raise ValidationError("knots must be finite", path="knots")
            if times[0] < 0:
                raise ValidationError("knot times must be >= 0", path="knots[0]")
            for i in range(1, len(times)):
                if times[i] <= times[i - 1]:
                    raise ValidationError("knot times must be strictly increasing", path=f"knots[{i}]")
            for i, v in enumerate(values):
                if v < 0:
                    raise ValidationError(f"pulse values must be nonnegative, got {v}", path=f"knots[{i}]")

    @classmethod
    def delta(cls, t: float) -> "PulseShape":
        return cls(kind="delta", t=float(t))

    @classmethod
    def constant(cls, start: float, stop: float, amplitude: float = 1.0) -> "PulseShape":
        return cls(kind="constant", start=float(start), stop=float(stop), amplitude=float(amplitude))

    @classmethod
    def piecewise_linear(cls, knots: Sequence[Sequence[float]]) -> "PulseShape":
        return cls(kind="piecewise_linear", knots=tuple((float(a), float(b)) for a, b in knots))

    @classmethod
    def smoothed_delta(cls, t: float, width: float) -> "PulseShape":
        return cls(kind="smoothed_delta", t=float(t), width=float(width))

    @property
    def end_time(self) -> float:
        """Time after which the pulse no longer acts."""
        if self.kind == "delta":
            return self.t
        if self.kind == "constant":
            return self.stop
        if self.kind == "piecewise_linear":
            return self.knots[-1][0]
        return self.t + SMOOTHING_SIGMAS * self.width

    def to_dict(self) -> dict:
        if self.kind == "delta":
            return {"kind": "delta", "t": self.t}
        if self.kind == "constant":
            return {"kind": "constant", "start": self.start, "stop": self.stop, "amplitude": self.amplitude}
        if self.kind == "piecewise_linear":
            return {"kind": "piecewise_linear", "knots": [list(k) for k in self.knots]}
        return {"kind": "smoothed_delta", "t": self.t, "width": self.width}


def _check_times(times) -> np.ndarray:
    arr = np.asarray(times, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValidationError("times must be finite and >= 0")
    return arr


def _phase_array(pulse: PulseShape, times: np.ndarray) -> np.ndarray:
    if pulse.kind == "delta":
        return np.where(times >= pulse.t, 1.0, 0.0)

    if pulse.kind == "constant":
        return pulse.amplitude * np.clip(np.minimum(times, pulse.stop) - pulse.start, 0.0, None)

    if pulse.kind == "smoothed_delta":
        s = pulse.width / SMOOTHING_SIGMAS
        return ndtr((times - pulse.t) / s) - ndtr(-pulse.t / s)

    # piecewise_linear: exact trapezoid up to each requested time
    kt = np.array([k[0] for k in pulse.knots])
    kv = np.array([k[1] for k in pulse.knots])
    segment_areas = 0.5 * (kv[1:] + kv[:-1]) * np.diff(kt)
    cumulative = np.concatenate(([0.0], np.cumsum(segment_areas)))

    out = np.zeros_like(times)
    for i, t in enumerate(times):
        if t <= kt[0]:
            continue
        if t >= kt[-1]:
            out[i] = cumulative[-1]
            continue
        j = int(np.searchsorted(kt, t, side="right")) - 1
        v_t = np.interp(t, kt, kv)
        out[i] = cumulative[j] + 0.5 * (kv[j] + v_t) * (t - kt[j])
    return out


def phase_integral(pulse: PulseShape, t: float) -> float:
    """Integral impact phi(t) of a single pulse."""
    if t < 0:
        raise ValidationError(f"time must be >= 0, got {t}", path="t")
    return float(_phase_array(pulse, np.array([float(t)]))[0])


def phase_integrals(pulse: PulseShape, times) -> np.ndarray:
    """Vectorized phase_integral over a grid of times."""
    return _phase_array(pulse, _check_times(times))


def pulse_value(pulse: PulseShape, times) -> np.ndarray:
    """Pulse amplitude f(t). A bare delta has no finite value and must be smoothed first."""
    times = np.asarray(times, dtype=float)
    if pulse.kind == "delta":
        raise ValidationError("a delta pulse has no pointwise value; smooth it first", path="kind")
    if pulse.kind == "constant":
        inside = (times >= pulse.start) & (times < pulse.stop)
        return np.where(inside, pulse.amplitude, 0.0)
    if pulse.kind == "piecewise_linear":
        kt = [k[0] for k in pulse.knots]
        kv = [k[1] for k in pulse.knots]
        return np.interp(times, kt, kv, left=0.0, right=0.0)
    s = pulse.width / SMOOTHING_SIGMAS
    return np.exp(-0.5 * ((times - pulse.t) / s) ** 2) / (s * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class Protocol:
    """Ordered list of M pulses."""

    pulses: Tuple[PulseShape, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))

    @property
    def count(self) -> int:
        return len(self.pulses)

    @property
    def last_time(self) -> Optional[float]:
        """t_M: end of the latest pulse, None when there are no pulses."""
        if not self.pulses:
            return None
        return max(p.end_time for p in self.pulses)

    @property
    def descriptor(self) -> str:
        if not self.pulses:
            return "none"
        if all(p.kind in ("delta", "smoothed_delta") for p in self.pulses):
            return "instantaneous"
        # identical unit-amplitude measurements switched on at t = 0
        first = self.pulses[0]
        if all(
            p.kind == "constant" and p.start == 0.0 and p.amplitude == 1.0 and p.stop == first.stop
            for p in self.pulses
        ):
            return "continuous"
        return "custom"

    @property
    def has_kicks(self) -> bool:
        return any(p.kind in ("delta", "smoothed_delta") for p in self.pulses)

    def smoothed(self, width: float) -> "Protocol":
        """Copy with every delta kick replaced by a smoothed kick of the given width."""
        return Protocol(tuple(
            PulseShape.smoothed_delta(p.t, width) if p.kind == "delta" else p
            for p in self.pulses
        ))

    def kick_windows(self, width: float) -> List[Tuple[float, float]]:
        """Intervals [t_j - 3w, t_j + 3w] around each kick."""
        windows = []
        for p in self.pulses:
            if p.kind in ("delta", "smoothed_delta"):
                w = p.width if p.kind == "smoothed_delta" else width
                windows.append((p.t - 3.0 * w, p.t + 3.0 * w))
        return windows

    def to_list(self) -> List[dict]:
        return [p.to_dict() for p in self.pulses]


def instantaneous_protocol(kick_times: Sequence[float]) -> Protocol:
    return Protocol(tuple(PulseShape.delta(t) for t in kick_times))


def continuous_protocol(stop: float, start: float = 0.0, amplitude: float = 1.0) -> Protocol:
    return Protocol((PulseShape.constant(start, stop, amplitude),))


@dataclass(frozen=True)
class PhaseReport:
    """Result of all_phases at one time."""

    phases: np.ndarray
    uniform: bool
    phi: Optional[float]


def phase_matrix(protocol: Protocol, times) -> np.ndarray:
    """phi_j(t) for every grid time (rows) and pulse (columns)."""
    times = _check_times(times)
    out = np.zeros((times.size, protocol.count))
    for j, pulse in enumerate(protocol.pulses):
        out[:, j] = _phase_array(pulse, times)
    return out


def uniform_impacts(phases: np.ndarray):
    """
    Row-wise uniform-impact check on a (T, M) phase matrix.

    Returns a boolean mask and the common phi per row (NaN where not uniform).
    With no pulses every row is uniform with phi = 0.
    """
    if phases.shape[1] == 0:
        return np.ones(phases.shape[0], dtype=bool), np.zeros(phases.shape[0])
    spread = phases.max(axis=1) - phases.min(axis=1)
    mask = spread <= UNIFORM_IMPACT_TOL
    phi = np.where(mask, phases[:, 0], np.nan)
    return mask, phi


def all_phases(protocol: Protocol, t: float) -> PhaseReport:
    """All integral impacts at t plus the uniform-impact verdict."""
    if t < 0:
        raise ValidationError(f"time must be >= 0, got {t}", path="t")
    phases = phase_matrix(protocol, [t])
    mask, phi = uniform_impacts(phases)
    uniform = bool(mask[0])
    return PhaseReport(
        phases=phases[0],
        uniform=uniform,
        phi=float(phi[0]) if uniform else None,
    )
