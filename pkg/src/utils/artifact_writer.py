"""
Artifact Writer for simulation runs
Writes reduced density series, decoherence curves, observable series and
reports as CSV (17 significant digits) and JSON, plus a manifest of every file
"""

import json
import logging
import re
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config import settings
from src.decoherence import DecoherenceCurve
from src.evolution import ReducedDensitySeries
from src.observables import ObservableSeries

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def to_plain(value: Any) -> Any:
    """Convert numpy scalars/arrays and complex numbers into JSON-ready Python values."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def dumps(payload: Any) -> str:
    """Deterministic JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(to_plain(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", label) or "observable"


class ArtifactWriter:
    """Handles all output files of one run"""

    def __init__(self, out_dir=None, formats: Sequence[str] = ("csv", "json")):
        if out_dir is None:
            self.out_dir = Path(settings.output_dir)
        else:
            self.out_dir = Path(out_dir)
        self.formats = tuple(formats)
        self.written: List[str] = []

        self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def csv(self) -> bool:
        return "csv" in self.formats

    @property
    def json(self) -> bool:
        return "json" in self.formats

    def _record(self, path: Path):
        name = path.relative_to(self.out_dir).as_posix()
        if name not in self.written:
            self.written.append(name)
        logger.debug("  wrote %s", name)

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        """One CSV table, fixed column order, 17 significant digits."""
        path = self.out_dir / f"{name}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self._record(path)
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.out_dir / f"{name}.json"
        path.write_text(dumps(payload), encoding="utf-8")
        self._record(path)
        return path

    def write_reduced_density(self, series: ReducedDensitySeries, name: str = "reduced_density"):
        """rho_A(t) as a long table (t, m, n, re, im) and/or nested JSON"""
        if self.csv:
            self.write_frame(name, series.to_frame())
        if self.json:
            self.write_json(name, series.to_dict())

    def write_decoherence(self, curves: Iterable[DecoherenceCurve], name: str = "decoherence"):
        """All decoherence curves in one table; per-curve metadata goes to a sidecar"""
        curves = list(curves)
        if not curves:
            return
        if self.csv:
            self.write_frame(name, pd.concat([c.to_frame() for c in curves], ignore_index=True))
            self.write_json(f"{name}_meta", [dict(c.sidecar(), pair=list(c.pair)) for c in curves])
        if self.json:
            self.write_json(name, [
                dict(c.sidecar(), pair=list(c.pair), times=c.times, D=c.values, descriptor=c.descriptor)
                for c in curves
            ])

    def write_effect_densities(self, histograms: Iterable[Tuple[Tuple[int, int], pd.DataFrame]],
                               name: str = "effect_density"):
        """Binned atom weights per pair, for plotting the empirical densities"""
        histograms = list(histograms)
        if not histograms:
            return
        if self.csv:
            frames = [frame.assign(m=m, n=n)[["m", "n", "left", "right", "re_w", "im_w"]]
                      for (m, n), frame in histograms]
            self.write_frame(name, pd.concat(frames, ignore_index=True))
        if self.json:
            self.write_json(name, [
                {"pair": list(pair), **{column: frame[column].to_numpy() for column in frame.columns}}
                for pair, frame in histograms
            ])

    def write_observable(self, series: ObservableSeries):
        """<A(t)> with its diagonal/coherent split"""
        name = f"observable_{_slug(series.label)}"
        frame = series.to_frame()
        if self.csv:
            self.write_frame(name, frame)
        if self.json:
            payload = {column: frame[column].to_numpy() for column in frame.columns}
            payload["label"] = series.label
            self.write_json(name, payload)

    def write_report(self, name: str, payload: Any) -> Path:
        """Reports are always JSON, whatever the format selection"""
        return self.write_json(name, payload)

    def write_manifest(self, extra: Optional[dict] = None) -> Path:
        """Sorted list of everything written by this run (no timestamps)"""
        files = sorted(self.written)
        payload = {"files": files}
        if extra:
            payload.update(extra)
        path = self.out_dir / "manifest.json"
        path.write_text(dumps(payload), encoding="utf-8")
        logger.info("Wrote %d artifacts to %s", len(files), self.out_dir)
        return path
