"""
Scenario Runner
Runs the simulate / compare / limit pipelines for one scenario and the
matrix-mode validation. Every run returns an exit code:
0 ok, 1 tolerance or sanity failure (input errors raise QNDError, exit code 2).
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.config import settings
from src.decoherence import (
    DecoherenceCurve,
    decoherence_curve,
    effect_density_from_model,
    factorized_series,
    histogram,
    sanity_check_curve,
    uniform_mask,
)
from src.errors import (
    CommutatorViolation,
    JointDiagonalizationFailure,
    NonUniformImpact,
    SizeGuardError,
    ZeroWeight,
)
from src.evolution import ReducedDensitySeries, oracle_evolve, reduced_density, sanity_check_series
from src.model import build_from_matrices, check_commutators, lappo_danilevsky_residual, lift_family
from src.observables import diagonal_ensemble, expectation_direct
from src.utils.artifact_writer import ArtifactWriter
from src.utils.scenario_loader import MatrixInputs, Scenario

logger = logging.getLogger(__name__)


def _banner(title: str):
    logger.info("=" * 60)
    logger.info(title)
    logger.info("=" * 60)


class ScenarioRunner:
    """Orchestrates one scenario through the evolution, decoherence and observable pipelines"""

    def __init__(self, scenario: Scenario, writer: Optional[ArtifactWriter] = None, threads: int = 1):
        self.scenario = scenario
        self.model = scenario.model
        self.writer = writer
        self.threads = max(1, int(threads))

    def _curve_source(self):
        params = self.scenario.decoherence
        return self.model if params.family == "empirical" else params

    def _is_probability(self, pair: Tuple[int, int]) -> bool:
        m, n = pair
        if self.scenario.decoherence.family != "empirical" or self.model.M == 0 or m == n:
            return True
        return effect_density_from_model(self.model, m, n).is_probability

    def decoherence_curves(self) -> Tuple[List[DecoherenceCurve], int, bool]:
        """
        Curves for every requested pair on the uniform-impact samples.
        Returns (curves, number of skipped samples, sanity verdict).
        """
        protocol = self.scenario.protocol
        times = self.scenario.times
        mask = uniform_mask(protocol, times)
        skipped = int((~mask).sum())
        if skipped:
            logger.warning("  WARNING: %d of %d samples violate the uniform-impact condition; "
                           "decoherence curves skip them", skipped, times.size)
        if not mask.any():
            return [], skipped, True

        curves, healthy = [], True
        for pair in self.scenario.pairs:
            try:
                curve = decoherence_curve(self._curve_source(), pair, protocol, times[mask])
                probability = self._is_probability(pair)
            except ZeroWeight as exc:
                logger.warning("  WARNING: %s; no curve written", exc.message)
                continue
            if not probability:
                logger.info("  Pair %s has complex atom weights: |D| <= 1 is not enforced", pair)
            healthy = sanity_check_curve(curve, probability=probability) and healthy
            curves.append(curve)
        return curves, skipped, healthy

    def effect_density_histograms(self) -> List[Tuple[Tuple[int, int], pd.DataFrame]]:
        """Binned empirical effect densities of the requested pairs (plot output only)"""
        if self.scenario.decoherence.family != "empirical" or self.model.M == 0:
            return []
        histograms = []
        for m, n in self.scenario.pairs:
            if m == n:
                continue
            try:
                histograms.append(((m, n), histogram(effect_density_from_model(self.model, m, n))))
            except ZeroWeight:
                continue
        return histograms

    def run_simulate(self) -> int:
        """Reduced density, decoherence curves and observables - sanity failures give exit 1"""
        scenario = self.scenario
        _banner(f"SIMULATE - {scenario.name} (N={self.model.N}, K={self.model.K}, M={self.model.M})")

        # Step 1: closed-form reduced density (always valid)
        logger.info("STEP 1: Reduced density matrix (closed form)")
        series = reduced_density(self.model, scenario.times, threads=self.threads)
        series_ok = sanity_check_series(series, populations=np.diag(self.model.rho0.marginal()).real)

        # Step 2: decoherence factors (only where the impacts coincide)
        logger.info("STEP 2: Decoherence factors (%s, %s protocol)",
                    scenario.decoherence.family, scenario.protocol.descriptor)
        curves, skipped, curves_ok = self.decoherence_curves()
        if curves_ok:
            logger.info("  SANITY CHECK PASSED: %d decoherence curves", len(curves))
        else:
            logger.error("  SANITY CHECK FAILED: decoherence curves out of bounds")

        # Step 3: observables
        logger.info("STEP 3: Observables")
        observable_series = [expectation_direct(series, obs) for obs in scenario.observables]
        for obs, values in zip(scenario.observables, observable_series):
            logger.info("  <%s>: diagonal part %.6g", obs.label, values.diagonal_part[0])

        if self.writer is not None:
            self.writer.write_reduced_density(series)
            self.writer.write_decoherence(curves)
            self.writer.write_effect_densities(self.effect_density_histograms())
            for values in observable_series:
                self.writer.write_observable(values)
            self.writer.write_report("summary", {
                "name": scenario.name,
                "N": self.model.N,
                "K": self.model.K,
                "M": self.model.M,
                "descriptor": scenario.protocol.descriptor,
                "samples": int(scenario.times.size),
                "skipped_samples": skipped,
                "pairs": [list(c.pair) for c in curves],
                "observables": [obs.label for obs in scenario.observables],
                "sanity": {"series": series_ok, "curves": curves_ok},
            })
            self.writer.write_manifest({"command": "simulate"})

        if not (series_ok and curves_ok):
            _banner("SIMULATE FINISHED WITH FAILED SANITY CHECKS")
            return 1
        _banner("SIMULATE COMPLETE")
        return 0

    def run_compare(self) -> Tuple[Dict, int]:
        """Closed form vs oracle vs factorized - any discrepancy above tolerance gives exit 1"""
        scenario = self.scenario
        dim = self.model.N * self.model.K
        if dim > settings.oracle_max_dim:
            raise SizeGuardError(
                f"N*K = {dim} exceeds the oracle limit {settings.oracle_max_dim}", path="system"
            )
        _banner(f"COMPARE - {scenario.name} (N*K={dim})")
        times = scenario.times
        protocol = scenario.protocol

        logger.info("STEP 1: Closed form")
        closed = reduced_density(self.model, times, threads=self.threads)

        logger.info("STEP 2: Oracle (dt=%g, smoothing width=%g)", scenario.oracle_dt, scenario.smoothing_width)
        oracle = oracle_evolve(self.model, times, scenario.oracle_dt, scenario.smoothing_width)

        logger.info("STEP 3: Factorized form")
        factorized: Optional[ReducedDensitySeries] = None
        non_uniform_t = None
        try:
            factorized = factorized_series(self.model, protocol, times)
        except NonUniformImpact as exc:
            non_uniform_t = exc.t
            logger.warning("  WARNING: factorized form not applicable (impacts differ at t=%r)", exc.t)

        windows = protocol.kick_windows(scenario.smoothing_width)
        outside = np.ones(times.size, dtype=bool)
        for lo, hi in windows:
            outside &= ~((times >= lo) & (times <= hi))
        logger.info("  %d of %d samples lie outside kick windows", int(outside.sum()), times.size)

        def discrepancy(a, b, mask):
            if a is None or b is None:
                return None
            if not mask.any():
                return 0.0
            return float(np.abs(a.rho[mask] - b.rho[mask]).max())

        everywhere = np.ones(times.size, dtype=bool)
        measured = {
            "closed_vs_oracle": discrepancy(closed, oracle, outside),
            "closed_vs_factorized": discrepancy(closed, factorized, everywhere),
            "oracle_vs_factorized": discrepancy(oracle, factorized, outside),
        }

        exit_code = 0
        discrepancies = {}
        for key, value in measured.items():
            tolerance = scenario.tolerances[key]
            if value is None:
                status = "not applicable"
            elif value <= tolerance:
                status = "ok"
            else:
                status = "exceeded"
                exit_code = 1
            discrepancies[key] = {"max_abs": value, "tolerance": tolerance, "status": status}
            logger.info("  %-22s %-14s %s", key, status, "" if value is None else f"{value:.3e}")

        report = {
            "name": scenario.name,
            "N": self.model.N,
            "K": self.model.K,
            "M": self.model.M,
            "oracle": {
                "dt": scenario.oracle_dt,
                "smoothing_width": scenario.smoothing_width,
                "kick_windows": [list(w) for w in windows],
                "samples_compared": int(outside.sum()),
            },
            "factorized": {"applicable": factorized is not None, "first_non_uniform_t": non_uniform_t},
            "discrepancies": discrepancies,
        }
        if self.writer is not None:
            self.writer.write_report("compare_report", report)
            self.writer.write_manifest({"command": "compare"})

        _banner("COMPARE COMPLETE" if exit_code == 0 else "COMPARE FAILED: TOLERANCE EXCEEDED")
        return report, exit_code

    def run_limit(self) -> Dict[str, float]:
        """Diagonal-ensemble value of every observable"""
        return {obs.label: diagonal_ensemble(self.model, obs) for obs in self.scenario.observables}


def run_validate(inputs: MatrixInputs, writer: Optional[ArtifactWriter] = None,
                 seed: Optional[int] = None) -> Tuple[Dict, int]:
    """
    Commutator residuals, verdict and recovered spectra for a matrix family.
    A rejected family gives exit 1.
    """
    seed = settings.seed if seed is None else seed
    _banner("VALIDATE - matrix family")

    logger.info("STEP 1: Pairwise commutators")
    named = lift_family(inputs.HA, inputs.HB, inputs.X, inputs.system_dim, inputs.device_dim)
    records = check_commutators(named)
    for record in records:
        logger.info("  [%s, %s] residual %.3e %s", record.pair[0], record.pair[1], record.residual,
                    "ok" if record.accepted else "REJECTED")

    report = {
        "system_dim": inputs.system_dim,
        "device_dim": inputs.device_dim,
        "commutators": [r.to_dict() for r in records],
        "verdict": "accepted",
    }

    logger.info("STEP 2: Joint eigenbasis")
    try:
        model = build_from_matrices(
            inputs.HA, inputs.HB, inputs.X, inputs.rho,
            inputs.system_dim, inputs.device_dim, pulses=inputs.pulses, seed=seed,
        )
    except CommutatorViolation as exc:
        report["verdict"] = "rejected"
        report["reason"] = exc.to_dict()
    except JointDiagonalizationFailure as exc:
        report["verdict"] = "rejected"
        report["reason"] = dict(exc.to_dict(), residual=exc.residual)
    else:
        report["spectra"] = {
            "system": model.system.energies,
            "device": model.device.energies,
            "xi": model.interaction.xi,
        }
        # Lappo-Danilevsky residual at a generic protocol instant
        rng = np.random.default_rng(seed)
        t = float(rng.uniform(0.5, 2.0))
        values = rng.uniform(0.0, 1.0, model.M)
        phases = rng.uniform(0.0, 1.0, model.M) * t
        xs = [mat for _, mat in named[2:]]
        report["lappo_danilevsky_residual"] = lappo_danilevsky_residual(
            named[0][1], named[1][1], xs, values, phases, t
        )

    if report["verdict"] == "accepted":
        logger.info("  Family ACCEPTED: the measurement is nondestructive")
    else:
        logger.error("  Family REJECTED: %s", report["reason"]["message"])

    if writer is not None:
        writer.write_report("validate_report", report)
        writer.write_manifest({"command": "validate"})
    return report, 0 if report["verdict"] == "accepted" else 1
