"""Experiment runner: trials, tests and report files for one config."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .ensembles import (EnsembleRegistry, Slot, VelocityVector, exchange_trajectories,
                        mean_velocity, simulate_trajectories, verify_componentwise_locality,
                        verify_velocity_invariance)
from .lhv import StrategyMixture, bell_sum_two_station, random_mixture, verify_bell_bound
from .locality import (InsufficientDataError, anticorrelation_check, bell_statistic,
                       no_signaling_test, passive_locality_test)
from .samplers import (DeterministicSetup, ModelId, TrialBatch, cos2_marginals, expected_joint,
                       frechet_feasibility, generate_trials, uniform_marginals, write_trials_csv)
from .spin import Axis
from .streams import CounterStream

TRIALS_FILE = "trials.csv"
REPORT_FILE = "report.json"
RANDOM_MIXTURES = 10_000
COUNT_SIGMA = 4.0


@dataclass
class TestOutcome:
    """One row of the run report; ``passed`` is None when nothing was expected."""

    name: str
    scope: str
    result: dict
    expected: object = None
    passed: bool | None = None
    summary: str = ""

    __test__ = False

    def to_dict(self) -> dict:
        return {"name": self.name, "scope": self.scope, "expected": self.expected,
                "passed": self.passed, "summary": self.summary, "result": self.result}


@dataclass
class RunResult:
    config: ExperimentConfig
    batches: list[TrialBatch] = field(default_factory=list)
    outcomes: list[TestOutcome] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(o.passed is not False for o in self.outcomes)

    def report(self) -> dict:
        config = self.config.to_dict()
        # execution details; the report must not depend on them
        config.pop("workers")
        config.pop("output_path")
        return {
            "config": config,
            "trials": {"pairs": [[b.theta_a[0], b.theta_b[0]] for b in self.batches],
                       "rows": int(sum(len(b) for b in self.batches))},
            "tests": [o.to_dict() for o in self.outcomes],
            "all_expected_passed": self.all_passed,
        }


def _fmt_deg(a: float, b: float) -> str:
    return f"({a:g},{b:g})"


def _deterministic_setup(config: ExperimentConfig) -> DeterministicSetup | None:
    if config.model_id is not ModelId.DETERMINISTIC:
        return None
    triple = next(g for g in config.axes if len(g) == 3)
    mixture = (StrategyMixture.uniform() if config.mixture is None
               else StrategyMixture.from_vector(config.mixture))
    return DeterministicSetup(tuple(Axis.from_degrees(v) for v in triple), mixture)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Experiment:
    """Generates the trials of a config and evaluates its tests."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.stream = CounterStream(config.seed)
        self.setup = _deterministic_setup(config)
        self.pairs_deg = config.axis_pairs()
        self.batches: list[TrialBatch] = []

    def generate(self) -> list[TrialBatch]:
        n = self.config.trials_per_pair
        self.batches = [
            generate_trials(self.config.model_id, Axis.from_degrees(a), Axis.from_degrees(b), n,
                            self.stream, start=k * n, setup=self.setup, workers=self.config.workers)
            for k, (a, b) in enumerate(self.pairs_deg)
        ]
        return self.batches

    def run(self) -> RunResult:
        if not self.batches:
            self.generate()
        result = RunResult(self.config, self.batches)
        for name in self.config.tests:
            result.outcomes.extend(getattr(self, "_test_" + name)())
        return result

    # -- tests ---------------------------------------------------------------

    def _predicted(self, k: int) -> np.ndarray:
        a, b = self.pairs_deg[k]
        return expected_joint(self.config.model_id, Axis.from_degrees(a), Axis.from_degrees(b), self.setup)

    def _test_lhv_bound(self) -> list[TestOutcome]:
        report = verify_bell_bound()
        rng = np.random.default_rng(self.config.seed)
        worst = max(float(bell_sum_two_station(random_mixture(rng))) for _ in range(RANDOM_MIXTURES))
        result = report.to_dict()
        result["random_mixtures"] = RANDOM_MIXTURES
        result["random_mixture_max"] = worst
        ok = report.max_sum == 1 and report.bound_holds and worst <= 1 + 1e-12
        return [TestOutcome("lhv_bound", "all strategies", result, expected="max_sum = 1", passed=ok,
                            summary=f"max_sum={result['max_sum']} witness={report.witness.label} "
                                    f"mixtures_max={worst:.6f}")]

    def _test_bell(self) -> list[TestOutcome]:
        out = []
        k = 0
        for group in self.config.axes:
            if len(group) != 3:
                k += 1
                continue
            batches = self.batches[k:k + 3]
            scope = "(" + ",".join(f"{v:g}" for v in group) + ")"
            try:
                est = bell_statistic(*batches)
            except InsufficientDataError as exc:
                out.append(TestOutcome("bell", scope, {"error": str(exc)}, expected="enough trials",
                                       passed=False, summary=str(exc)))
                k += 3
                continue
            predicted = [float(self._predicted(k + i)[0]) for i in range(3)]
            z = [(e - p) / se if se > 0 else (0.0 if e == p else math.inf)
                 for e, p, se in zip(est.estimates, predicted, est.standard_errors)]
            expect = self.config.model_id is ModelId.COUPLED
            consistent = all(abs(v) <= self.config.threshold for v in z)
            result = est.to_dict()
            result.update(predicted=predicted, predicted_sum=math.fsum(predicted), z_vs_predicted=z)
            out.append(TestOutcome(
                "bell", scope, result, expected={"violates": expect},
                passed=(est.violates == expect) and consistent,
                summary=f"sum={est.sum:.5f}+-{est.sum_se:.5f} violates={est.violates} "
                        f"predicted={math.fsum(predicted):.5f}"))
            k += 3
        return out

    def _test_no_signaling(self) -> list[TestOutcome]:
        out = []
        for station in ("A", "B"):
            groups: dict[float, list[int]] = {}
            for k, (a, b) in enumerate(self.pairs_deg):
                groups.setdefault(a if station == "A" else b, []).append(k)
            for local, ks in groups.items():
                for i, j in itertools.combinations(ks, 2):
                    remote_i = self.pairs_deg[i][1 if station == "A" else 0]
                    remote_j = self.pairs_deg[j][1 if station == "A" else 0]
                    if remote_i == remote_j:
                        continue
                    b1, b2 = self.batches[i], self.batches[j]
                    if station == "B":
                        b1, b2 = _swap_stations(b1), _swap_stations(b2)
                    scope = f"{station}@{local:g} remote {remote_i:g} vs {remote_j:g}"
                    try:
                        rep = no_signaling_test(b1, b2, self.config.threshold)
                    except InsufficientDataError as exc:
                        out.append(TestOutcome("no_signaling", scope, {"error": str(exc)},
                                               expected="ACCEPT", passed=False, summary=str(exc)))
                        continue
                    out.append(TestOutcome("no_signaling", scope, rep.to_dict(), expected="ACCEPT",
                                           passed=rep.accepted,
                                           summary=f"diff={rep.statistic:+.5f} z={rep.z_score:+.2f} {rep.decision.value}"))
        if not out:
            out.append(TestOutcome("no_signaling", "-", {"skipped": "no pairs share a local setting"},
                                   summary="skipped: no pairs share a local setting"))
        return out

    def _test_passive_locality(self) -> list[TestOutcome]:
        out = []
        thr = self.config.threshold
        for k, (a, b) in enumerate(self.pairs_deg):
            scope = _fmt_deg(a, b)
            try:
                rep = passive_locality_test(self.batches[k], thr)
            except InsufficientDataError as exc:
                out.append(TestOutcome("passive_locality", scope, {"error": str(exc)},
                                       expected="enough trials", passed=False, summary=str(exc)))
                continue
            expected = None
            if self.config.model_id is ModelId.INDEPENDENT_FLIP:
                expected = "ACCEPT"
            elif self.config.model_id is ModelId.COUPLED:
                # under the coupled model z is centred on -cos(a - b) sqrt(n)
                z_pred = abs(math.cos(math.radians(a - b))) * math.sqrt(len(self.batches[k]))
                if z_pred >= thr + 4.0:
                    expected = "REJECT"
                elif z_pred <= thr - 3.5:
                    expected = "ACCEPT"
            passed = None if expected is None else rep.decision.value == expected
            out.append(TestOutcome("passive_locality", scope, rep.to_dict(), expected=expected,
                                   passed=passed,
                                   summary=f"delta={rep.statistic:+.5f} z={rep.z_score:+.2f} {rep.decision.value}"))
        return out

    def _test_anticorrelation(self) -> list[TestOutcome]:
        out = []
        for k, (a, b) in enumerate(self.pairs_deg):
            if a != b:
                continue
            rep = anticorrelation_check(self.batches[k])
            equal_rate = float(self._predicted(k)[[0, 3]].sum())
            if equal_rate == 0.0:
                expected = "ACCEPT"
            elif equal_rate * len(self.batches[k]) >= 20:
                expected = "REJECT"
            else:
                expected = None
            passed = None if expected is None else rep.decision.value == expected
            out.append(TestOutcome("anticorrelation", _fmt_deg(a, b), rep.to_dict(), expected=expected,
                                   passed=passed,
                                   summary=f"equal_outcomes={int(rep.statistic)} {rep.decision.value}"))
        if not out:
            out.append(TestOutcome("anticorrelation", "-", {"skipped": "no equal-setting pairs"},
                                   summary="skipped: no equal-setting pairs"))
        return out

    def _test_frechet(self) -> list[TestOutcome]:
        out = []
        for a, b in self.pairs_deg:
            ax, bx = Axis.from_degrees(a), Axis.from_degrees(b)
            cos2 = frechet_feasibility(ax, bx, cos2_marginals)
            flat = frechet_feasibility(ax, bx, uniform_marginals)
            out.append(TestOutcome(
                "frechet", _fmt_deg(a, b), {"cos2": cos2.to_dict(), "uniform": flat.to_dict()},
                expected={"uniform_feasible": True}, passed=flat.feasible,
                summary=f"cos2 feasible={cos2.feasible} (L={cos2.lower_sum:.4f}, target={cos2.target:.4f}, "
                        f"U={cos2.upper_sum:.4f}); uniform feasible={flat.feasible}"))
        return out

    def _test_ensembles(self) -> list[TestOutcome]:
        out = []
        ens = self.config.ensemble
        drift_vec = np.asarray(ens.drift, dtype=float)
        dim = len(drift_vec)
        registries = {}
        for k, (a, b) in enumerate(self.pairs_deg):
            batch = self.batches[k]
            m = min(ens.pairs, len(batch))
            part = batch.select(slice(0, m))
            population = simulate_trajectories(
                2 * m, lambda x: np.broadcast_to(drift_vec, x.shape), ens.diffusion_coeff, ens.dt,
                ens.steps, self.stream.spawn(f"ensembles-{k}"), dim=dim, workers=self.config.workers)
            digest = population.digest()
            before = EnsembleRegistry.from_sources(part.source_1, part.pair_index)
            after = exchange_trajectories(before, part)
            after.check_invariants()
            counts = after.joint_counts()
            p = self._predicted(k)
            count_z = {}
            for label, pk in zip(("pp", "pm", "mp", "mm"), p):
                sd = math.sqrt(m * pk * (1 - pk))
                diff = counts[label] - m * pk
                count_z[label] = diff / sd if sd > 0 else (0.0 if diff == 0 else math.inf)
            counts_ok = all(abs(z) <= COUNT_SIGMA for z in count_z.values())
            invariance = verify_velocity_invariance(before, after, population)
            registries[k] = (after, population)
            ok = counts_ok and invariance.passed and population.digest() == digest
            out.append(TestOutcome(
                "ensembles", _fmt_deg(a, b),
                {"registry": after.snapshot(population), "predicted": p.tolist(), "count_z": count_z,
                 "velocity_invariance": invariance.to_dict(), "positions_sha256": digest},
                expected={"counts_within_4sigma": True, "velocity_invariance": True}, passed=ok,
                summary=f"counts={[counts[x] for x in ('pp', 'pm', 'mp', 'mm')]} "
                        f"invariance={'pass' if invariance.passed else 'FAIL'}"))
        # r1 comparison across remote settings that share the local one
        for i, j in itertools.combinations(range(len(self.pairs_deg)), 2):
            (ai, bi), (aj, bj) = self.pairs_deg[i], self.pairs_deg[j]
            if ai != aj or bi == bj or len(registries[i][0]) != len(registries[j][0]):
                continue
            reg_i, pop_i = registries[i]
            reg_j, _ = registries[j]
            # compare both labelings on the same trajectory population
            reg_j = reg_i.replace_spins(reg_j.spin_r1, reg_j.spin_r2)
            u = [mean_velocity(e, pop_i) for e in reg_i.ensembles() if e.label[0] is Slot.R1 and len(e)]
            v = [mean_velocity(e, pop_i) for e in reg_i.ensembles() if e.label[0] is Slot.R2 and len(e)]
            n = min(len(u), len(v))
            rep = verify_componentwise_locality(u[:n], v[:n], reg_i, reg_j, pop_i)
            out.append(TestOutcome("ensembles", f"R1@{ai:g} remote {bi:g} vs {bj:g}", rep.to_dict(),
                                   expected={"passed": True}, passed=rep.passed,
                                   summary=f"r1_up={rep.settings_comparison['r1_up_counts']} "
                                           f"{'pass' if rep.passed else 'FAIL'}"))
        return out


def _swap_stations(batch: TrialBatch) -> TrialBatch:
    return TrialBatch(batch.pair_index, batch.theta_b, batch.theta_a, batch.source_2.astype(np.int8),
                      batch.outcome_b, batch.outcome_a, batch.model_id)


def write_outputs(result: RunResult, out_dir: "str | Path") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trials_path = out_dir / TRIALS_FILE
    report_path = out_dir / REPORT_FILE
    with open(trials_path, "w", encoding="utf-8", newline="\n") as fh:
        write_trials_csv(result.batches, fh)
    report_path.write_text(json.dumps(_jsonable(result.report()), indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    return trials_path, report_path


def summary_table(result: RunResult) -> str:
    rows = [("test", "scope", "status", "summary")]
    for o in result.outcomes:
        status = "info" if o.passed is None else ("PASS" if o.passed else "FAIL")
        rows.append((o.name, o.scope, status, o.summary))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = ["  ".join(r[i].ljust(widths[i]) for i in range(3)) + "  " + r[3] for r in rows]
    lines.append(f"model={result.config.model_id.value} seed={result.config.seed} "
                 f"trials_per_pair={result.config.trials_per_pair} "
                 f"overall={'PASS' if result.all_passed else 'FAIL'}")
    return "\n".join(lines)


def run_experiment(config: ExperimentConfig, out_dir: "str | Path | None" = None) -> RunResult:
    result = Experiment(config).run()
    write_outputs(result, config.output_path if out_dir is None else out_dir)
    return result
