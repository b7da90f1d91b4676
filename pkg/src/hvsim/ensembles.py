"""Trajectory ensembles and the exchange step at measurement.

Trajectories come from an Euler-Maruyama Langevin integrator and are
never modified afterwards. A registry pairs one ``R1`` trajectory with
one ``R2`` trajectory per emitted pair and labels each with a spin.
Exchange only moves trajectories between spin ensembles, i.e. it
rewrites labels from trial outcomes; counts change, positions do not.
"""

from __future__ import annotations

import enum
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .samplers import TrialBatch, as_batch
from .spin import SpinOutcome, ensemble_weight
from .streams import CounterStream, as_stream

TRAJECTORY_TAG = "trajectory"
JOINT_LABELS = ("pp", "pm", "mp", "mm")
INVARIANCE_SE = 5.0
COUNT_SIGMA = 4.0


class SimulationError(RuntimeError):
    """The drift produced a non-finite value during integration."""


class Slot(str, enum.Enum):
    R1 = "R1"
    R2 = "R2"


@dataclass(frozen=True)
class VelocityVector:
    components: np.ndarray

    def __post_init__(self) -> None:
        comps = np.array(self.components, dtype=float, ndmin=1)
        if not np.all(np.isfinite(comps)):
            raise ValueError("velocity components must be finite")
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)

    def __len__(self) -> int:
        return len(self.components)

    def same_bits(self, other: "VelocityVector") -> bool:
        return self.components.tobytes() == other.components.tobytes()


@dataclass(frozen=True)
class Trajectory:
    id: int
    particle_slot: Slot
    positions: np.ndarray
    spin_label: SpinOutcome
    pair_id: int


@dataclass(frozen=True)
class TrajectoryPopulation:
    """Positions of ``n`` trajectories, shape ``(n, steps + 1, dim)``."""

    positions: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[1] < 2:
            raise ValueError("positions must have shape (n, steps + 1, dim) with steps >= 1")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def steps(self) -> int:
        return self.positions.shape[1] - 1

    @property
    def duration(self) -> float:
        return self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def velocities(self) -> np.ndarray:
        """Secant velocity (net displacement over duration) per trajectory."""
        return (self.positions[:, -1, :] - self.positions[:, 0, :]) / self.duration

    def digest(self) -> str:
        return hashlib.sha256(self.positions.tobytes()).hexdigest()


def simulate_trajectories(n: int, drift: Callable[[np.ndarray], np.ndarray],
                          diffusion_coeff: float, dt: float, steps: int,
                          rng: "CounterStream | int", x0: "float | Sequence[float]" = 0.0,
                          dim: int = 1, start: int = 0, workers: int = 1,
                          chunk: int = 4096) -> TrajectoryPopulation:
    """Euler-Maruyama integration of ``dx = drift(x) dt + sqrt(2 D) dW``.

    ``drift`` maps an ``(m, dim)`` array of positions to velocities of
    the same shape. Trajectory ``start + i`` reads its noise from its own
    slice of the counter stream, so results do not depend on ``chunk``
    or ``workers``.
    """
    if n < 1 or steps < 1:
        raise ValueError("need n >= 1 and steps >= 1")
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError("dt must be positive")
    if not (diffusion_coeff >= 0 and math.isfinite(diffusion_coeff)):
        raise ValueError("diffusion coefficient must be nonnegative")
    stream = as_stream(rng)
    origin = np.broadcast_to(np.asarray(x0, dtype=float), (dim,))
    noise_scale = math.sqrt(2.0 * diffusion_coeff * dt)
    per_traj = steps * dim

    def run(lo: int) -> np.ndarray:
        m = min(chunk, n - lo)
        xi = stream.normal(TRAJECTORY_TAG, (start + lo) * per_traj, m * per_traj).reshape(m, steps, dim)
        out = np.empty((m, steps + 1, dim))
        out[:, 0, :] = origin
        x = out[:, 0, :].copy()
        for k in range(steps):
            v = np.broadcast_to(np.asarray(drift(x), dtype=float), x.shape)
            bad = ~np.all(np.isfinite(v), axis=1)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise SimulationError(
                    f"non-finite drift for trajectory {start + lo + i} at step {k} "
                    f"(position {x[i].tolist()})")
            x = x + v * dt + noise_scale * xi[:, k, :]
            out[:, k + 1, :] = x
        return out

    los = list(range(0, n, chunk))
    if workers > 1 and len(los) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, los))
    else:
        parts = [run(lo) for lo in los]
    return TrajectoryPopulation(np.concatenate(parts), dt)


@dataclass(frozen=True)
class Ensemble:
    label: tuple[Slot, SpinOutcome]
    members: np.ndarray

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class EnsembleRegistry:
    """Spin labels of paired trajectories.

    ``r1_ids[k]`` and ``r2_ids[k]`` index the population rows of pair
    ``pair_ids[k]``; ``spin_r1``/``spin_r2`` hold +1/-1 labels.
    ``norm_sq_integrals`` gives the spatial norm integral of each of the
    four joint components ``pp, pm, mp, mm`` (1 for normalized parts).
    """

    pair_ids: np.ndarray
    r1_ids: np.ndarray
    r2_ids: np.ndarray
    spin_r1: np.ndarray
    spin_r2: np.ndarray
    norm_sq_integrals: Mapping[str, float] = field(
        default_factory=lambda: {k: 1.0 for k in JOINT_LABELS})

    def __post_init__(self) -> None:
        n = len(self.pair_ids)
        for name in ("r1_ids", "r2_ids", "spin_r1", "spin_r2"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has the wrong length")
        if np.any(np.diff(self.pair_ids) <= 0):
            raise ValueError("pair ids must be strictly increasing")
        for arr in (self.pair_ids, self.r1_ids, self.r2_ids, self.spin_r1, self.spin_r2):
            arr.setflags(write=False)

    @classmethod
    def from_sources(cls, source_1: np.ndarray, pair_ids: np.ndarray | None = None,
                     norm_sq_integrals: Mapping[str, float] | None = None) -> "EnsembleRegistry":
        """Anti-correlated z configuration labelled by the source records.

        Trajectory rows ``0 .. N-1`` are the ``R1`` particles and rows
        ``N .. 2N-1`` the ``R2`` particles.
        """
        source_1 = np.asarray(source_1, dtype=np.int8)
        n = len(source_1)
        pair_ids = np.arange(n, dtype=np.int64) if pair_ids is None else np.asarray(pair_ids, dtype=np.int64)
        kwargs = {} if norm_sq_integrals is None else {"norm_sq_integrals": dict(norm_sq_integrals)}
        return cls(pair_ids.copy(), np.arange(n), np.arange(n, 2 * n),
                   source_1.copy(), (-source_1).astype(np.int8), **kwargs)

    def __len__(self) -> int:
        return len(self.pair_ids)

    def trajectory(self, population: TrajectoryPopulation, slot: Slot, k: int) -> Trajectory:
        ids, spins = (self.r1_ids, self.spin_r1) if slot is Slot.R1 else (self.r2_ids, self.spin_r2)
        return Trajectory(int(ids[k]), slot, population.positions[ids[k]],
                          SpinOutcome(int(spins[k])), int(self.pair_ids[k]))

    def trajectories(self, population: TrajectoryPopulation) -> Iterator[Trajectory]:
        for slot in Slot:
            for k in range(len(self)):
                yield self.trajectory(population, slot, k)

    def ensembles(self) -> list[Ensemble]:
        """The four slot ensembles ``(R1, UP), (R1, DOWN), (R2, UP), (R2, DOWN)``."""
        out = []
        for slot, ids, spins in ((Slot.R1, self.r1_ids, self.spin_r1), (Slot.R2, self.r2_ids, self.spin_r2)):
            for spin in (SpinOutcome.UP, SpinOutcome.DOWN):
                out.append(Ensemble((slot, spin), ids[spins == int(spin)]))
        return out

    def slot_members(self, slot: Slot) -> np.ndarray:
        return self.r1_ids if slot is Slot.R1 else self.r2_ids

    def joint_counts(self) -> dict[str, int]:
        """Pair counts ``S_pp, S_pm, S_mp, S_mm``."""
        counts = {}
        for label in JOINT_LABELS:
            s1 = 1 if label[0] == "p" else -1
            s2 = 1 if label[1] == "p" else -1
            counts[label] = int(np.count_nonzero((self.spin_r1 == s1) & (self.spin_r2 == s2)))
        return counts

    def slot_counts(self) -> dict[str, int]:
        return {f"{slot.value}{'+' if spin > 0 else '-'}": len(e)
                for e in self.ensembles() for slot, spin in [e.label]}

    def weights(self) -> dict[str, float]:
        """Ensemble weights of the four joint components."""
        counts = self.joint_counts()
        total = sum(counts.values())
        return {k: ensemble_weight(self.norm_sq_integrals[k], counts[k], total) for k in JOINT_LABELS}

    def check_invariants(self) -> None:
        counts = self.joint_counts()
        if sum(counts.values()) != len(self):
            raise AssertionError("joint counts do not cover every pair")
        for slot in Slot:
            per_slot = sum(len(e) for e in self.ensembles() if e.label[0] is slot)
            if per_slot != len(self):
                raise AssertionError(f"slot {slot.value} counts do not sum to the pair count")
        w = self.weights()
        if abs(math.fsum(self.norm_sq_integrals[k] * w[k] for k in JOINT_LABELS) - 1.0) > 1e-9:
            raise AssertionError("weights do not normalize")

    def replace_spins(self, spin_r1: np.ndarray, spin_r2: np.ndarray) -> "EnsembleRegistry":
        return EnsembleRegistry(self.pair_ids, self.r1_ids, self.r2_ids,
                                np.asarray(spin_r1, dtype=np.int8), np.asarray(spin_r2, dtype=np.int8),
                                dict(self.norm_sq_integrals))

    def snapshot(self, population: TrajectoryPopulation | None = None) -> dict:
        """JSON-ready counts, weights and (given a population) mean velocities."""
        data = {
            "pairs": len(self),
            "joint_counts": self.joint_counts(),
            "weights": self.weights(),
            "ensembles": [],
        }
        for e in self.ensembles():
            entry = {"slot": e.label[0].value, "spin": int(e.label[1]), "count": len(e)}
            if population is not None and len(e):
                mean, se = _mean_and_se(population.velocities(), e.members)
                entry["mean_velocity"] = mean.tolist()
                entry["standard_error"] = se.tolist()
            data["ensembles"].append(entry)
        return data


def _mean_and_se(velocities: np.ndarray, members: np.ndarray,
                 reference: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    v = velocities[members]
    # shifting by a reference keeps identical inputs bit-exact
    ref = v[0] if reference is None else reference
    mean = ref + np.mean(v - ref, axis=0)
    se = np.std(v, axis=0, ddof=1) / math.sqrt(len(v)) if len(v) > 1 else np.zeros(v.shape[1])
    return mean, se


def mean_velocity(ensemble: Ensemble, population: TrajectoryPopulation) -> VelocityVector:
    """Average secant velocity of the ensemble's members."""
    if len(ensemble) == 0:
        raise ValueError(f"ensemble {ensemble.label} is empty")
    mean, _ = _mean_and_se(population.velocities(), ensemble.members)
    return VelocityVector(mean)


def mean_velocity_se(ensemble: Ensemble, population: TrajectoryPopulation) -> np.ndarray:
    if len(ensemble) == 0:
        raise ValueError(f"ensemble {ensemble.label} is empty")
    return _mean_and_se(population.velocities(), ensemble.members)[1]


def exchange_trajectories(registry: EnsembleRegistry, trials) -> EnsembleRegistry:
    """Relabel each pair's trajectories with its measured outcomes.

    The ``R1`` trajectory of pair ``k`` takes ``outcome_a`` of the trial
    with ``pair_index == k`` and the ``R2`` trajectory takes
    ``outcome_b``. Pairs without a trial keep their labels.
    """
    if not isinstance(trials, TrialBatch):
        trials = list(trials)
        if not trials:
            return registry.replace_spins(registry.spin_r1, registry.spin_r2)
    batch = as_batch(trials)
    if len(batch) == 0:
        return registry.replace_spins(registry.spin_r1, registry.spin_r2)
    order = np.argsort(batch.pair_index, kind="stable")
    idx = batch.pair_index[order]
    if np.any(idx[1:] == idx[:-1]):
        raise ValueError("more than one trial for the same pair")
    pos = np.searchsorted(registry.pair_ids, idx)
    known = (pos < len(registry)) & (registry.pair_ids[np.minimum(pos, len(registry) - 1)] == idx)
    if not known.all():
        raise ValueError(f"trial references unknown pair id {int(idx[~known][0])}")
    spin_r1 = registry.spin_r1.copy()
    spin_r2 = registry.spin_r2.copy()
    # sequential pass in pair-id order
    spin_r1[pos] = batch.outcome_a[order]
    spin_r2[pos] = batch.outcome_b[order]
    return registry.replace_spins(spin_r1, spin_r2)


@dataclass
class InvarianceReport:
    passed: bool
    threshold_se: float
    ensembles: list[dict]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "threshold_se": self.threshold_se, "ensembles": self.ensembles}


def verify_velocity_invariance(before: EnsembleRegistry, after: EnsembleRegistry,
                               population: TrajectoryPopulation,
                               threshold_se: float = INVARIANCE_SE) -> InvarianceReport:
    """Compare each post-exchange ensemble mean with its slot's population mean.

    An ensemble passes when every component deviates by at most
    ``threshold_se`` standard errors of the ensemble mean. Empty
    ensembles are listed and skipped.
    """
    if not (np.array_equal(before.r1_ids, after.r1_ids) and np.array_equal(before.r2_ids, after.r2_ids)):
        raise ValueError("registries do not cover the same trajectories")
    velocities = population.velocities()
    slot_ref = {slot: velocities[before.slot_members(slot)[0]] for slot in Slot}
    slot_mean = {slot: _mean_and_se(velocities, before.slot_members(slot), slot_ref[slot])[0]
                 for slot in Slot}
    rows, passed = [], True
    for e in after.ensembles():
        slot, spin = e.label
        row = {"slot": slot.value, "spin": int(spin), "count": len(e)}
        if len(e) == 0:
            row["skipped"] = "empty"
            rows.append(row)
            continue
        mean, se = _mean_and_se(velocities, e.members, slot_ref[slot])
        dev = mean - slot_mean[slot]
        ok = bool(np.all(np.abs(dev) <= threshold_se * se))
        passed &= ok
        with np.errstate(divide="ignore", invalid="ignore"):
            in_se = np.where(se > 0, np.abs(dev) / se, np.where(dev == 0, 0.0, np.inf))
        row.update(mean_velocity=mean.tolist(), population_mean=slot_mean[slot].tolist(),
                   deviation=dev.tolist(), standard_error=se.tolist(),
                   deviation_in_se=in_se.tolist(), passed=ok)
        rows.append(row)
    return InvarianceReport(passed, threshold_se, rows)


@dataclass
class LocalityReport:
    componentwise: bool
    perturbation_checks: int
    settings_comparison: dict | None = None

    @property
    def passed(self) -> bool:
        ok = self.componentwise
        if self.settings_comparison is not None:
            ok &= self.settings_comparison["passed"]
        return ok

    def to_dict(self) -> dict:
        return {"passed": self.passed, "componentwise": self.componentwise,
                "perturbation_checks": self.perturbation_checks,
                "settings_comparison": self.settings_comparison}


def _componentwise(family: Sequence[VelocityVector]) -> tuple[bool, int]:
    base = tuple(family)
    checks, ok = 0, True
    for i in range(len(base)):
        bumped = list(base)
        bumped[i] = VelocityVector(base[i].components + 1.0)
        aggregate = tuple(bumped)
        for j in range(len(base)):
            if j != i:
                ok &= aggregate[j].same_bits(base[j])
                checks += 1
        ok &= not aggregate[i].same_bits(base[i])
    return ok, checks


def compare_settings(after_b1: EnsembleRegistry, after_b2: EnsembleRegistry,
                     population: TrajectoryPopulation, sigma: float = COUNT_SIGMA,
                     threshold_se: float = INVARIANCE_SE) -> dict:
    """How the R1 ensembles differ between two runs at different remote settings.

    The R1 UP count difference is tested against ``sigma`` binomial
    standard deviations (pooled UP fraction), and the R1 ensemble means
    against ``threshold_se`` standard errors of their difference.
    """
    n1, n2 = len(after_b1), len(after_b2)
    up1 = int(np.count_nonzero(after_b1.spin_r1 > 0))
    up2 = int(np.count_nonzero(after_b2.spin_r1 > 0))
    p = (up1 + up2) / (n1 + n2)
    sd = math.sqrt(n1 * p * (1 - p) + n2 * p * (1 - p))
    diff = up1 - up2
    counts_ok = abs(diff) <= sigma * sd if sd > 0 else diff == 0
    velocities = population.velocities()
    rows, means_ok = [], True
    e1 = {e.label: e for e in after_b1.ensembles() if e.label[0] is Slot.R1}
    e2 = {e.label: e for e in after_b2.ensembles() if e.label[0] is Slot.R1}
    for label in e1:
        if len(e1[label]) < 2 or len(e2[label]) < 2:
            continue
        ref = velocities[e1[label].members[0]]
        m1, s1 = _mean_and_se(velocities, e1[label].members, ref)
        m2, s2 = _mean_and_se(velocities, e2[label].members, ref)
        se = np.sqrt(s1 ** 2 + s2 ** 2)
        dev = m1 - m2
        ok = bool(np.all(np.abs(dev) <= threshold_se * se))
        means_ok &= ok
        rows.append({"spin": int(label[1]), "deviation": dev.tolist(), "standard_error": se.tolist(),
                     "passed": ok})
    return {"r1_up_counts": [up1, up2], "count_difference": diff, "count_sd": sd,
            "counts_passed": bool(counts_ok), "mean_velocities": rows,
            "passed": bool(counts_ok and means_ok)}


def verify_componentwise_locality(u_family: Sequence[VelocityVector], v_family: Sequence[VelocityVector],
                                  after_b1: EnsembleRegistry | None = None,
                                  after_b2: EnsembleRegistry | None = None,
                                  population: TrajectoryPopulation | None = None) -> LocalityReport:
    """Check that the N-ensemble velocity objects are plain tuples of parts.

    Perturbing member ``i`` must leave every other member bit-identical.
    When two post-exchange registries from different remote settings are
    given, their R1 ensembles are compared with :func:`compare_settings`.
    """
    if len(u_family) != len(v_family):
        raise ValueError(f"family lengths differ: {len(u_family)} vs {len(v_family)}")
    ok_u, n_u = _componentwise(u_family)
    ok_v, n_v = _componentwise(v_family)
    comparison = None
    if after_b1 is not None or after_b2 is not None:
        if after_b1 is None or after_b2 is None or population is None:
            raise ValueError("settings comparison needs both registries and the population")
        comparison = compare_settings(after_b1, after_b2, population)
    return LocalityReport(ok_u and ok_v, n_u + n_v, comparison)
