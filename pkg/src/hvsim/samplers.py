"""Hidden-variable samplers for the two-station experiment.

Three models generate trials:

``coupled``
    One probability measure per setting pair. The source record is kept
    but the joint outcome is drawn from the singlet table of the two
    settings, with uniform station marginals given the record.
``independent-flip``
    Each station flips its particle's z-prepared spin with the spin-1/2
    transition law, independently of the other station.
``deterministic``
    Replays a mixture of deterministic strategies on three axes.

Trials are held column-wise in :class:`TrialBatch`; iterating a batch
yields :class:`TrialRecord` objects. All randomness is drawn from a
:class:`~hvsim.streams.CounterStream` at the global pair index, so a
batch is identical however it is chunked or threaded.
"""

from __future__ import annotations

import enum
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence, TextIO

import numpy as np

from .lhv import AXIS_IDS, DeterministicStrategy, StrategyMixture, enumerate_strategies
from .spin import (Axis, BornTable, SpinOutcome, as_axis, singlet_joint,
                   transition_probability, transition_probability_array)
from .streams import CounterStream, as_stream

CHUNK_SIZE = 1 << 16
PROB_TOL = 1e-12

TRIAL_CSV_HEADER = ("pair_index", "theta_a", "theta_b", "source_1", "source_2",
                    "outcome_a", "outcome_b", "model_id")

# stream tags
SOURCE_TAG = "source"
STATION_A_TAG = "station-A"
STATION_B_TAG = "station-B"
JOINT_TAG = "joint"
STRATEGY_TAG = "strategy"


class ModelId(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    INDEPENDENT_FLIP = "independent-flip"
    COUPLED = "coupled"


MODEL_DESCRIPTIONS = {
    ModelId.DETERMINISTIC: "single probability space: replay of a mixture of deterministic strategies on three axes",
    ModelId.INDEPENDENT_FLIP: "each station flips its z-prepared spin independently with the cos^2 transition law",
    ModelId.COUPLED: "one measure per setting pair; singlet joint table with uniform source-conditional marginals",
}


@dataclass(frozen=True)
class SourceRecord:
    """Z-spins of (particle 1, particle 2) at emission; always opposite."""

    pair_spins: tuple[SpinOutcome, SpinOutcome]

    def __post_init__(self) -> None:
        p1, p2 = (SpinOutcome(s) for s in self.pair_spins)
        if p1 == p2:
            raise ValueError("source spins must be opposite")
        object.__setattr__(self, "pair_spins", (p1, p2))

    @classmethod
    def from_particle1(cls, spin: SpinOutcome) -> "SourceRecord":
        spin = SpinOutcome(spin)
        return cls((spin, -spin))

    @property
    def particle1(self) -> SpinOutcome:
        return self.pair_spins[0]

    @property
    def particle2(self) -> SpinOutcome:
        return self.pair_spins[1]


SOURCE_RECORDS = (SourceRecord.from_particle1(SpinOutcome.UP),
                  SourceRecord.from_particle1(SpinOutcome.DOWN))


@dataclass(frozen=True)
class TrialRecord:
    pair_index: int
    axis_a: Axis
    axis_b: Axis
    source: SourceRecord
    outcome_a: SpinOutcome
    outcome_b: SpinOutcome
    model_id: ModelId


@dataclass
class TrialBatch:
    """Column-oriented trial stream.

    Spins are stored as int8 with ``+1`` for UP and ``-1`` for DOWN.
    """

    pair_index: np.ndarray
    theta_a: np.ndarray
    theta_b: np.ndarray
    source_1: np.ndarray
    outcome_a: np.ndarray
    outcome_b: np.ndarray
    model_id: ModelId

    def __post_init__(self) -> None:
        n = len(self.pair_index)
        for name in ("theta_a", "theta_b", "source_1", "outcome_a", "outcome_b"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has the wrong length")
        self.model_id = ModelId(self.model_id)

    @property
    def source_2(self) -> np.ndarray:
        return -self.source_1

    def __len__(self) -> int:
        return len(self.pair_index)

    def __iter__(self) -> Iterator[TrialRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> TrialRecord:
        return TrialRecord(
            pair_index=int(self.pair_index[i]),
            axis_a=Axis(float(self.theta_a[i])),
            axis_b=Axis(float(self.theta_b[i])),
            source=SourceRecord.from_particle1(SpinOutcome(int(self.source_1[i]))),
            outcome_a=SpinOutcome(int(self.outcome_a[i])),
            outcome_b=SpinOutcome(int(self.outcome_b[i])),
            model_id=self.model_id,
        )

    def axis_pair(self) -> tuple[Axis, Axis]:
        """The single setting pair shared by every trial."""
        if len(self) == 0:
            raise ValueError("empty batch has no axis pair")
        a, b = self.theta_a[0], self.theta_b[0]
        if np.any(self.theta_a != a) or np.any(self.theta_b != b):
            raise ValueError("batch mixes several axis pairs")
        return Axis(float(a)), Axis(float(b))

    def select(self, mask: np.ndarray) -> "TrialBatch":
        return TrialBatch(self.pair_index[mask], self.theta_a[mask], self.theta_b[mask],
                          self.source_1[mask], self.outcome_a[mask], self.outcome_b[mask],
                          self.model_id)

    @classmethod
    def concat(cls, batches: Sequence["TrialBatch"]) -> "TrialBatch":
        if not batches:
            raise ValueError("nothing to concatenate")
        models = {b.model_id for b in batches}
        if len(models) != 1:
            raise ValueError("cannot mix models in one batch")
        cols = [np.concatenate([getattr(b, name) for b in batches])
                for name in ("pair_index", "theta_a", "theta_b", "source_1", "outcome_a", "outcome_b")]
        return cls(*cols, model_id=models.pop())

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord]) -> "TrialBatch":
        records = list(records)
        if not records:
            raise ValueError("no records")
        models = {r.model_id for r in records}
        if len(models) != 1:
            raise ValueError("cannot mix models in one batch")
        return cls(
            np.array([r.pair_index for r in records], dtype=np.int64),
            np.array([r.axis_a.theta for r in records]),
            np.array([r.axis_b.theta for r in records]),
            np.array([int(r.source.particle1) for r in records], dtype=np.int8),
            np.array([int(r.outcome_a) for r in records], dtype=np.int8),
            np.array([int(r.outcome_b) for r in records], dtype=np.int8),
            models.pop(),
        )


def as_batch(trials: "TrialBatch | Iterable[TrialRecord]") -> TrialBatch:
    return trials if isinstance(trials, TrialBatch) else TrialBatch.from_records(trials)


# -- source -----------------------------------------------------------------

def source_spins(stream: CounterStream, start: int, count: int) -> np.ndarray:
    """Particle-1 z-spins (+1/-1) for pairs ``start .. start + count - 1``."""
    u = stream.uniform(SOURCE_TAG, start, count)
    return np.where(u < 0.5, 1, -1).astype(np.int8)


def sample_source(rng: "CounterStream | int", pair_index: int = 0) -> SourceRecord:
    """Fair source emitting (UP, DOWN) or (DOWN, UP)."""
    spin = source_spins(as_stream(rng), pair_index, 1)[0]
    return SourceRecord.from_particle1(SpinOutcome(int(spin)))


# -- independent flip -------------------------------------------------------

def independent_flip_outcomes(source_1: np.ndarray, theta_a: float, theta_b: float,
                              u_a: np.ndarray, u_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p_a = transition_probability_array(source_1, theta_a)
    p_b = transition_probability_array(-np.asarray(source_1), theta_b)
    out_a = np.where(u_a < p_a, 1, -1).astype(np.int8)
    out_b = np.where(u_b < p_b, 1, -1).astype(np.int8)
    return out_a, out_b


def independent_flip_sample(source: SourceRecord, a: "Axis | float", b: "Axis | float",
                            rng: "CounterStream | int", pair_index: int = 0
                            ) -> tuple[SpinOutcome, SpinOutcome]:
    """Both stations apply the transition law to their own particle.

    Station draws come from separate stream tags at ``pair_index``.
    """
    stream = as_stream(rng)
    u_a = stream.uniform(STATION_A_TAG, pair_index, 1)[0]
    u_b = stream.uniform(STATION_B_TAG, pair_index, 1)[0]
    p_a = transition_probability(source.particle1, a)
    p_b = transition_probability(source.particle2, b)
    return (SpinOutcome.UP if u_a < p_a else SpinOutcome.DOWN,
            SpinOutcome.UP if u_b < p_b else SpinOutcome.DOWN)


def independent_flip_pp(a: "Axis | float", b: "Axis | float") -> float:
    """Exact ``P(UP, UP)`` of the independent-flip model, averaged over sources."""
    up, down = SpinOutcome.UP, SpinOutcome.DOWN
    return 0.5 * (transition_probability(up, a) * transition_probability(down, b)
                  + transition_probability(down, a) * transition_probability(up, b))


# -- coupled ----------------------------------------------------------------

@dataclass(frozen=True)
class CouplingTable:
    """Per-source conditional joint tables for one setting pair."""

    axis_a: Axis
    axis_b: Axis
    conditional: dict[SpinOutcome, BornTable]

    def joint(self, source: SourceRecord) -> BornTable:
        return self.conditional[source.particle1]

    def marginal_a(self, source: SourceRecord) -> float:
        return self.joint(source).marginal_a()

    def marginal_b(self, source: SourceRecord) -> float:
        return self.joint(source).marginal_b()

    def average(self) -> np.ndarray:
        """Source-averaged joint table (fair source)."""
        return 0.5 * sum(self.joint(s).as_array() for s in SOURCE_RECORDS)

    def check(self) -> None:
        target = singlet_joint(self.axis_a, self.axis_b).as_array()
        if np.max(np.abs(self.average() - target)) > PROB_TOL:
            raise AssertionError("coupling does not average to the singlet table")


def build_coupling(a: "Axis | float", b: "Axis | float") -> CouplingTable:
    """Source-independent coupling with the singlet joint for ``(a, b)``."""
    a, b = as_axis(a), as_axis(b)
    q = singlet_joint(a, b)
    table = CouplingTable(a, b, {s.particle1: q for s in SOURCE_RECORDS})
    table.check()
    return table


def _cumulative_bounds(cells: Sequence[float]) -> np.ndarray:
    """Interior cut points for inverse-CDF sampling of ``cells``.

    Trailing zero cells get a cut point of 1 so they can never be drawn.
    """
    cells = np.asarray(cells, dtype=float)
    cuts = np.cumsum(cells)[:-1]
    tail = np.cumsum(cells[::-1])[::-1][1:]
    cuts[tail == 0.0] = 1.0
    return cuts


# outcome pairs in cell order pp, pm, mp, mm
_CELL_A = np.array([1, 1, -1, -1], dtype=np.int8)
_CELL_B = np.array([1, -1, 1, -1], dtype=np.int8)


def draw_cells(cells: Sequence[float], u: np.ndarray) -> np.ndarray:
    """Cell index per draw; cell k is taken when ``u < cumulative[k]``."""
    return np.searchsorted(_cumulative_bounds(cells), u, side="right")


def coupled_outcomes(source_1: np.ndarray, coupling: CouplingTable,
                     u_joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cells = np.empty(len(u_joint), dtype=np.intp)
    for spin, table in coupling.conditional.items():
        mask = source_1 == int(spin)
        cells[mask] = draw_cells(table.as_tuple(), u_joint[mask])
    return _CELL_A[cells], _CELL_B[cells]


def coupled_sample(source: SourceRecord, coupling: CouplingTable,
                   rng: "CounterStream | int", pair_index: int = 0
                   ) -> tuple[SpinOutcome, SpinOutcome]:
    """Draw the joint outcome from ``coupling`` given the source record."""
    u = as_stream(rng).uniform(JOINT_TAG, pair_index, 1)
    k = draw_cells(coupling.joint(source).as_tuple(), u)[0]
    return SpinOutcome(int(_CELL_A[k])), SpinOutcome(int(_CELL_B[k]))


# -- deterministic replay ---------------------------------------------------

@dataclass(frozen=True)
class DeterministicSetup:
    """Three configured axes and the strategy mixture replayed on them."""

    axes: tuple[Axis, Axis, Axis]
    mixture: StrategyMixture

    def axis_id(self, axis: Axis) -> str:
        for name, ax in zip(AXIS_IDS, self.axes):
            if ax.theta == axis.theta:
                return name
        raise ValueError(f"axis {axis.degrees:g} deg is not one of the configured axes")


def deterministic_outcomes(setup: DeterministicSetup, theta_a: float, theta_b: float,
                           u_strategy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    strategies = enumerate_strategies()
    table = np.array([[int(o) for o in s.outcomes] for s in strategies], dtype=np.int8)
    idx = draw_cells(setup.mixture.vector(), u_strategy)
    x = AXIS_IDS.index(setup.axis_id(Axis(theta_a)))
    y = AXIS_IDS.index(setup.axis_id(Axis(theta_b)))
    chosen = table[idx]
    # source record: particle-1 value on the first configured axis
    return chosen[:, 0].copy(), chosen[:, x].copy(), (-chosen[:, y]).astype(np.int8)


def deterministic_sample(strategy: DeterministicStrategy, x: str, y: str) -> tuple[SpinOutcome, SpinOutcome]:
    return strategy.particle1(x), strategy.particle2(y)


# -- batch generation -------------------------------------------------------

def _generate_chunk(model: ModelId, theta_a: float, theta_b: float, stream: CounterStream,
                    start: int, count: int, setup: DeterministicSetup | None) -> TrialBatch:
    pair_index = np.arange(start, start + count, dtype=np.int64)
    if model is ModelId.DETERMINISTIC:
        if setup is None:
            raise ValueError("the deterministic model needs axes and a strategy mixture")
        u = stream.uniform(STRATEGY_TAG, start, count)
        src, out_a, out_b = deterministic_outcomes(setup, theta_a, theta_b, u)
    else:
        src = source_spins(stream, start, count)
        if model is ModelId.INDEPENDENT_FLIP:
            out_a, out_b = independent_flip_outcomes(
                src, theta_a, theta_b,
                stream.uniform(STATION_A_TAG, start, count),
                stream.uniform(STATION_B_TAG, start, count))
        else:
            out_a, out_b = coupled_outcomes(src, build_coupling(theta_a, theta_b),
                                            stream.uniform(JOINT_TAG, start, count))
    return TrialBatch(pair_index, np.full(count, theta_a), np.full(count, theta_b),
                      src, out_a, out_b, model)


def generate_trials(model: "ModelId | str", a: "Axis | float", b: "Axis | float", n: int,
                    rng: "CounterStream | int", start: int = 0,
                    setup: DeterministicSetup | None = None, workers: int = 1) -> TrialBatch:
    """Generate ``n`` trials with pair indices ``start .. start + n - 1``.

    The result does not depend on ``workers``.
    """
    model = ModelId(model)
    if n < 1:
        raise ValueError("need at least one trial")
    theta_a, theta_b = as_axis(a).theta, as_axis(b).theta
    stream = as_stream(rng)
    bounds = [(s, min(CHUNK_SIZE, start + n - s)) for s in range(start, start + n, CHUNK_SIZE)]

    def run(chunk):
        return _generate_chunk(model, theta_a, theta_b, stream, chunk[0], chunk[1], setup)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(c) for c in bounds]
    return TrialBatch.concat(parts)


# -- Frechet feasibility ----------------------------------------------------

MarginalModel = Callable[[SourceRecord, str, Axis], float]


def cos2_marginals(source: SourceRecord, station: str, axis: Axis) -> float:
    """Source-informative marginals: the transition law on the station's particle."""
    spin = source.particle1 if station == "A" else source.particle2
    return transition_probability(spin, axis)


def uniform_marginals(source: SourceRecord, station: str, axis: Axis) -> float:
    return 0.5


@dataclass(frozen=True)
class FeasibilityReport:
    axis_a: Axis
    axis_b: Axis
    lower_sum: float
    upper_sum: float
    target: float
    feasible: bool
    per_source: tuple[tuple[float, float, float, float], ...] = ()

    def to_dict(self) -> dict:
        return {
            "theta_a_deg": self.axis_a.degrees,
            "theta_b_deg": self.axis_b.degrees,
            "lower_sum": self.lower_sum,
            "upper_sum": self.upper_sum,
            "target": self.target,
            "feasible": self.feasible,
            "per_source": [dict(zip(("p_a", "p_b", "lower", "upper"), row)) for row in self.per_source],
        }


def frechet_bounds(p: float, q: float) -> tuple[float, float]:
    """Range of ``P(X and Y)`` over couplings with ``P(X)=p``, ``P(Y)=q``."""
    return max(0.0, p + q - 1.0), min(p, q)


def frechet_feasibility(a: "Axis | float", b: "Axis | float",
                        marginal_model: MarginalModel = cos2_marginals) -> FeasibilityReport:
    """Can source-conditional marginals be coupled into the singlet ``P(UP, UP)``?

    With a fair binary source the averaged joint is half the sum of the
    per-source joints, so the target compared with the summed bounds is
    twice the singlet ``P(UP, UP)``.
    """
    a, b = as_axis(a), as_axis(b)
    rows = []
    for s in SOURCE_RECORDS:
        p_a = float(marginal_model(s, "A", a))
        p_b = float(marginal_model(s, "B", b))
        for p in (p_a, p_b):
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise ValueError(f"marginal {p!r} outside [0, 1]")
        lo, hi = frechet_bounds(p_a, p_b)
        rows.append((p_a, p_b, lo, hi))
    lower = math.fsum(r[2] for r in rows)
    upper = math.fsum(r[3] for r in rows)
    target = 2.0 * singlet_joint(a, b).p_pp
    feasible = lower - PROB_TOL <= target <= upper + PROB_TOL
    return FeasibilityReport(a, b, lower, upper, target, feasible, tuple(rows))


# -- CSV --------------------------------------------------------------------

def write_trials_csv(batches: Iterable[TrialBatch], fh: TextIO) -> None:
    """Write the header and one row per trial, in batch order."""
    fh.write(",".join(TRIAL_CSV_HEADER) + "\n")
    for batch in batches:
        model = batch.model_id.value
        ta = {t: repr(float(t)) for t in np.unique(batch.theta_a)}
        tb = {t: repr(float(t)) for t in np.unique(batch.theta_b)}
        for lo in range(0, len(batch), CHUNK_SIZE):
            hi = min(lo + CHUNK_SIZE, len(batch))
            rows = zip(batch.pair_index[lo:hi].tolist(), batch.theta_a[lo:hi].tolist(),
                       batch.theta_b[lo:hi].tolist(), batch.source_1[lo:hi].tolist(),
                       batch.outcome_a[lo:hi].tolist(), batch.outcome_b[lo:hi].tolist())
            fh.write("".join(f"{i},{ta[x]},{tb[y]},{s},{-s},{oa},{ob},{model}\n"
                             for i, x, y, s, oa, ob in rows))


def read_trials_csv(fh: TextIO) -> list[TrialBatch]:
    """Inverse of :func:`write_trials_csv`; one batch per run of model and axis pair."""
    header = fh.readline().strip().split(",")
    if tuple(header) != TRIAL_CSV_HEADER:
        raise ValueError(f"unexpected trial CSV header {header}")
    data = np.genfromtxt(io.StringIO(fh.read()), delimiter=",", dtype=None, encoding="utf-8",
                         names=list(TRIAL_CSV_HEADER))
    data = np.atleast_1d(data)
    if data.size == 0:
        return []
    key = np.stack([data["theta_a"], data["theta_b"]], axis=1)
    change = np.flatnonzero(np.any(key[1:] != key[:-1], axis=1)
                            | (data["model_id"][1:] != data["model_id"][:-1])) + 1
    batches = []
    for lo, hi in zip(np.r_[0, change], np.r_[change, len(data)]):
        part = data[lo:hi]
        batches.append(TrialBatch(part["pair_index"].astype(np.int64), part["theta_a"].astype(float),
                                  part["theta_b"].astype(float), part["source_1"].astype(np.int8),
                                  part["outcome_a"].astype(np.int8), part["outcome_b"].astype(np.int8),
                                  ModelId(str(part["model_id"][0]))))
    return batches


def expected_joint(model: "ModelId | str", a: "Axis | float", b: "Axis | float",
                   setup: DeterministicSetup | None = None) -> np.ndarray:
    """Exact ``(pp, pm, mp, mm)`` table a model produces at settings ``(a, b)``."""
    model = ModelId(model)
    a, b = as_axis(a), as_axis(b)
    if model is ModelId.COUPLED:
        return singlet_joint(a, b).as_array()
    if model is ModelId.INDEPENDENT_FLIP:
        table = np.zeros(4)
        for s in SOURCE_RECORDS:
            pa = transition_probability(s.particle1, a)
            pb = transition_probability(s.particle2, b)
            table += 0.5 * np.array([pa * pb, pa * (1 - pb), (1 - pa) * pb, (1 - pa) * (1 - pb)])
        return table
    if setup is None:
        raise ValueError("the deterministic model needs axes and a strategy mixture")
    x, y = setup.axis_id(a), setup.axis_id(b)
    table = np.zeros(4)
    for strategy, w in setup.mixture.items():
        oa, ob = deterministic_sample(strategy, x, y)
        table[(0 if oa > 0 else 2) + (0 if ob > 0 else 1)] += float(w)
    return table
