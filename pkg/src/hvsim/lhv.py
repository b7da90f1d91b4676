"""Single-probability-space hidden-variable models on three axes.

A deterministic strategy fixes particle 1's outcome on each of the axes
``a``, ``b``, ``c``; particle 2 always reads the opposite on the same
axis. Mixtures of the eight strategies are every model with one
probability measure over the hidden variable. Probabilities are exact
(``fractions.Fraction``) whenever the mixture weights are.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Iterable, Mapping, Sequence

import numpy as np

from .spin import Axis, SpinOutcome, singlet_joint

AXIS_IDS = ("a", "b", "c")
CYCLIC_PAIRS = (("a", "b"), ("b", "c"), ("c", "a"))
MIXTURE_TOL = 1e-12

UP, DOWN = SpinOutcome.UP, SpinOutcome.DOWN


def _check_axis_id(x: str) -> str:
    if x not in AXIS_IDS:
        raise ValueError(f"unknown axis id {x!r}; expected one of {AXIS_IDS}")
    return x


@dataclass(frozen=True, order=True)
class DeterministicStrategy:
    """Particle-1 outcomes on axes ``(a, b, c)``."""

    outcomes: tuple[SpinOutcome, SpinOutcome, SpinOutcome]

    def __post_init__(self) -> None:
        if len(self.outcomes) != len(AXIS_IDS):
            raise ValueError("a strategy assigns exactly three outcomes")
        object.__setattr__(self, "outcomes", tuple(SpinOutcome(o) for o in self.outcomes))

    @classmethod
    def from_label(cls, label: str) -> "DeterministicStrategy":
        """Parse ``"UDU"``-style labels."""
        table = {"U": UP, "D": DOWN}
        return cls(tuple(table[ch] for ch in label.upper()))

    @property
    def label(self) -> str:
        return "".join(o.symbol for o in self.outcomes)

    @property
    def assignment(self) -> dict[str, SpinOutcome]:
        return dict(zip(AXIS_IDS, self.outcomes))

    def particle1(self, x: str) -> SpinOutcome:
        return self.outcomes[AXIS_IDS.index(_check_axis_id(x))]

    def particle2(self, x: str) -> SpinOutcome:
        return -self.particle1(x)

    def sort_key(self) -> tuple[int, ...]:
        # UP sorts before DOWN
        return tuple(0 if o is UP else 1 for o in self.outcomes)

    def __str__(self) -> str:
        return self.label


def enumerate_strategies() -> list[DeterministicStrategy]:
    """All eight strategies, lexicographic over (a, b, c) with UP < DOWN."""
    return [DeterministicStrategy(combo) for combo in itertools.product((UP, DOWN), repeat=3)]


class StrategyMixture:
    """Probability weights over deterministic strategies."""

    def __init__(self, weights: Mapping[DeterministicStrategy, Real]):
        cleaned = {}
        for strategy, w in weights.items():
            if not isinstance(strategy, DeterministicStrategy):
                strategy = DeterministicStrategy.from_label(str(strategy))
            if w < 0:
                raise ValueError(f"negative weight {w!r} for {strategy}")
            if w:
                cleaned[strategy] = cleaned.get(strategy, 0) + w
        total = sum(cleaned.values())
        if isinstance(total, Fraction) or isinstance(total, int):
            if total != 1:
                raise ValueError(f"weights sum to {total}, not 1")
        elif abs(total - 1.0) > MIXTURE_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        self.weights: dict[DeterministicStrategy, Real] = dict(
            sorted(cleaned.items(), key=lambda kv: kv[0].sort_key()))

    @classmethod
    def uniform(cls) -> "StrategyMixture":
        return cls({s: Fraction(1, 8) for s in enumerate_strategies()})

    @classmethod
    def point(cls, strategy: "DeterministicStrategy | str") -> "StrategyMixture":
        if isinstance(strategy, str):
            strategy = DeterministicStrategy.from_label(strategy)
        return cls({strategy: Fraction(1)})

    @classmethod
    def from_vector(cls, weights: Sequence[float]) -> "StrategyMixture":
        """Weights listed in canonical strategy order."""
        if len(weights) != 8:
            raise ValueError("expected eight weights")
        return cls(dict(zip(enumerate_strategies(), weights)))

    def items(self):
        return self.weights.items()

    def vector(self) -> np.ndarray:
        return np.array([float(self.weights.get(s, 0)) for s in enumerate_strategies()])

    def __repr__(self) -> str:
        body = ", ".join(f"{s.label}: {w}" for s, w in self.items())
        return f"StrategyMixture({{{body}}})"


@dataclass(frozen=True, order=True)
class Event:
    """Single-station event ``{station = outcome, axis}``."""

    station: str
    outcome: SpinOutcome
    axis: str

    def __post_init__(self) -> None:
        if self.station not in ("A", "B"):
            raise ValueError(f"station must be 'A' or 'B', got {self.station!r}")
        _check_axis_id(self.axis)
        object.__setattr__(self, "outcome", SpinOutcome(self.outcome))

    def holds(self, strategy: DeterministicStrategy) -> bool:
        if self.station == "A":
            return strategy.particle1(self.axis) is self.outcome
        return strategy.particle2(self.axis) is self.outcome

    def __str__(self) -> str:
        arrow = "UP" if self.outcome is UP else "DOWN"
        return f"{{{self.station}={arrow},{self.axis}}}"


JointEvent = tuple[Event, ...]


def joint_event(*events: Event) -> JointEvent:
    return tuple(events)


def event_probability(mixture: StrategyMixture, events: Iterable[Event]) -> Real:
    """Probability of the intersection of ``events`` under ``mixture``."""
    events = tuple(events)
    return sum((w for s, w in mixture.items() if all(e.holds(s) for e in events)), 0)


@dataclass(frozen=True)
class EventSubstitutionRule:
    """Replaces ``{A=DOWN, x}`` with the equivalent ``{B=UP, x}``."""

    axis: str

    @property
    def from_event(self) -> Event:
        return Event("A", DOWN, self.axis)

    @property
    def to_event(self) -> Event:
        return Event("B", UP, self.axis)

    def matches(self, event: Event) -> bool:
        return event == self.from_event

    def apply(self, event: Event) -> Event:
        if not self.matches(event):
            raise ValueError(f"rule {self.from_event} -> {self.to_event} does not apply to {event}")
        return self.to_event


def substitute_events(events: Iterable[Event],
                      targets: Iterable[Event] | None = None) -> JointEvent:
    """Swap station-A DOWN events for station-B UP events on the same axis.

    With ``targets=None`` every ``{A=DOWN, x}`` factor is substituted and
    anything else passes through. Explicit ``targets`` must each be of
    that form and present in ``events``.
    """
    events = tuple(events)
    if targets is None:
        chosen = {e for e in events if e.station == "A" and e.outcome is DOWN}
    else:
        chosen = set(targets)
        for t in chosen:
            if not (t.station == "A" and t.outcome is DOWN):
                raise ValueError(f"cannot substitute {t}: only {{A=DOWN, x}} events are equivalent to {{B=UP, x}}")
            if t not in events:
                raise ValueError(f"{t} is not a factor of the joint event")
    return tuple(EventSubstitutionRule(e.axis).apply(e) if e in chosen else e for e in events)


def same_particle_joint(mixture: StrategyMixture, x: str, y: str) -> Real:
    """``P(particle 1 UP on x and DOWN on y)``."""
    _check_axis_id(x)
    _check_axis_id(y)
    if x == y:
        raise ValueError("the two axes must differ")
    return event_probability(mixture, (Event("A", UP, x), Event("A", DOWN, y)))


def two_station_joint(mixture: StrategyMixture, x: str, y: str) -> Real:
    """``P(A=UP on x and B=UP on y)``."""
    return event_probability(mixture, (Event("A", UP, _check_axis_id(x)), Event("B", UP, _check_axis_id(y))))


def bell_sum_same_particle(mixture: StrategyMixture) -> Real:
    return sum((same_particle_joint(mixture, x, y) for x, y in CYCLIC_PAIRS), 0)


def bell_sum_two_station(mixture: StrategyMixture) -> Real:
    return sum((two_station_joint(mixture, x, y) for x, y in CYCLIC_PAIRS), 0)


def quantum_bell_sum(a: "Axis | float", b: "Axis | float", c: "Axis | float") -> float:
    """Cyclic sum of singlet ``P(UP, UP)`` over ``(a,b), (b,c), (c,a)``."""
    return math.fsum(singlet_joint(x, y).p_pp for x, y in ((a, b), (b, c), (c, a)))


def _jsonable(value: Real):
    if isinstance(value, Fraction):
        return int(value) if value.denominator == 1 else float(value)
    return value


@dataclass
class BellBoundReport:
    max_sum: Real
    witness: DeterministicStrategy
    per_strategy_sums: dict[str, Real]
    exclusive: bool
    bound_holds: bool
    note: str = field(default=(
        "Every mixture's Bell sum is a convex combination of the extremal "
        "sums listed here, so the maximum over strategies bounds all mixtures."))

    def to_dict(self) -> dict:
        return {
            "max_sum": _jsonable(self.max_sum),
            "witness": self.witness.label,
            "per_strategy_sums": {k: _jsonable(v) for k, v in self.per_strategy_sums.items()},
            "events_mutually_exclusive": self.exclusive,
            "bound_holds": self.bound_holds,
            "note": self.note,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def verify_bell_bound() -> BellBoundReport:
    """Evaluate the Bell sum on all eight extremal strategies, exactly.

    Also checks per strategy that at most one of the three same-particle
    events occurs, and that the sum agrees with its two-station form
    obtained by event substitution.
    """
    sums: dict[str, Fraction] = {}
    exclusive = True
    for s in enumerate_strategies():
        point = StrategyMixture.point(s)
        terms = [same_particle_joint(point, x, y) for x, y in CYCLIC_PAIRS]
        exclusive &= sum(terms) <= 1
        total = bell_sum_same_particle(point)
        if total != bell_sum_two_station(point):
            raise AssertionError(f"event substitution changed the Bell sum for {s}")
        sums[s.label] = Fraction(total)
    best = max(sums.values())
    witness = next(s for s in enumerate_strategies() if sums[s.label] == best)
    return BellBoundReport(best, witness, sums, exclusive, best <= 1)


def random_mixture(rng: np.random.Generator) -> StrategyMixture:
    """Dirichlet(1,...,1) mixture, normalized in floating point."""
    w = rng.dirichlet(np.ones(8))
    return StrategyMixture.from_vector(list(w / math.fsum(w)))
