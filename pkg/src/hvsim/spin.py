"""Quantum reference quantities for the two-particle spin experiment.

Everything here is a pure function of its arguments. Angles are polar
angles in radians measured from the z axis; joint tables are ordered
``(pp, pm, mp, mm)`` where the first sign is station A (particle 1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
NORM_TOL = 1e-12


class SpinOutcome(enum.IntEnum):
    """Outcome of a spin measurement, ``UP = +1`` and ``DOWN = -1``."""

    UP = 1
    DOWN = -1

    def __neg__(self) -> "SpinOutcome":
        return SpinOutcome(-int(self))

    @property
    def symbol(self) -> str:
        return "U" if self is SpinOutcome.UP else "D"


@dataclass(frozen=True)
class Axis:
    """Measurement direction given by its polar angle ``theta``."""

    theta: float

    def __post_init__(self) -> None:
        theta = float(self.theta)
        if not math.isfinite(theta):
            raise ValueError(f"axis angle must be finite, got {theta!r}")
        theta = math.fmod(theta, TWO_PI)
        if theta < 0.0:
            theta += TWO_PI
        if theta >= TWO_PI:  # fmod of a value just below 0 can round up
            theta = 0.0
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_degrees(cls, degrees: float) -> "Axis":
        return cls(math.radians(degrees))

    @property
    def degrees(self) -> float:
        return math.degrees(self.theta)


def as_axis(value: "Axis | float") -> Axis:
    return value if isinstance(value, Axis) else Axis(value)


@dataclass(frozen=True)
class BornTable:
    """Joint outcome distribution of one axis-pair context."""

    p_pp: float
    p_pm: float
    p_mp: float
    p_mm: float

    def __post_init__(self) -> None:
        cells = self.as_tuple()
        for p in cells:
            if not (-NORM_TOL <= p <= 1.0 + NORM_TOL):
                raise ValueError(f"probability out of range: {cells}")
        if abs(math.fsum(cells) - 1.0) > NORM_TOL:
            raise ValueError(f"table does not sum to one: {cells}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.p_pp, self.p_pm, self.p_mp, self.p_mm)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())

    def marginal_a(self) -> float:
        """Probability that station A reads UP."""
        return self.p_pp + self.p_pm

    def marginal_b(self) -> float:
        """Probability that station B reads UP."""
        return self.p_pp + self.p_mp

    def cell(self, outcome_a: SpinOutcome, outcome_b: SpinOutcome) -> float:
        key = ("p" if outcome_a > 0 else "m") + ("p" if outcome_b > 0 else "m")
        return getattr(self, "p_" + key)


@dataclass(frozen=True)
class EprState:
    """Two-particle spin state in the z product basis.

    ``vartheta`` is the station-2 angle parameter the amplitudes were
    built from (zero for the z singlet).
    """

    amp_pp: complex
    amp_pm: complex
    amp_mp: complex
    amp_mm: complex
    vartheta: float = 0.0

    def __post_init__(self) -> None:
        norm = sum(abs(a) ** 2 for a in self.amplitudes())
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized: |psi|^2 = {norm!r}")

    def amplitudes(self) -> tuple[complex, complex, complex, complex]:
        return (self.amp_pp, self.amp_pm, self.amp_mp, self.amp_mm)

    def as_array(self) -> np.ndarray:
        return np.array(self.amplitudes(), dtype=complex)


def singlet_state() -> EprState:
    """The z singlet ``(|+-> - |-+>)/sqrt(2)``."""
    r = 1.0 / math.sqrt(2.0)
    return EprState(0j, complex(r), complex(-r), 0j, vartheta=0.0)


def make_epr_state(vartheta: float) -> EprState:
    """State whose particle-2 factors carry the angle ``vartheta``.

    Amplitudes are ``(-sin, cos, -cos, -sin)(vartheta/2) / sqrt(2)``;
    ``vartheta = 0`` gives :func:`singlet_state`.
    """
    vartheta = float(vartheta)
    if not math.isfinite(vartheta):
        raise ValueError(f"vartheta must be finite, got {vartheta!r}")
    r = 1.0 / math.sqrt(2.0)
    s = math.sin(vartheta / 2.0)
    c = math.cos(vartheta / 2.0)
    return EprState(
        complex(-s * r), complex(c * r), complex(-c * r), complex(-s * r),
        vartheta=vartheta,
    )


def born_table(state: EprState) -> BornTable:
    return BornTable(*(abs(a) ** 2 for a in state.amplitudes()))


def singlet_joint(a: "Axis | float", b: "Axis | float") -> BornTable:
    """Singlet joint distribution for polar settings ``a`` and ``b``."""
    half = (as_axis(a).theta - as_axis(b).theta) / 2.0
    same = 0.5 * math.sin(half) ** 2
    opposite = 0.5 * math.cos(half) ** 2
    return BornTable(same, opposite, opposite, same)


def singlet_pp(theta_a, theta_b):
    """Vectorized ``P(A=UP, B=UP)`` of the singlet, angles in radians."""
    return 0.5 * np.sin((np.asarray(theta_a) - np.asarray(theta_b)) / 2.0) ** 2


def transition_probability(prepared: SpinOutcome, axis: "Axis | float") -> float:
    """Probability of reading UP along ``axis`` for a z-prepared spin.

    Uses the spin-1/2 law ``cos^2(theta/2)`` for a spin prepared UP and
    ``sin^2(theta/2)`` for one prepared DOWN.
    """
    theta = as_axis(axis).theta
    if theta == math.pi:  # anti-aligned magnet flips with certainty
        up = 0.0
    else:
        up = math.cos(theta / 2.0) ** 2
    if SpinOutcome(prepared) is SpinOutcome.UP:
        return up
    return 1.0 - up if theta == math.pi else math.sin(theta / 2.0) ** 2


def transition_probability_array(prepared, theta) -> np.ndarray:
    """Vectorized :func:`transition_probability`; ``prepared`` holds +1/-1."""
    theta = np.asarray(theta, dtype=float)
    prepared = np.asarray(prepared)
    flip = theta == math.pi
    up = np.where(flip, 0.0, np.cos(theta / 2.0) ** 2)
    down = np.where(flip, 1.0, np.sin(theta / 2.0) ** 2)
    return np.where(prepared > 0, up, down)


def ensemble_weight(norm_sq_integral: float, s_i: int, s_total: int) -> float:
    """Weight of a sub-ensemble holding ``s_i`` of ``s_total`` trajectories.

    ``norm_sq_integral`` is the integral of ``|psi_i|^2`` over space.
    """
    if not (norm_sq_integral > 0.0) or not math.isfinite(norm_sq_integral):
        raise ValueError(f"norm integral must be positive, got {norm_sq_integral!r}")
    if s_total <= 0:
        raise ValueError(f"total trajectory count must be positive, got {s_total!r}")
    if not 0 <= s_i <= s_total:
        raise ValueError(f"count {s_i!r} outside [0, {s_total}]")
    return (1.0 / norm_sq_integral) * (s_i / s_total)


@dataclass(frozen=True)
class PathSample:
    """Sampled path for the phase integral."""

    points: np.ndarray
    times: np.ndarray
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        times = np.asarray(self.times, dtype=float)
        if points.shape[0] < 2:
            raise ValueError("a path needs at least two points")
        if times.shape != (points.shape[0],):
            raise ValueError("points and times must have equal length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (self.mass > 0 and self.hbar > 0):
            raise ValueError("mass and hbar must be positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "times", times)

    @classmethod
    def straight(cls, start: Sequence[float], end: Sequence[float], t0: float,
                 t1: float, steps: int, mass: float = 1.0, hbar: float = 1.0
                 ) -> "PathSample":
        """Uniformly sampled straight segment traversed at constant speed."""
        s = np.linspace(0.0, 1.0, steps + 1)
        start = np.atleast_1d(np.asarray(start, dtype=float))
        end = np.atleast_1d(np.asarray(end, dtype=float))
        points = start[None, :] + s[:, None] * (end - start)[None, :]
        return cls(points, t0 + s * (t1 - t0), mass, hbar)


def phase_integral(path: PathSample,
                   velocity_field: Callable[[np.ndarray, float], Sequence[float]],
                   beta_term: Callable[[float], float]) -> float:
    """Phase accumulated along ``path``, midpoint rule in space and time.

    Returns ``(m/hbar) * sum v(mid_k).dr_k - (m/hbar) * sum beta(mid_t_k) dt_k``.
    ``beta_term`` is taken as the real value of the ``i*beta`` integrand.
    """
    points, times = path.points, path.times
    mid_points = 0.5 * (points[1:] + points[:-1])
    mid_times = 0.5 * (times[1:] + times[:-1])
    dr = np.diff(points, axis=0)
    dt = np.diff(times)

    line = np.empty(len(dt))
    beta = np.empty(len(dt))
    for k in range(len(dt)):
        v = np.atleast_1d(np.asarray(velocity_field(mid_points[k], mid_times[k]), dtype=float))
        line[k] = float(np.dot(v, dr[k]))
        beta[k] = float(beta_term(mid_times[k])) * dt[k]
    if not (np.all(np.isfinite(line)) and np.all(np.isfinite(beta))):
        raise ValueError("velocity field or beta term is not finite along the path")
    return (path.mass / path.hbar) * (math.fsum(line) - math.fsum(beta))
