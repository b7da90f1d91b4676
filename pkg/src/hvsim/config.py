"""Experiment configuration (JSON, angles in degrees)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .samplers import ModelId
from .streams import SEED_MAX

TEST_NAMES = ("lhv_bound", "bell", "no_signaling", "passive_locality",
              "anticorrelation", "frechet", "ensembles")


class ConfigError(ValueError):
    pass


@dataclass
class EnsembleSettings:
    pairs: int = 10_000
    steps: int = 50
    dt: float = 0.01
    diffusion_coeff: float = 0.5
    drift: list[float] = field(default_factory=lambda: [0.0])

    def validate(self) -> None:
        if self.pairs < 1 or self.steps < 1:
            raise ConfigError("ensemble pairs and steps must be positive")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("ensemble dt must be positive")
        if not (self.diffusion_coeff >= 0 and math.isfinite(self.diffusion_coeff)):
            raise ConfigError("ensemble diffusion_coeff must be nonnegative")
        if not self.drift or not all(math.isfinite(v) for v in self.drift):
            raise ConfigError("ensemble drift must be a nonempty list of finite numbers")


@dataclass
class ExperimentConfig:
    model_id: ModelId
    axes: list[list[float]]
    trials_per_pair: int
    seed: int
    output_path: str
    tests: list[str]
    threshold: float = 4.0
    mixture: list[float] | None = None
    workers: int = 1
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)

    def __post_init__(self) -> None:
        try:
            self.model_id = ModelId(self.model_id)
        except ValueError:
            raise ConfigError(f"unknown model_id {self.model_id!r}; "
                              f"expected one of {[m.value for m in ModelId]}") from None
        if isinstance(self.ensemble, dict):
            try:
                self.ensemble = EnsembleSettings(**self.ensemble)
            except TypeError as exc:
                raise ConfigError(f"bad ensemble settings: {exc}") from None
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.trials_per_pair, int) or self.trials_per_pair < 1:
            raise ConfigError("trials_per_pair must be an integer >= 1")
        if not isinstance(self.seed, int) or not 0 <= self.seed <= SEED_MAX:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not self.axes:
            raise ConfigError("axes must list at least one pair or triple")
        for group in self.axes:
            if len(group) not in (2, 3):
                raise ConfigError(f"axis group {group!r} must be a pair or a triple")
            if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in group):
                raise ConfigError(f"axis group {group!r} has non-finite angles")
        if not self.tests:
            raise ConfigError("tests must be nonempty")
        unknown = [t for t in self.tests if t not in TEST_NAMES]
        if unknown:
            raise ConfigError(f"unknown tests {unknown}; expected names from {list(TEST_NAMES)}")
        if not (self.threshold > 0 and math.isfinite(self.threshold)):
            raise ConfigError("threshold must be positive")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be an integer >= 1")
        if self.mixture is not None:
            if len(self.mixture) != 8 or any(w < 0 for w in self.mixture):
                raise ConfigError("mixture must list eight nonnegative weights")
            if abs(math.fsum(self.mixture) - 1.0) > 1e-12:
                raise ConfigError("mixture weights must sum to 1")
        if self.model_id is ModelId.DETERMINISTIC:
            triples = [g for g in self.axes if len(g) == 3]
            if len(triples) != 1:
                raise ConfigError("the deterministic model needs exactly one axis triple")
            allowed = set(triples[0])
            if any(v not in allowed for g in self.axes for v in g):
                raise ConfigError("deterministic pairs must use the axes of the triple")
        self.ensemble.validate()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        missing = {"model_id", "axes", "trials_per_pair", "seed", "output_path", "tests"} - set(data)
        if missing:
            raise ConfigError(f"missing config keys {sorted(missing)}")
        data = dict(data)
        data["axes"] = [list(g) for g in data["axes"]]
        data["tests"] = list(data["tests"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model_id"] = self.model_id.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: "str | Path") -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def axis_pairs(self) -> list[tuple[float, float]]:
        """Setting pairs in degrees; a triple expands to (a,b), (b,c), (c,a)."""
        pairs = []
        for g in self.axes:
            if len(g) == 3:
                a, b, c = g
                pairs += [(a, b), (b, c), (c, a)]
            else:
                pairs.append((g[0], g[1]))
        return pairs


def bundled_configs() -> list[str]:
    root = resources.files("hvsim") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config(name: str) -> Path:
    """A filesystem path, or the name of a bundled config."""
    path = Path(name)
    if path.exists():
        return path
    candidate = name if name.endswith(".json") else name + ".json"
    if candidate in bundled_configs():
        return Path(str(resources.files("hvsim") / "configs" / candidate))
    raise ConfigError(f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")
