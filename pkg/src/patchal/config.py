"""Experiment configuration: methods, label regimes, and JSON round-trip."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .query import NOISE_NONE, NOISE_POWER, NOISE_SOFTRANK, NoiseSpec
from .simlab import LearnerConfig, SyntheticSpec
from .volumes import Shape3

METHOD_RANDOM = "Random"
METHOD_RANDOM_33FG = "Random33FG"
METHOD_RANDOM_66FG = "Random66FG"
METHOD_PE = "PE"
METHOD_BALD = "BALD"
METHOD_POWER_PE = "PowerPE"
METHOD_POWER_BALD = "PowerBALD"
METHOD_SOFTRANK_BALD = "SoftrankBALD"

METHODS = (
    METHOD_RANDOM,
    METHOD_RANDOM_33FG,
    METHOD_RANDOM_66FG,
    METHOD_PE,
    METHOD_BALD,
    METHOD_POWER_PE,
    METHOD_POWER_BALD,
    METHOD_SOFTRANK_BALD,
)

#: Which uncertainty map feeds each score-driven method.
UNCERTAINTY_BY_METHOD = {
    METHOD_PE: "PE",
    METHOD_POWER_PE: "PE",
    METHOD_BALD: "BALD",
    METHOD_POWER_BALD: "BALD",
    METHOD_SOFTRANK_BALD: "BALD",
}

_NOISE_KIND_BY_METHOD = {
    METHOD_POWER_PE: NOISE_POWER,
    METHOD_POWER_BALD: NOISE_POWER,
    METHOD_SOFTRANK_BALD: NOISE_SOFTRANK,
}

FG_SHARE_BY_METHOD = {
    METHOD_RANDOM_33FG: 0.33,
    METHOD_RANDOM_66FG: 0.66,
}

#: Default inverse noise scale for the noisy methods.
DEFAULT_BETA = 1.0

DEFAULT_SEEDS = (0, 1, 2, 3)


@dataclass(frozen=True)
class LabelRegime:
    """Total annotation budget plus how it is spent across loops.

    ``query_size`` defaults to an even split over the starting allocation
    and the query loops (total // (num_loops + 1)); whatever the defaults,
    ``starting_budget + num_loops * query_size == total_budget_patches``
    must hold, with a non-empty starting budget.
    """

    total_budget_patches: int
    query_size: int | None = None
    num_loops: int = 5

    def __post_init__(self):
        if self.total_budget_patches < 1:
            raise ValueError("total_budget_patches must be >= 1")
        if self.num_loops < 1:
            raise ValueError("num_loops must be >= 1")
        qs = self.query_size
        if qs is None:
            qs = self.total_budget_patches // (self.num_loops + 1)
        object.__setattr__(self, "query_size", int(qs))
        if self.query_size < 1:
            raise ValueError("query_size must be >= 1")
        if self.starting_budget < 1:
            raise ValueError(
                "starting budget (total - num_loops * query_size) must be >= 1; "
                f"got {self.starting_budget}"
            )

    @property
    def starting_budget(self) -> int:
        return self.total_budget_patches - self.num_loops * self.query_size

    def to_dict(self) -> dict:
        return {
            "total_budget_patches": self.total_budget_patches,
            "query_size": self.query_size,
            "num_loops": self.num_loops,
        }

    @property
    def regime_id(self) -> str:
        return (
            f"B{self.total_budget_patches}"
            f"-Q{self.query_size}-L{self.num_loops}"
        )


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | SyntheticSpec
    method: str
    label_regime: LabelRegime
    patch_size: Shape3
    overlap: float = 0.0
    noise: NoiseSpec | None = None
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    output_dir: str = "runs"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "patch_size", tuple(int(v) for v in self.patch_size))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @property
    def effective_noise(self) -> NoiseSpec:
        """The noise the method actually applies; the method id fixes the
        kind, the configured spec only supplies beta."""
        kind = _NOISE_KIND_BY_METHOD.get(self.method)
        if kind is None:
            return NoiseSpec(NOISE_NONE)
        beta = self.noise.beta if self.noise is not None else DEFAULT_BETA
        return NoiseSpec(kind, beta)

    @property
    def uncertainty_kind(self) -> str | None:
        return UNCERTAINTY_BY_METHOD.get(self.method)

    @property
    def fg_share(self) -> float | None:
        return FG_SHARE_BY_METHOD.get(self.method)

    @property
    def dataset_name(self) -> str:
        if isinstance(self.dataset, str):
            return Path(self.dataset).name or "dataset"
        s = self.dataset
        d, h, w = s.shape
        return f"synthetic-c{s.num_classes}-{d}x{h}x{w}-n{s.num_images}-s{s.seed}"

    def to_dict(self) -> dict:
        noise = self.noise
        return {
            "dataset": (
                self.dataset if isinstance(self.dataset, str) else self.dataset.to_dict()
            ),
            "method": self.method,
            "label_regime": self.label_regime.to_dict(),
            "patch_size": list(self.patch_size),
            "overlap": self.overlap,
            "noise": (
                None
                if noise is None
                else {"kind": noise.kind, "beta": "inf" if math.isinf(noise.beta) else noise.beta}
            ),
            "learner": self.learner.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        dataset = d["dataset"]
        if isinstance(dataset, dict):
            dataset = SyntheticSpec.from_dict(dataset)
        regime = d["label_regime"]
        noise = d.get("noise")
        if noise is not None:
            beta = noise.get("beta", DEFAULT_BETA)
            beta = math.inf if beta in ("inf", None) else float(beta)
            noise = NoiseSpec(noise.get("kind", NOISE_NONE), beta)
        return cls(
            dataset=dataset,
            method=d["method"],
            label_regime=LabelRegime(
                total_budget_patches=int(regime["total_budget_patches"]),
                query_size=regime.get("query_size"),
                num_loops=int(regime.get("num_loops", 5)),
            ),
            patch_size=tuple(d["patch_size"]),
            overlap=float(d.get("overlap", 0.0)),
            noise=noise,
            learner=LearnerConfig.from_dict(d.get("learner", {})),
            seeds=tuple(d.get("seeds", DEFAULT_SEEDS)),
            output_dir=d.get("output_dir", "runs"),
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
