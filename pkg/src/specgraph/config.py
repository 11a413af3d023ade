"""Experiment configuration with defaults matching the published setup."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional

from specgraph.gp import KERNELS, GPConfig

MODELS = ("ft", "wt")


@dataclass
class ExperimentConfig:
    model: str = "ft"
    num_eval_points: int = 30  # M
    num_filters: int = 10  # K
    num_bandpass: int = 3  # L
    kernel: str = "verbatim"
    lowpass_init: tuple = (4.0, 6.0)
    bandpass_init: tuple = (0.1, 5.0)
    folds: int = 10
    seed: int = 0
    max_iter: int = 1000
    memory: int = 10
    rel_tol: float = 1e-6
    grad_tol: float = 1e-5
    gh_points: int = 20
    mc_samples: int = 64
    dataset: Optional[str] = None
    num_graphs: int = 200
    data_dir: Optional[str] = None

    def __post_init__(self):
        self.lowpass_init = tuple(float(v) for v in self.lowpass_init)
        self.bandpass_init = tuple(float(v) for v in self.bandpass_init)
        self.validate()

    def validate(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.num_eval_points < 2:
            raise ValueError("num_eval_points must be >= 2")
        if self.num_filters < 1 or self.num_bandpass < 0:
            raise ValueError("need num_filters >= 1 and num_bandpass >= 0")
        for name in ("lowpass_init", "bandpass_init"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < low <= high")
        if self.folds < 3:
            raise ValueError("folds must be >= 3")
        if self.max_iter < 1 or self.memory < 1:
            raise ValueError("max_iter and memory must be positive")

    def gp_config(self, seed: Optional[int] = None) -> GPConfig:
        return GPConfig(kernel=self.kernel, max_iter=self.max_iter, memory=self.memory,
                        rel_tol=self.rel_tol, grad_tol=self.grad_tol, gh_points=self.gh_points,
                        mc_samples=self.mc_samples, seed=self.seed if seed is None else seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lowpass_init"] = list(self.lowpass_init)
        d["bandpass_init"] = list(self.bandpass_init)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
