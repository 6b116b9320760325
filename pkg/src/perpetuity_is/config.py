"""JSON run configuration with defaults for the Weibull perpetuity study."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Union


class ConfigError(ValueError):
    pass


def _default_model():
    return {"variant": "M1",
            "log_a": {"family": "weibull", "shape": 0.5, "scale": 2.0, "shift": 1.5}}


@dataclass
class RunConfig:
    model: dict = field(default_factory=_default_model)
    x_log10: List[float] = field(default_factory=lambda: [8.0, 16.0, 32.0, 64.0])
    M: List[int] = field(default_factory=lambda: [4, 16, 64, 256])
    rg: Optional[dict] = field(default_factory=lambda: {"law": "geometric", "p": 0.5})
    reps: int = 200_000
    seed: int = 2024
    astar: float = -10.0
    delta: float = 0.5
    lyapunov_p: float = 2.0
    gamma1: Optional[float] = 0.5
    gamma2: Union[str, float] = "auto"
    gamma2_margin: float = 0.05
    threads: int = 1
    out: Optional[str] = None
    rel_tol: float = 1e-10
    max_steps: int = 10**8
    # oracle settings
    cmc_reps: int = 10**6
    cmc_horizon: int = 10_000
    oracle_M: int = 1024
    oracle_max_rel_halfwidth: float = 0.05

    def validate(self) -> "RunConfig":
        if not self.x_log10:
            raise ConfigError("x_log10 must list at least one value")
        if any(not math.isfinite(float(x)) for x in self.x_log10):
            raise ConfigError("x_log10 values must be finite")
        if any(int(m) < 1 for m in self.M):
            raise ConfigError("M values must be at least 1")
        if int(self.reps) < 2:
            raise ConfigError("reps must be at least 2")
        if self.astar > 0:
            raise ConfigError("astar must be nonpositive")
        if not (0 < self.delta < 1):
            raise ConfigError("delta must lie in (0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if isinstance(self.gamma2, str) and self.gamma2 != "auto":
            raise ConfigError("gamma2 must be a number or 'auto'")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None
        cfg.x_log10 = [float(x) for x in cfg.x_log10]
        cfg.M = [int(m) for m in cfg.M]
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


PRESETS = {
    "table1": dict(x_log10=[8.0, 16.0, 32.0, 64.0], M=[4, 16, 64, 256],
                   rg={"law": "geometric", "p": 0.5}),
    "figure1": dict(x_log10=[8.0, 16.0, 32.0, 64.0], M=[2, 4, 8, 16, 32, 64, 128, 256],
                    rg=None),
}
