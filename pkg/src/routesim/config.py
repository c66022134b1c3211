"""Run configuration: one JSON file covering scenario, agent, calibration,
provider, and baseline settings plus the root seed."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import BaselineParams
from .calibration import CalibrationConfig
from .env import Scenario, default_scenario
from .gateway import ProviderConfig, RetryPolicy


@dataclass
class RunConfig:
    scenario: Scenario = field(default_factory=default_scenario)
    t_s: int = 4
    t_l: int = 24
    calibration: CalibrationConfig = CalibrationConfig()
    provider: ProviderConfig = ProviderConfig(seed=0)
    baselines: BaselineParams = BaselineParams()
    seed: int = 0

    @staticmethod
    def from_json(data: dict) -> "RunConfig":
        seed = int(data.get("seed", 0))
        scenario = (Scenario.from_json(data["scenario"])
                    if data.get("scenario") else default_scenario())
        agent = data.get("agent", {})
        calibration_data = data.get("calibration", {})
        calibration = CalibrationConfig(
            t_w=int(calibration_data.get("t_w", 8)),
            t_m=int(calibration_data.get("t_m", 80)),
            j_candidates=int(calibration_data.get("J", 3)),
            loss=calibration_data.get("loss", "zero_one"),
            seed=seed,
            stride=int(calibration_data.get("stride", 1)),
        )
        provider_data = data.get("provider", {})
        retry_data = provider_data.get("retry", {})
        provider = ProviderConfig(
            backend=provider_data.get("backend", "scripted"),
            endpoint_url=provider_data.get("endpoint_url"),
            api_key_env=provider_data.get("api_key_env"),
            model_name=provider_data.get("model_name", "gpt-4o"),
            temperature=float(provider_data.get("temperature", 0.0)),
            max_tokens=int(provider_data.get("max_tokens", 512)),
            rate_limit_per_minute=int(provider_data.get("rate_limit_per_minute", 60)),
            retry=RetryPolicy(max_attempts=int(retry_data.get("max_attempts", 4)),
                              backoff_seconds=float(retry_data.get("backoff_seconds", 0.5))),
            cache_dir=provider_data.get("cache_dir"),
            seed=provider_data.get("seed", seed),
        )
        baselines_data = data.get("baselines", {})
        baselines = BaselineParams(
            alpha=float(baselines_data.get("alpha", 0.2)),
            surprise_threshold=float(baselines_data.get("surprise_threshold", 5.0)),
            habit_probability=float(baselines_data.get("habit_probability", 0.9)),
            logit_scale=float(baselines_data.get("logit_scale", 0.1)),
        )
        return RunConfig(scenario=scenario, t_s=int(agent.get("t_s", 4)),
                         t_l=int(agent.get("t_l", 24)), calibration=calibration,
                         provider=provider, baselines=baselines, seed=seed)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario.to_json(),
            "agent": {"t_s": self.t_s, "t_l": self.t_l},
            "calibration": {"t_w": self.calibration.t_w, "t_m": self.calibration.t_m,
                            "J": self.calibration.j_candidates,
                            "loss": self.calibration.loss,
                            "stride": self.calibration.stride},
            "provider": {"backend": self.provider.backend,
                         "endpoint_url": self.provider.endpoint_url,
                         "api_key_env": self.provider.api_key_env,
                         "model_name": self.provider.model_name,
                         "temperature": self.provider.temperature,
                         "max_tokens": self.provider.max_tokens,
                         "rate_limit_per_minute": self.provider.rate_limit_per_minute,
                         "retry": {"max_attempts": self.provider.retry.max_attempts,
                                   "backoff_seconds": self.provider.retry.backoff_seconds},
                         "cache_dir": self.provider.cache_dir,
                         "seed": self.provider.seed},
            "baselines": {"alpha": self.baselines.alpha,
                          "surprise_threshold": self.baselines.surprise_threshold,
                          "habit_probability": self.baselines.habit_probability,
                          "logit_scale": self.baselines.logit_scale},
            "seed": self.seed,
        }

    @staticmethod
    def load(path: str | Path) -> "RunConfig":
        return RunConfig.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
