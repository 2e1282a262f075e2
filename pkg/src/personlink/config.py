"""Run configuration shared by every pipeline command.

One RunConfig describes a full run: encoder choice, marker strings, window
size, clustering and decision thresholds, ablation switches, and the
single seed all randomness flows from. It serializes to JSON alongside
every output so a run can be reproduced byte-identically with the hash
encoder.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .corpus import DEFAULT_MARKER_CLOSE, DEFAULT_MARKER_OPEN
from .encode import DEFAULT_HASH_DIM, EXTERNAL_BRIDGE, HASH_STUB
from .errors import ConfigError

DEFAULT_CLUSTER_THRESHOLD = 0.15
DEFAULT_MARGIN = 0.01
DEFAULT_K = 16
DEFAULT_WINDOW_TOKENS = 256


@dataclass
class RunConfig:
    encoder: str = HASH_STUB
    bridge_endpoint: str | None = None
    dim: int = DEFAULT_HASH_DIM
    marker_open: str = DEFAULT_MARKER_OPEN
    marker_close: str = DEFAULT_MARKER_CLOSE
    window_tokens: int = DEFAULT_WINDOW_TOKENS
    cluster_threshold: float = DEFAULT_CLUSTER_THRESHOLD
    no_match_threshold: float | None = None
    margin: float = DEFAULT_MARGIN
    k: int = DEFAULT_K
    use_coref: bool = True
    use_qrank: bool = True
    use_birth_filter: bool = True
    renormalize_prototypes: bool = True
    date_window_days: int = 1
    positive_cap: int = 50
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.encoder not in (HASH_STUB, EXTERNAL_BRIDGE):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.encoder == EXTERNAL_BRIDGE and not self.bridge_endpoint:
            raise ConfigError("bridge encoder selected but no endpoint configured")
        if self.dim < 8:
            raise ConfigError(f"dim {self.dim} < 8")
        if not self.marker_open or not self.marker_close:
            raise ConfigError("marker strings must be nonempty")
        if self.window_tokens < 1:
            raise ConfigError("window_tokens must be positive")
        if not 0.0 <= self.cluster_threshold <= 2.0:
            raise ConfigError(
                f"cluster_threshold {self.cluster_threshold} outside [0, 2]"
            )
        if self.no_match_threshold is not None and not (
            0.0 < self.no_match_threshold < 1.0
        ):
            raise ConfigError(
                f"no_match_threshold {self.no_match_threshold} outside (0, 1)"
            )
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.margin > 0 and self.k < 2:
            raise ConfigError("k must be >= 2 when the margin rule is on")
        if self.date_window_days < 1:
            raise ConfigError("date_window_days must be >= 1")
        if self.positive_cap < 1:
            raise ConfigError("positive_cap must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_json(self, extra: dict | None = None) -> str:
        """Stable JSON rendering; extra keys (e.g. input paths, threshold
        provenance) are recorded under "run"."""
        payload = dataclasses.asdict(self)
        if extra:
            payload["run"] = extra
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}")
        if not isinstance(payload, dict):
            raise ConfigError("config must be a JSON object")
        payload.pop("run", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**payload)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())
