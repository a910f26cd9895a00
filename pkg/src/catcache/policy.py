"""Per-category cache policies and their load-dependent effective values."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import UsageError, ValidationError

DAY = 86_400


@dataclass(frozen=True)
class CategoryConfig:
    """Policy for one query category. Durations are integer seconds.

    ``delta_max``/``beta_max`` bound how far the threshold may relax and the
    TTL may stretch under full load; ``sensitivity`` is the expected hit-rate
    gain per unit of threshold relaxation. ``model_id`` names the downstream
    model whose load drives this category (defaults to the category id).
    """

    category_id: str
    base_threshold: float
    base_ttl: int
    quota_fraction: float
    priority: float = 1.0
    allow_caching: bool = True
    delta_max: float = 0.0
    beta_max: float = 1.0
    tau_min: Optional[float] = None
    ttl_max: Optional[int] = None
    sensitivity: float = 0.0
    model_id: Optional[str] = None

    def __post_init__(self):
        # unset bounds default to the tightest values the invariants allow
        if self.tau_min is None:
            object.__setattr__(self, "tau_min", self.base_threshold - self.delta_max)
        if self.ttl_max is None:
            object.__setattr__(self, "ttl_max", math.ceil(self.base_ttl * self.beta_max))
        self.validate()

    @property
    def model(self) -> str:
        return self.model_id or self.category_id

    def validate(self) -> None:
        if not self.category_id:
            raise ValidationError("category_id_empty")
        if not 0.0 < self.base_threshold <= 1.0:
            raise ValidationError("base_threshold_out_of_range", f"{self.base_threshold}")
        if self.base_ttl <= 0:
            raise ValidationError("base_ttl_nonpositive", f"{self.base_ttl}")
        if not 0.0 <= self.quota_fraction <= 1.0:
            raise ValidationError("quota_fraction_out_of_range", f"{self.quota_fraction}")
        if self.priority <= 0:
            raise ValidationError("priority_nonpositive", f"{self.priority}")
        if self.delta_max < 0:
            raise ValidationError("delta_max_negative", f"{self.delta_max}")
        if self.beta_max < 1:
            raise ValidationError("beta_max_below_one", f"{self.beta_max}")
        if not 0.0 < self.tau_min <= 1.0:
            raise ValidationError("tau_min_out_of_range", f"{self.tau_min}")
        if self.sensitivity < 0:
            raise ValidationError("sensitivity_negative", f"{self.sensitivity}")
        if self.base_threshold - self.delta_max < self.tau_min - 1e-12:
            raise ValidationError(
                "relaxation_below_floor",
                f"base_threshold - delta_max = {self.base_threshold - self.delta_max:g} "
                f"< tau_min = {self.tau_min:g}",
            )
        if self.base_ttl * self.beta_max > self.ttl_max:
            raise ValidationError(
                "ttl_extension_above_cap",
                f"base_ttl * beta_max = {self.base_ttl * self.beta_max:g} > ttl_max = {self.ttl_max}",
            )

    @classmethod
    def from_dict(cls, data: dict) -> "CategoryConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError("unknown_field", ", ".join(sorted(unknown)))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError("missing_field", str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_CONFIG = CategoryConfig(
    category_id="__default__",
    base_threshold=0.85,
    base_ttl=3600,
    quota_fraction=0.05,
    priority=1.0,
    allow_caching=True,
    delta_max=0.0,
    beta_max=1.0,
)


@dataclass(frozen=True)
class EffectivePolicy:
    threshold: float
    ttl: float  # seconds
    load_factor_used: float


def effective_policy_for(cfg: CategoryConfig, load: float) -> EffectivePolicy:
    """Threshold and TTL for ``cfg`` at load factor ``load`` in [0, 1].

    The threshold relaxes linearly from the base toward ``base - delta_max``
    and the TTL stretches linearly toward ``base_ttl * beta_max``; both are
    clamped to the configured safety bounds.
    """
    if not 0.0 <= load <= 1.0:
        raise UsageError(f"load factor must lie in [0, 1], got {load}")
    threshold = float(max(cfg.tau_min, cfg.base_threshold - load * cfg.delta_max))
    ttl = float(min(cfg.ttl_max, cfg.base_ttl * (1.0 + load * (cfg.beta_max - 1.0))))
    return EffectivePolicy(threshold=threshold, ttl=ttl, load_factor_used=load)


class PolicyRegistry:
    """Registry of category configs with atomic snapshot swaps.

    Readers grab the current dict reference and never see a half-applied
    update; writers build a new dict and swap it in under a lock.
    """

    def __init__(self, configs: Iterable[CategoryConfig] = (), default: CategoryConfig = DEFAULT_CONFIG):
        self._write_lock = threading.Lock()
        self._snapshot: dict[str, CategoryConfig] = {}
        self.default = default
        self.replace_all(configs)

    @staticmethod
    def _check_quota(configs: dict[str, CategoryConfig]) -> None:
        total = math.fsum(c.quota_fraction for c in configs.values())
        if total > 1.0 + 1e-9:
            raise ValidationError("quota_sum_exceeded", f"quota fractions sum to {total:g} > 1")

    def register(self, config: CategoryConfig) -> None:
        config.validate()
        with self._write_lock:
            new = dict(self._snapshot)
            new[config.category_id] = config
            self._check_quota(new)
            self._snapshot = new

    def replace_all(self, configs: Iterable[CategoryConfig]) -> None:
        """Swap in a whole new set of configs (config reload)."""
        new: dict[str, CategoryConfig] = {}
        for cfg in configs:
            cfg.validate()
            if cfg.category_id in new:
                raise ValidationError("duplicate_category", cfg.category_id)
            new[cfg.category_id] = cfg
        self._check_quota(new)
        with self._write_lock:
            self._snapshot = new

    def get_config(self, category: str) -> CategoryConfig:
        return self._snapshot.get(category, self.default)

    def is_registered(self, category: str) -> bool:
        return category in self._snapshot

    def categories(self) -> list[str]:
        return sorted(self._snapshot)

    def snapshot(self) -> dict[str, CategoryConfig]:
        return self._snapshot

    def effective_policy(self, category: str, load: float) -> EffectivePolicy:
        return effective_policy_for(self.get_config(category), load)

    def update(self, category: str, **changes) -> CategoryConfig:
        """Replace fields of a registered config (validated, atomic)."""
        with self._write_lock:
            if category not in self._snapshot:
                raise UsageError(f"unknown category {category!r}")
            cfg = replace(self._snapshot[category], **changes)
            new = dict(self._snapshot)
            new[category] = cfg
            self._check_quota(new)
            self._snapshot = new
        return cfg


def load_configs(path) -> list[CategoryConfig]:
    """Read a JSON array of category configs."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("malformed_json", str(exc)) from None
    if not isinstance(data, list):
        raise ValidationError("not_an_array", "category file must hold a JSON array")
    return [CategoryConfig.from_dict(item) for item in data]
