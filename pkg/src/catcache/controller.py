"""Load-driven adaptation of cache policies.

Each downstream model reports its latency percentile ``L_p`` and queue
depth ``Q``. The controller smooths those over a time window, turns them
into a load factor

    lambda = min(1, (L_p / L_target) * w_L + (Q / Q_target) * w_Q)

and only moves the applied value when it differs from the raw one by at
least ``hysteresis_step``. Categories bound to a model read that model's
applied lambda when computing their effective threshold and TTL.
"""

from __future__ import annotations

import logging
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .errors import UsageError, ValidationError
from .policy import PolicyRegistry

logger = logging.getLogger(__name__)

_STEP_TOL = 1e-12


@dataclass(frozen=True)
class LoadSignal:
    model_id: str
    latency_p: float  # ms
    queue_depth: float
    observed_at: int  # ms

    @classmethod
    def from_dict(cls, data: dict) -> "LoadSignal":
        try:
            return cls(str(data["model_id"]), float(data["latency_p"]),
                       float(data["queue_depth"]), int(data["observed_at"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad load signal: {exc}") from None


@dataclass(frozen=True)
class ControllerConfig:
    l_target: float = 1000.0  # ms
    q_target: int = 100
    w_l: float = 0.5
    w_q: float = 0.5
    averaging_window: float = 300.0  # s
    hysteresis_step: float = 0.1
    fp_rate_limit: float = 0.05
    fp_delta_shrink: float = 0.5

    def __post_init__(self):
        if self.l_target <= 0:
            raise ValidationError("l_target_nonpositive")
        if self.q_target <= 0:
            raise ValidationError("q_target_nonpositive")
        if self.w_l < 0 or self.w_q < 0 or abs(self.w_l + self.w_q - 1.0) > 1e-9:
            raise ValidationError("weights_must_sum_to_one", f"{self.w_l} + {self.w_q}")
        if self.averaging_window < 0:
            raise ValidationError("averaging_window_negative")
        if self.hysteresis_step <= 0:
            raise ValidationError("hysteresis_step_nonpositive")
        if not 0.0 <= self.fp_rate_limit <= 1.0:
            raise ValidationError("fp_rate_limit_out_of_range")
        if not 0.0 < self.fp_delta_shrink < 1.0:
            raise ValidationError("fp_delta_shrink_out_of_range")

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerConfig":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError("unknown_field", str(exc)) from None


def compute_load_factor(latency_p: float, queue_depth: float, cfg: ControllerConfig) -> float:
    """Load factor in [0, 1]; negative or NaN inputs count as zero load."""
    lp = latency_p if latency_p > 0 else 0.0
    q = queue_depth if queue_depth > 0 else 0.0
    raw = (lp / cfg.l_target) * cfg.w_l + (q / cfg.q_target) * cfg.w_q
    if math.isnan(raw):
        return 0.0
    return min(1.0, raw)


@dataclass
class ModelLoadState:
    model_id: str
    raw_lambda: float = 0.0
    applied_lambda: float = 0.0
    history: deque = field(default_factory=deque)  # (t_ms, L_p, Q)

    def window_mean(self, now: int, window_ms: float) -> tuple[float, float]:
        """Time-weighted mean of (L_p, Q) over ``[now - window, now]``.

        A sample holds backward: the one observed at ``t_i`` covers
        ``(t_{i-1}, t_i]``, and the oldest retained sample covers back to the
        window start.
        """
        start = now - window_ms
        lw = qw = total = 0.0
        prev = start
        for t, lp, q in self.history:
            w = t - max(prev, start)
            prev = t
            if w <= 0:
                continue
            lw += w * lp
            qw += w * q
            total += w
        if total <= 0:  # zero-length window or all samples at one instant
            n = len(self.history)
            return (sum(h[1] for h in self.history) / n, sum(h[2] for h in self.history) / n)
        return lw / total, qw / total


class AdaptiveController:
    """Per-model smoothed, hysteresis-gated load factors.

    Args:
        config: default controller configuration.
        registry: policy registry updated by false-positive feedback.
        model_configs: optional per-model overrides of ``config``.
    """

    def __init__(self, config: ControllerConfig = ControllerConfig(),
                 registry: Optional[PolicyRegistry] = None,
                 model_configs: Optional[dict] = None):
        self.config = config
        self.registry = registry
        self.model_configs = dict(model_configs or {})
        self.warnings = 0
        self._states: dict[str, ModelLoadState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def config_for(self, model_id: str) -> ControllerConfig:
        return self.model_configs.get(model_id, self.config)

    def state(self, model_id: str) -> Optional[ModelLoadState]:
        return self._states.get(model_id)

    def models(self) -> list[str]:
        return sorted(self._states)

    def _state_and_lock(self, model_id: str):
        with self._guard:
            st = self._states.get(model_id)
            if st is None:
                st = self._states[model_id] = ModelLoadState(model_id)
                self._locks[model_id] = threading.Lock()
            return st, self._locks[model_id]

    def ingest_signal(self, signal: LoadSignal, cfg: Optional[ControllerConfig] = None) -> float:
        """Fold one signal into its model's window; returns the applied lambda."""
        cfg = cfg or self.config_for(signal.model_id)
        st, lock = self._state_and_lock(signal.model_id)
        with lock:
            if st.history and signal.observed_at < st.history[-1][0]:
                self.warnings += 1
                logger.warning("discarding out-of-order load signal for %s", signal.model_id)
                return st.applied_lambda
            window_ms = cfg.averaging_window * 1000.0
            st.history.append((signal.observed_at, signal.latency_p, signal.queue_depth))
            while len(st.history) > 1 and st.history[0][0] <= signal.observed_at - window_ms:
                st.history.popleft()
            lp, q = st.window_mean(signal.observed_at, window_ms)
            raw = compute_load_factor(lp, q, cfg)
            st.raw_lambda = raw
            if abs(raw - st.applied_lambda) >= cfg.hysteresis_step - _STEP_TOL:
                st.applied_lambda = raw
            return st.applied_lambda

    def current_lambda(self, model_id: str) -> float:
        st = self._states.get(model_id)
        return st.applied_lambda if st is not None else 0.0

    def record_fp_feedback(self, model_id: str, category: str, observed_fp_rate: float) -> float:
        """Shrink the category's ``delta_max`` when its false-positive rate is too high.

        Returns the (possibly unchanged) ``delta_max``.
        """
        if self.registry is None or not self.registry.is_registered(category):
            raise UsageError(f"unknown category {category!r}")
        if not 0.0 <= observed_fp_rate <= 1.0:
            raise UsageError("observed_fp_rate must lie in [0, 1]")
        cfg = self.config_for(model_id)
        current = self.registry.get_config(category)
        if observed_fp_rate <= cfg.fp_rate_limit:
            return current.delta_max
        new_delta = max(0.0, current.delta_max * cfg.fp_delta_shrink)
        self.registry.update(category, delta_max=new_delta)
        return new_delta
