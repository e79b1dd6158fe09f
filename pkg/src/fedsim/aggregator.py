"""Server-side aggregation rules.

SEAFL weighting combines, per buffered update k,

    staleness factor  gamma_k = alpha * beta / ((t - t_k) + beta)
    importance        s_k     = mu * (cos(delta_k, w_global) + 1) / 2
    raw weight        p_k     = (n_k / n_buffer) * (gamma_k + s_k)

normalizes the raw weights to sum to one, averages the buffered models
with them, and blends the average into the global model with ``theta``.
FedBuff uses the same buffer-then-mix path with uniform weights, FedAsync
mixes every single arrival, and FedAvg is the sample-weighted mean.
"""

from __future__ import annotations

import math
from collections.abc import Collection
from dataclasses import dataclass
from typing import Sequence

from .device import UpdateRecord
from .errors import ConfigError, DegenerateWeightsError, EmptyBufferError, ProtocolError
from .param_math import ParamVector, cosine_similarity, mix, weighted_sum

POLICIES = ("seafl", "seafl2", "fedbuff", "fedasync", "fedavg")
IMPORTANCE_INPUTS = ("delta", "raw_model")


@dataclass(frozen=True)
class SeaflHyper:
    alpha: float = 3.0
    mu: float = 1.0
    beta: float = 10
    theta: float = 0.8
    buffer_size: int = 10

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.mu < 0 or not self.alpha + self.mu > 0:
            raise ConfigError("alpha and mu must be non-negative with alpha + mu > 0")
        if not self.beta >= 1:
            raise ConfigError("staleness limit must be >= 1")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0, 1]")
        if self.buffer_size < 1:
            raise ConfigError("buffer_size must be >= 1")


@dataclass(frozen=True)
class AggregationPolicy:
    """A policy tag with every hyperparameter any policy may read."""

    kind: str = "seafl"
    buffer_size: int = 10
    staleness_limit: float = 10
    alpha: float = 3.0
    mu: float = 1.0
    theta: float = 0.8
    fedasync_mixing: float = 0.5
    importance_input: str = "delta"

    def __post_init__(self) -> None:
        if self.kind not in POLICIES:
            raise ConfigError(f"unknown policy {self.kind!r}; choose from {POLICIES}")
        if self.importance_input not in IMPORTANCE_INPUTS:
            raise ConfigError(f"importance_input must be one of {IMPORTANCE_INPUTS}")
        if not 0.0 < self.fedasync_mixing <= 1.0:
            raise ConfigError("fedasync_mixing must lie in (0, 1]")
        self.hyper()  # validates the shared fields

    def hyper(self) -> SeaflHyper:
        return SeaflHyper(self.alpha, self.mu, self.staleness_limit, self.theta,
                          self.buffer_size)

    @property
    def limits_staleness(self) -> bool:
        return self.kind in ("seafl", "seafl2") and math.isfinite(self.staleness_limit)


@dataclass(frozen=True)
class ClientWeight:
    client_id: int
    staleness: int
    gamma: float
    importance: float
    raw: float
    normalized: float


WeightBreakdown = list[ClientWeight]


def staleness_factor(t: int, t_k: int, alpha: float, beta: float) -> float:
    if t < t_k:
        raise ProtocolError(f"current round {t} precedes base round {t_k}")
    if math.isinf(beta):
        return float(alpha)
    return alpha * beta / ((t - t_k) + beta)


def importance(update_delta: ParamVector, global_params: ParamVector, mu: float) -> float:
    return mu * (cosine_similarity(update_delta, global_params) + 1.0) / 2.0


def _importance_input(rec: UpdateRecord, mode: str) -> ParamVector:
    if mode == "raw_model":
        return rec.params
    if rec.base_params is None:
        raise ProtocolError(f"update from client {rec.client_id} lacks its dispatch base model")
    return rec.params - rec.base_params


def compute_weights(buffer: Sequence[UpdateRecord], global_params: ParamVector, t: int,
                    h: SeaflHyper, total_samples: int | None = None,
                    importance_input: str = "delta") -> WeightBreakdown:
    """Per-update SEAFL weights for the buffered set at round ``t``.

    ``total_samples`` defaults to the sample count summed over ``buffer``.
    The buffer may hold more than ``h.buffer_size`` records when the
    staleness gate made the server wait for extra uploads.
    """
    if not buffer:
        raise EmptyBufferError("no buffered updates to weight")
    if total_samples is None:
        total_samples = sum(r.sample_count for r in buffer)
    if total_samples <= 0:
        raise ConfigError("total_samples must be positive")
    rows = []
    for rec in buffer:
        gamma = staleness_factor(t, rec.base_round, h.alpha, h.beta)
        s = importance(_importance_input(rec, importance_input), global_params, h.mu)
        raw = rec.sample_count / total_samples * (gamma + s)
        rows.append((rec, gamma, s, raw))
    total = math.fsum(r[3] for r in rows)
    if total <= 0.0:
        raise DegenerateWeightsError("all raw aggregation weights are zero")
    return [ClientWeight(rec.client_id, t - rec.base_round, gamma, s, raw, raw / total)
            for rec, gamma, s, raw in rows]


def seafl_aggregate(buffer: Sequence[UpdateRecord], global_params: ParamVector, t: int,
                    h: SeaflHyper, total_samples: int | None = None,
                    importance_input: str = "delta",
                    ) -> tuple[ParamVector, WeightBreakdown]:
    """Weighted buffer average mixed into the global model.

    Returns the new global model and the weights that produced it.
    """
    weights = compute_weights(buffer, global_params, t, h, total_samples, importance_input)
    fresh = weighted_sum([(w.normalized, rec.params) for w, rec in zip(weights, buffer)])
    return mix(global_params, fresh, h.theta), weights


def fedbuff_aggregate(buffer: Sequence[UpdateRecord], global_params: ParamVector,
                      theta: float) -> ParamVector:
    if not buffer:
        raise EmptyBufferError("no buffered updates to aggregate")
    share = 1.0 / len(buffer)
    fresh = weighted_sum([(share, rec.params) for rec in buffer])
    return mix(global_params, fresh, theta)


def fedasync_mix(global_params: ParamVector, update: UpdateRecord, mixing: float) -> ParamVector:
    if not 0.0 < mixing <= 1.0:
        raise ConfigError("FedAsync mixing must lie in (0, 1]")
    return mix(global_params, update.params, mixing)


def fedavg_aggregate(updates: Sequence[UpdateRecord],
                     expected: Collection[int] | None = None) -> ParamVector:
    """Sample-weighted mean of a complete synchronous cohort.

    When ``expected`` client ids are given, every one of them must have
    reported exactly once.
    """
    if not updates:
        raise EmptyBufferError("no updates to average")
    if expected is not None:
        got = sorted(r.client_id for r in updates)
        if got != sorted(expected):
            missing = sorted(set(expected) - set(got))
            raise ProtocolError(f"synchronous barrier not met; missing clients {missing}")
    total = sum(r.sample_count for r in updates)
    return weighted_sum([(r.sample_count / total, r.params) for r in updates])
