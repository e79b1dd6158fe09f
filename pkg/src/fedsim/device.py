"""Client-side state machine driven by the event engine.

A dispatched client trains epoch by epoch. Each epoch lasts its compute
time plus an idle delay drawn from the client's speed model. Only the next
epoch boundary is ever scheduled, so a staleness notification received
mid-epoch can stop the chain at that boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, ProtocolError
from .events import EPOCH_COMPLETE, UPLOAD_ARRIVAL, SimEvent
from .param_math import ParamVector

log = logging.getLogger(__name__)

IDLE, TRAINING, NOTIFIED = "idle", "training", "notified"
SPEED_KINDS = ("zipf", "pareto", "constant")


@dataclass(frozen=True)
class SpeedModel:
    """Idle-delay distribution plus per-epoch compute cost.

    With ``per_epoch`` false a device draws its idle delay once and keeps
    it, giving persistent stragglers; otherwise a fresh delay is drawn
    after every epoch.
    """

    kind: str = "zipf"
    zipf_s: float = 1.7
    zipf_max_delay: float = 60.0
    pareto_shape: float = 1.5
    pareto_scale: float = 5.0
    constant_delay: float = 0.0
    base_epoch_time: float = 1.0
    per_epoch: bool = False
    link_latency: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in SPEED_KINDS:
            raise ConfigError(f"unknown speed model {self.kind!r}")
        if self.kind == "zipf" and not self.zipf_s > 1.0:
            raise ConfigError("zipf_s must exceed 1")
        if self.kind == "pareto" and not (self.pareto_shape > 0 and self.pareto_scale >= 0):
            raise ConfigError("pareto_shape must be positive and pareto_scale non-negative")
        if min(self.zipf_max_delay, self.constant_delay, self.base_epoch_time,
               self.link_latency) < 0:
            raise ConfigError("delays and epoch times must be non-negative")


def sample_idle_delay(speed: SpeedModel, rng: np.random.Generator) -> float:
    """Draw one idle period in virtual seconds."""
    if speed.kind == "constant":
        return float(speed.constant_delay)
    if speed.kind == "zipf":
        # rank r seconds, clamped to the maximum idle length
        return float(min(rng.zipf(speed.zipf_s), speed.zipf_max_delay))
    # Lomax: scale * (U^(-1/shape) - 1)
    return float(speed.pareto_scale * rng.pareto(speed.pareto_shape))


@dataclass(frozen=True)
class UpdateRecord:
    client_id: int
    params: ParamVector
    base_round: int
    sample_count: int
    epochs_completed: int
    arrival_time: float
    # filled in by the server from its own dispatch table, never by the client
    base_params: ParamVector | None = None


@dataclass(eq=False)
class ClientState:
    id: int
    partition: Dataset
    speed: SpeedModel
    epoch_time: float
    rng: np.random.Generator
    base_round: int = 0
    status: str = IDLE
    current_epoch: int = 0
    target_epochs: int = 0
    dispatch_id: int = -1
    dispatch_time: float = 0.0
    start_params: ParamVector | None = field(default=None, repr=False)
    fixed_delay: float | None = None

    @property
    def sample_count(self) -> int:
        return len(self.partition)


def make_client(cid: int, partition: Dataset, speed: SpeedModel, mean_size: float,
                seed: int) -> ClientState:
    """Build a client with its own RNG stream keyed on ``(seed, cid)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5BEED, cid]))
    client = ClientState(
        id=cid, partition=partition, speed=speed,
        epoch_time=speed.base_epoch_time * len(partition) / mean_size, rng=rng,
    )
    if not speed.per_epoch:
        client.fixed_delay = sample_idle_delay(speed, rng)
    return client


def _epoch_duration(client: ClientState) -> float:
    idle = client.fixed_delay
    if idle is None:
        idle = sample_idle_delay(client.speed, client.rng)
    return client.epoch_time + idle


def begin_round(client: ClientState, global_params: ParamVector, round_: int, now: float,
                epochs: int, dispatch_id: int) -> list[SimEvent]:
    """Hand ``global_params`` to an idle client; returns its first epoch event."""
    if client.status != IDLE:
        raise ProtocolError(f"client {client.id} is {client.status}, cannot start a round")
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    client.status = TRAINING
    client.base_round = round_
    client.current_epoch = 0
    client.target_epochs = epochs
    client.dispatch_id = dispatch_id
    client.dispatch_time = now
    client.start_params = global_params
    return [SimEvent(now + _epoch_duration(client), 0, EPOCH_COMPLETE, client.id, dispatch_id)]


def handle_notification(client: ClientState) -> bool:
    """Ask a training client to upload after its current epoch.

    Returns True when the notification changed the client's state.
    """
    if client.status == TRAINING:
        client.status = NOTIFIED
        return True
    if client.status == IDLE:
        log.debug("client %d: notification ignored, upload already in flight", client.id)
    return False


def on_epoch_complete(client: ClientState, now: float) -> list[SimEvent]:
    """Advance past one epoch boundary; schedule the next epoch or the upload."""
    if client.status == IDLE:
        raise ProtocolError(f"epoch event for idle client {client.id}")
    client.current_epoch += 1
    if client.current_epoch >= client.target_epochs or client.status == NOTIFIED:
        client.status = IDLE
        return [SimEvent(now + client.speed.link_latency, 0, UPLOAD_ARRIVAL, client.id,
                         client.dispatch_id)]
    return [SimEvent(now + _epoch_duration(client), 0, EPOCH_COMPLETE, client.id,
                     client.dispatch_id)]


def make_update(client: ClientState, params: ParamVector, arrival_time: float) -> UpdateRecord:
    return UpdateRecord(
        client_id=client.id, params=params, base_round=client.base_round,
        sample_count=client.sample_count, epochs_completed=client.current_epoch,
        arrival_time=arrival_time,
    )
