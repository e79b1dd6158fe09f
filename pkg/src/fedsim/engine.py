"""Discrete-event simulation of buffered federated training.

The server keeps a buffer of client uploads and aggregates whenever the
policy's buffer target is met. Virtual time only advances by popping
events, so a run is a pure function of its config and seed. Local
training can be handed to a thread pool, but results are always consumed
in event order and the metrics log does not depend on the pool size.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import device as dev
from .aggregator import (ClientWeight, fedasync_mix, fedavg_aggregate, fedbuff_aggregate,
                         seafl_aggregate)
from .config import RunConfig
from .data import Dataset, dirichlet_partition, gen_synthetic, load_idx, train_test_split
from .errors import ConfigError, ProtocolError
from .events import EPOCH_COMPLETE, NOTIFY, UPLOAD_ARRIVAL, EventQueue, SimEvent
from .model import (ModelSpec, TrainConfig, init_model, local_train, loss_and_accuracy,
                    train_epochs)
from .param_math import ParamVector

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("round", "virtual_time_s", "policy", "test_loss", "test_accuracy",
                   "buffer_staleness_max", "buffer_staleness_mean", "notifications_sent")
WEIGHT_COLUMNS = ("round", "policy", "client_id", "staleness", "gamma_k", "s_k", "p_raw_k",
                  "p_norm_k")


@dataclass(frozen=True)
class Checkpoint:
    round: int
    virtual_time: float
    test_loss: float
    test_accuracy: float
    staleness_max: int = 0
    staleness_mean: float = 0.0
    notifications: int = 0
    buffer_len: int = 0


@dataclass
class MetricsLog:
    """Evaluation checkpoints plus per-aggregation bookkeeping.

    ``notifications`` on a checkpoint counts notifications sent since the
    previous checkpoint.
    """

    policy: str
    checkpoints: list[Checkpoint] = field(default_factory=list)
    weights: list[tuple[int, list[ClientWeight]]] = field(default_factory=list)
    dispatches: int = 0
    uploads: int = 0
    partial_uploads: int = 0
    deferrals: int = 0
    notifications: int = 0
    max_aggregated_staleness: int = 0
    end_time: float = 0.0
    trace: list[tuple[float, str, int | None]] = field(default_factory=list)

    @property
    def aggregations(self) -> int:
        return max(0, len(self.checkpoints) - 1)

    def rows(self):
        for c in self.checkpoints:
            yield (c.round, repr(c.virtual_time), self.policy, repr(c.test_loss),
                   repr(c.test_accuracy), c.staleness_max, repr(c.staleness_mean),
                   c.notifications)

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(METRICS_COLUMNS)
        writer.writerows(self.rows())
        return buf.getvalue()

    def weights_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(WEIGHT_COLUMNS)
        for rnd, ws in self.weights:
            for w in ws:
                writer.writerow((rnd, self.policy, w.client_id, w.staleness, repr(w.gamma),
                                 repr(w.importance), repr(w.raw), repr(w.normalized)))
        return buf.getvalue()


def build_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.source == "synthetic":
        full = gen_synthetic(d.num_classes, d.dim, d.samples, d.class_sep, cfg.seed)
        return train_test_split(full, d.test_fraction, cfg.seed)
    limit = d.limit or None
    train = load_idx(d.images_path, d.labels_path, limit)
    if d.test_images_path:
        test = load_idx(d.test_images_path, d.test_labels_path, None, train.num_classes)
        return train, test
    return train_test_split(train, d.test_fraction, cfg.seed)


class _Trainer:
    """Produces a client's trained model for a given dispatch.

    Without a pool, training runs lazily when the upload arrives and stops
    at the number of epochs actually completed. With a pool, every epoch is
    computed up front and the matching snapshot is taken at arrival. Both
    paths walk the same ``train_epochs`` sequence, so they agree exactly.
    """

    def __init__(self, spec: ModelSpec, cfg: TrainConfig, workers: int) -> None:
        self.spec = spec
        self.cfg = cfg
        self.pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        self.pending: dict[int, Future | tuple] = {}

    def start(self, key: int, start: ParamVector, partition: Dataset, seed: int) -> None:
        cfg = replace(self.cfg, seed=seed)
        if self.pool is None:
            self.pending[key] = (start, partition, cfg)
        else:
            self.pending[key] = self.pool.submit(
                lambda: list(train_epochs(self.spec, start, partition, cfg)))

    def result(self, key: int, epochs: int) -> ParamVector:
        job = self.pending.pop(key)
        if isinstance(job, Future):
            return job.result()[epochs - 1]
        start, partition, cfg = job
        return local_train(self.spec, start, partition, cfg,
                           interrupt_after_epoch=lambda k: k >= epochs).params

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown(wait=True, cancel_futures=True)


@dataclass
class _Dispatch:
    base_round: int
    base_params: ParamVector
    dispatch_id: int


class Simulation:
    """One simulated training run. Call :meth:`run` once."""

    def __init__(self, cfg: RunConfig, workers: int = 1, record_trace: bool = False) -> None:
        self.cfg = cfg
        self.policy = cfg.aggregator
        self.record_trace = record_trace
        train, self.test = build_datasets(cfg)
        n = cfg.num_clients
        if n > len(train):
            raise ConfigError(f"{n} clients but only {len(train)} training samples")
        self.plan = dirichlet_partition(train, n, cfg.data.concentration, cfg.seed)
        self.spec = ModelSpec(cfg.model.kind, train.dim, cfg.model.hidden_dim, train.num_classes)
        mean_size = len(train) / n
        self.clients = [
            dev.make_client(k, train.subset(self.plan.assignments[k]), cfg.speed, mean_size,
                            cfg.seed)
            for k in range(n)
        ]
        self.global_params = init_model(self.spec, cfg.seed)
        self.select_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5E1EC7]))
        tcfg = TrainConfig(cfg.train.epochs, cfg.train.learning_rate, cfg.train.batch_size)
        self.trainer = _Trainer(self.spec, tcfg, workers)
        self.queue = EventQueue()
        self.round = 0
        self.buffer: list[dev.UpdateRecord] = []
        self.dispatched: dict[int, _Dispatch] = {}
        self.cohort: list[int] = []
        self.notified: set[int] = set()
        self.rounds_joined = [0] * n
        self.next_dispatch_id = 0
        self.stopping = False
        self.draining = False
        self._deferred = False
        self._round_notifications = 0
        self.log = MetricsLog(self.policy.kind)

    # ------------------------------------------------------------------ setup

    def _buffer_target(self) -> int:
        kind = self.policy.kind
        if kind == "fedasync":
            return 1
        if kind == "fedavg":
            return len(self.cohort)
        return self.policy.buffer_size

    def _train_seed(self, cid: int) -> int:
        ss = np.random.SeedSequence([self.cfg.seed, 0x7A1, cid, self.rounds_joined[cid]])
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def _dispatch(self, cids, now: float) -> None:
        for cid in sorted(cids):
            client = self.clients[cid]
            did = self.next_dispatch_id
            self.next_dispatch_id += 1
            for ev in dev.begin_round(client, self.global_params, self.round, now,
                                      self.cfg.train.epochs, did):
                self._push(ev)
            self.dispatched[cid] = _Dispatch(self.round, self.global_params, did)
            self.trainer.start(did, self.global_params, client.partition, self._train_seed(cid))
            self.rounds_joined[cid] += 1
            self.log.dispatches += 1
        self.cohort = sorted(cids)

    def _push(self, ev: SimEvent) -> None:
        self.queue.push(ev)

    def _evaluate(self, now: float, recs: list[dev.UpdateRecord]) -> Checkpoint:
        loss, acc = loss_and_accuracy(self.spec, self.global_params, self.test)
        stal = [self.round - 1 - r.base_round for r in recs]
        cp = Checkpoint(
            round=self.round, virtual_time=now, test_loss=loss, test_accuracy=acc,
            staleness_max=max(stal, default=0),
            staleness_mean=(sum(stal) / len(stal)) if stal else 0.0,
            notifications=self._round_notifications, buffer_len=len(recs),
        )
        self._round_notifications = 0
        self.log.checkpoints.append(cp)
        return cp

    # ------------------------------------------------------------------ server

    def _blocking_clients(self) -> list[int]:
        """Outstanding clients that would exceed the staleness limit after one more round."""
        beta = self.policy.staleness_limit
        return [cid for cid, d in self.dispatched.items() if self.round - d.base_round >= beta]

    def _try_aggregate(self, now: float) -> None:
        if len(self.buffer) < self._buffer_target():
            return
        if self.policy.kind == "seafl" and self.policy.limits_staleness:
            if self._blocking_clients():
                if not self._deferred:
                    self.log.deferrals += 1
                    self._deferred = True
                return
        self._deferred = False
        self._aggregate(now)

    def _aggregate(self, now: float) -> None:
        recs, self.buffer = self.buffer, []
        t, kind, pol = self.round, self.policy.kind, self.policy
        worst = max(t - r.base_round for r in recs)
        if kind == "seafl" and pol.limits_staleness and worst > pol.staleness_limit:
            raise ProtocolError(f"aggregating staleness {worst} above limit {pol.staleness_limit}")
        if kind in ("seafl", "seafl2"):
            new, weights = seafl_aggregate(recs, self.global_params, t, pol.hyper(),
                                           importance_input=pol.importance_input)
            self.log.weights.append((t + 1, weights))
        elif kind == "fedbuff":
            new = fedbuff_aggregate(recs, self.global_params, pol.theta)
        elif kind == "fedasync":
            new = fedasync_mix(self.global_params, recs[0], pol.fedasync_mixing)
        else:
            new = fedavg_aggregate(recs, expected=self.cohort)
        self.global_params = new
        self.round += 1
        self.log.max_aggregated_staleness = max(self.log.max_aggregated_staleness, worst)
        cp = self._evaluate(now, recs)
        log.debug("round %d at t=%.2f: acc=%.4f buffer=%d", self.round, now,
                  cp.test_accuracy, len(recs))
        if self.round >= self.cfg.max_rounds or (
                self.cfg.stop_at_target and cp.test_accuracy >= self.cfg.target_accuracy):
            self.stopping = True
            return
        self._redispatch([r.client_id for r in recs], now)

    def _redispatch(self, reporters: list[int], now: float) -> None:
        if self.cfg.redispatch == "reporters":
            self._dispatch(reporters, now)
            return
        pool = [c for c in range(self.cfg.num_clients) if c not in self.dispatched]
        chosen = self.select_rng.choice(len(pool), size=len(reporters), replace=False)
        self._dispatch([pool[i] for i in chosen], now)

    def _notify_stale(self, now: float) -> None:
        beta = self.policy.staleness_limit
        for cid in sorted(self.dispatched):
            d = self.dispatched[cid]
            if self.round - d.base_round <= beta or d.dispatch_id in self.notified:
                continue
            if self.clients[cid].status != dev.TRAINING:
                continue
            self.notified.add(d.dispatch_id)
            self._push(SimEvent(now + self.cfg.notify_latency, 0, NOTIFY, cid, d.dispatch_id))
            self.log.notifications += 1
            self._round_notifications += 1

    # ------------------------------------------------------------------ events

    def _on_upload(self, ev: SimEvent) -> None:
        client = self.clients[ev.client_id]
        d = self.dispatched.pop(ev.client_id, None)
        if d is None or d.dispatch_id != ev.dispatch_id:
            raise ProtocolError(f"unexpected upload from client {ev.client_id}")
        params = self.trainer.result(d.dispatch_id, client.current_epoch)
        rec = replace(dev.make_update(client, params, ev.time), base_params=d.base_params)
        self.log.uploads += 1
        if rec.epochs_completed < self.cfg.train.epochs:
            self.log.partial_uploads += 1
        if self.draining:
            return
        self.buffer.append(rec)
        self._try_aggregate(ev.time)
        if self.policy.kind == "seafl2" and self.policy.limits_staleness and not self.stopping:
            self._notify_stale(ev.time)

    def _handle(self, ev: SimEvent) -> None:
        if self.record_trace:
            self.log.trace.append((ev.time, ev.kind, ev.client_id))
        client = self.clients[ev.client_id]
        if ev.kind == EPOCH_COMPLETE:
            if client.dispatch_id != ev.dispatch_id:
                raise ProtocolError(f"epoch event for a superseded dispatch of {client.id}")
            for nxt in dev.on_epoch_complete(client, ev.time):
                self._push(nxt)
        elif ev.kind == UPLOAD_ARRIVAL:
            self._on_upload(ev)
        elif ev.kind == NOTIFY:
            if client.dispatch_id == ev.dispatch_id:
                dev.handle_notification(client)
        else:
            raise ProtocolError(f"unknown event kind {ev.kind!r}")

    def run(self) -> MetricsLog:
        try:
            self._evaluate(0.0, [])
            m = self.cfg.effective_concurrency
            first = self.select_rng.choice(self.cfg.num_clients, size=m, replace=False)
            self._dispatch(first.tolist(), 0.0)
            while self.queue:
                if not self.draining and (
                        self.stopping or self.queue.peek_time() > self.cfg.max_virtual_time):
                    if not self.cfg.drain:
                        break
                    self.draining = True
                    self.stopping = True
                ev = self.queue.pop()
                self._handle(ev)
            self.log.end_time = self.queue.now
        finally:
            self.trainer.close()
        return self.log


def run(cfg: RunConfig, workers: int = 1, record_trace: bool = False) -> MetricsLog:
    """Simulate one run and return its metrics."""
    return Simulation(cfg, workers=workers, record_trace=record_trace).run()
