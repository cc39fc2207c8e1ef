"""Federated round orchestration.

One round samples clients, trains each participant locally (with the FedProx
or SCAFFOLD correction when selected), privatizes deltas, aggregates per
cluster, applies the server update, and optionally re-clusters clients.

All weight-like state (models, deltas, control variates, Adam moments) is a
flat float64 array laid out as :func:`fedsim.nn.flatten_weights` produces.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields

import numpy as np

from . import nn
from .datasets import Dataset, Partition
from .errors import ConfigError, UnknownClientError
from .kmeans import kmeans
from .metrics import RoundReport, comms_cost
from .rng import Streams

ALGORITHMS = ("fedavg", "fedprox", "fedadam", "scaffold")
METRICS = ("l2", "cosine")


def canonical_algorithm(name: str) -> str:
    """Accepts the display names too (``FedAvg``, ``SCAFFOLD``, ...)."""
    key = str(name).strip().lower()
    if key not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}", "algorithm")
    return key


@dataclass(frozen=True)
class FLConfig:
    algorithm: str = "fedavg"
    n_clients: int = 5
    client_fraction: float = 1.0
    dropout_prob: float = 0.0
    local_epochs: int = 1
    batch_size: int = 10
    client_lr: float = 0.03
    mu: float = 0.0
    server_lr: float | None = None  # None: 0.1 under FedAdam, 1.0 otherwise
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3
    dp_clip: float = math.inf
    dp_sigma: float = 0.0
    cluster_k: int = 1
    cluster_metric: str = "l2"
    cluster_warmup: int = 10
    cluster_period: int = 5
    federated_enabled: bool = True

    @property
    def effective_server_lr(self) -> float:
        if self.server_lr is not None:
            return float(self.server_lr)
        return 0.1 if self.algorithm == "fedadam" else 1.0

    def validate(self) -> FLConfig:
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(f"{key}: {msg}", key)

        need(self.algorithm in ALGORITHMS, "algorithm", f"must be one of {ALGORITHMS}")
        need(_is_int(self.n_clients) and self.n_clients >= 1, "n_clients", "must be a positive integer")
        need(0 < self.client_fraction <= 1, "client_fraction", "must lie in (0, 1]")
        need(0 <= self.dropout_prob <= 1, "dropout_prob", "must lie in [0, 1]")
        need(_is_int(self.local_epochs) and self.local_epochs >= 1, "local_epochs", "must be a positive integer")
        need(_is_int(self.batch_size) and self.batch_size >= 1, "batch_size", "must be a positive integer")
        need(_finite(self.client_lr) and self.client_lr > 0, "client_lr", "must be positive")
        need(_finite(self.mu) and self.mu >= 0, "mu", "must be nonnegative")
        need(self.mu == 0 or self.algorithm == "fedprox", "mu", "only FedProx uses mu; set it to 0")
        need(self.server_lr is None or (_finite(self.server_lr) and self.server_lr > 0),
             "server_lr", "must be positive")
        need(0 <= self.beta1 < 1, "beta1", "must lie in [0, 1)")
        need(0 <= self.beta2 < 1, "beta2", "must lie in [0, 1)")
        need(_finite(self.tau) and self.tau > 0, "tau", "must be positive")
        need(self.dp_clip > 0 and not math.isnan(self.dp_clip), "dp_clip", "must be positive or inf")
        need(_finite(self.dp_sigma) and self.dp_sigma >= 0, "dp_sigma", "must be nonnegative")
        need(_is_int(self.cluster_k) and self.cluster_k >= 1, "cluster_k", "must be a positive integer")
        need(self.cluster_k <= self.n_clients, "cluster_k", "cannot exceed n_clients")
        need(self.cluster_metric in METRICS, "cluster_metric", f"must be one of {METRICS}")
        need(_is_int(self.cluster_warmup) and self.cluster_warmup >= 0, "cluster_warmup", "must be >= 0")
        need(_is_int(self.cluster_period) and self.cluster_period >= 1, "cluster_period", "must be >= 1")
        need(isinstance(self.federated_enabled, (bool, np.bool_)), "federated_enabled", "must be a boolean")
        return self

    def to_record(self) -> dict:
        rec = {f.name: getattr(self, f.name) for f in fields(self)}
        rec["dp_clip"] = _encode_float(self.dp_clip)
        return rec


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _finite(x) -> bool:
    try:
        return math.isfinite(x)
    except TypeError:
        return False


def _encode_float(x: float):
    return "inf" if x == math.inf else x


@dataclass
class ClientState:
    client_id: int
    data_indices: np.ndarray
    control_variate: np.ndarray
    cluster_id: int = 0
    local_weights: np.ndarray | None = None  # None until the client has trained once


@dataclass
class ServerState:
    models: list[np.ndarray]
    adam_m: list[np.ndarray]
    adam_v: list[np.ndarray]
    server_control: np.ndarray
    round: int = 0


@dataclass
class ClientUpdate:
    client_id: int
    delta: np.ndarray
    n_samples: int
    final_local_loss: float
    control_delta: np.ndarray
    cluster_id: int = 0


def new_server(models: list[np.ndarray]) -> ServerState:
    return ServerState(
        models=[m.copy() for m in models],
        adam_m=[np.zeros_like(m) for m in models],
        adam_v=[np.zeros_like(m) for m in models],
        server_control=np.zeros_like(models[0]),
    )


def new_clients(partition: Partition, n_params: int, cluster_k: int) -> list[ClientState]:
    return [
        ClientState(
            client_id=cid,
            data_indices=np.asarray(idx, dtype=np.int64),
            control_variate=np.zeros(n_params),
            cluster_id=cid % cluster_k,
        )
        for cid, idx in enumerate(partition.assignments)
    ]


def sample_clients(
    n_clients: int, client_fraction: float, dropout_prob: float, rng: np.random.Generator
) -> list[int]:
    """Pick ceil(fraction * n) clients, then drop each one with ``dropout_prob``."""
    # the epsilon keeps e.g. 0.3 * 10 == 3.0000000000000004 from rounding up to 4
    m = min(n_clients, math.ceil(client_fraction * n_clients - 1e-9))
    chosen = np.sort(rng.choice(n_clients, size=m, replace=False))
    survive = rng.random(m) >= dropout_prob
    return [int(c) for c in chosen[survive]]


def _local_sgd(
    w0: np.ndarray,
    anchor: np.ndarray,
    spec: nn.NetworkSpec,
    points: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    cfg: FLConfig,
    rng: np.random.Generator,
    correction: np.ndarray | None = None,
    on_epoch=None,
) -> tuple[np.ndarray, int]:
    w = w0.copy()
    n = len(labels)
    steps = 0
    prox = cfg.algorithm == "fedprox" and cfg.mu != 0
    for _ in range(epochs):
        # one full batch is order-independent, so skip the shuffle
        order = np.arange(n) if cfg.batch_size >= n else rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            _, g = nn.loss_and_grad_flat(spec, w, points[b], labels[b])
            if prox:
                g = g + cfg.mu * (w - anchor)
            if correction is not None:
                g = g + correction
            w = w - cfg.client_lr * g
            steps += 1
        if on_epoch is not None:
            on_epoch(w)
    return w, steps


def local_train(
    client: ClientState,
    global_w: np.ndarray,
    cfg: FLConfig,
    spec: nn.NetworkSpec,
    dataset: Dataset,
    rng: np.random.Generator,
    server_control: np.ndarray | None = None,
) -> ClientUpdate | None:
    """Train one client from ``global_w``; returns None for a client without data.

    Updates ``client.local_weights`` and, under SCAFFOLD, ``client.control_variate``.
    """
    idx = client.data_indices
    if len(idx) == 0:
        return None
    points, labels = dataset.points[idx], dataset.labels[idx]
    scaffold = cfg.algorithm == "scaffold"
    correction = None
    if scaffold:
        c = server_control if server_control is not None else np.zeros_like(global_w)
        correction = c - client.control_variate
    w, steps = _local_sgd(
        global_w, global_w, spec, points, labels, cfg.local_epochs, cfg, rng, correction
    )
    control_delta = np.zeros_like(global_w)
    if scaffold and steps * cfg.client_lr > 0:
        c_plus = client.control_variate - c + (global_w - w) / (steps * cfg.client_lr)
        control_delta = c_plus - client.control_variate
        # c_i + (c_i+ - c_i) rather than c_i+ so that c and c_i move in lockstep
        # when they start equal (single-client runs stay exactly FedAvg)
        client.control_variate = client.control_variate + control_delta
    client.local_weights = w
    return ClientUpdate(
        client_id=client.client_id,
        delta=w - global_w,
        n_samples=len(idx),
        final_local_loss=nn.data_loss(spec, w, points, labels),
        control_delta=control_delta,
        cluster_id=client.cluster_id,
    )


def apply_dp(delta: np.ndarray, dp_clip: float, dp_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Clip to l2 norm ``dp_clip`` then add N(0, (dp_sigma * dp_clip)^2) per coordinate."""
    delta = np.array(delta, dtype=float)
    if math.isinf(dp_clip):
        return delta
    norm = float(np.linalg.norm(delta))
    if norm > dp_clip:
        delta = delta * (dp_clip / norm)
    if dp_sigma > 0:
        delta = delta + rng.normal(0.0, dp_sigma * dp_clip, size=delta.shape)
    return delta


def aggregate_weighted(updates: list[ClientUpdate]) -> np.ndarray | None:
    """Sample-size weighted mean of the deltas; None when ``updates`` is empty."""
    if not updates:
        return None
    total = float(sum(u.n_samples for u in updates))
    base = updates[0].delta
    # accumulate offsets from the first delta so identical deltas come back unchanged
    shift = np.zeros_like(base)
    for u in updates[1:]:
        if u.delta.shape != base.shape:
            raise ValueError("client deltas differ in length")
        shift += (u.n_samples / total) * (u.delta - base)
    return base + shift


def server_apply(server: ServerState, model_idx: int, aggregated: np.ndarray, cfg: FLConfig) -> ServerState:
    w = server.models[model_idx]
    if aggregated.shape != w.shape:
        raise nn.ShapeError(f"aggregate has shape {aggregated.shape}, model {w.shape}")
    lr = cfg.effective_server_lr
    if cfg.algorithm == "fedadam":
        m = cfg.beta1 * server.adam_m[model_idx] + (1 - cfg.beta1) * aggregated
        v = cfg.beta2 * server.adam_v[model_idx] + (1 - cfg.beta2) * aggregated * aggregated
        server.adam_m[model_idx] = m
        server.adam_v[model_idx] = v
        server.models[model_idx] = w + lr * m / (np.sqrt(v) + cfg.tau)
    else:
        server.models[model_idx] = w + lr * aggregated
    return server


def scaffold_server_update(server: ServerState, updates: list[ClientUpdate], n_clients: int) -> np.ndarray:
    if updates:
        mean = np.sum([u.control_delta for u in updates], axis=0) / len(updates)
        server.server_control = server.server_control + (len(updates) / n_clients) * mean
    return server.server_control


def recluster_due(round_no: int, cfg: FLConfig) -> bool:
    return (
        cfg.cluster_k > 1
        and round_no >= cfg.cluster_warmup
        and (round_no - cfg.cluster_warmup) % cfg.cluster_period == 0
    )


def recluster(clients: list[ClientState], server: ServerState, cfg: FLConfig, rng: np.random.Generator):
    """k-means over client weights; each non-empty cluster's model becomes its members' mean."""
    feats = [
        c.local_weights if c.local_weights is not None else server.models[c.cluster_id]
        for c in clients
    ]
    assign, _ = kmeans(np.stack(feats), cfg.cluster_k, cfg.cluster_metric, rng)
    for c, a in zip(clients, assign):
        c.cluster_id = int(a)
    for j in range(cfg.cluster_k):
        members = [f for f, a in zip(feats, assign) if a == j]
        if members:
            server.models[j] = np.mean(np.stack(members), axis=0)
    return assign, server.models


def global_losses(
    server: ServerState, clients: list[ClientState], spec: nn.NetworkSpec, dataset: Dataset
) -> tuple[float, float]:
    """Train points are scored by their owner's cluster model, test points by model 0."""
    train, test = dataset.train_indices, dataset.test_indices
    if len(server.models) == 1:
        train_loss = nn.data_loss(spec, server.models[0], dataset.points[train], dataset.labels[train])
    else:
        owner = np.zeros(dataset.n, dtype=np.int64)
        for c in clients:
            owner[c.data_indices] = c.cluster_id
        preds = np.empty(len(train))
        for j, model in enumerate(server.models):
            sel = owner[train] == j
            if sel.any():
                preds[sel] = nn.predict(spec, model, dataset.points[train[sel]])
        err = preds - dataset.labels[train]
        train_loss = float(0.5 * np.mean(err * err))
    test_loss = nn.data_loss(spec, server.models[0], dataset.points[test], dataset.labels[test])
    return train_loss, test_loss


def _cluster_sizes(clients: list[ClientState], k: int) -> list[int]:
    sizes = [0] * k
    for c in clients:
        sizes[c.cluster_id] += 1
    return sizes


def one_step_fl(
    server: ServerState,
    clients: list[ClientState],
    cfg: FLConfig,
    spec: nn.NetworkSpec,
    dataset: Dataset,
    streams: Streams,
) -> RoundReport:
    cfg.validate()
    if not cfg.federated_enabled:
        raise ConfigError("federated_enabled is off; use one_step_centralized", "federated_enabled")
    rnd = server.round + 1
    participants = sample_clients(
        cfg.n_clients, cfg.client_fraction, cfg.dropout_prob, streams("sample", rnd)
    )
    updates: list[ClientUpdate] = []
    for cid in participants:
        client = clients[cid]
        upd = local_train(
            client,
            server.models[client.cluster_id],
            cfg,
            spec,
            dataset,
            streams("shuffle", rnd, cid),
            server.server_control,
        )
        if upd is None:
            continue
        upd.delta = apply_dp(upd.delta, cfg.dp_clip, cfg.dp_sigma, streams("dp", rnd, cid))
        updates.append(upd)

    for j in range(len(server.models)):
        agg = aggregate_weighted([u for u in updates if u.cluster_id == j])
        if agg is not None:
            server_apply(server, j, agg, cfg)
    if cfg.algorithm == "scaffold":
        scaffold_server_update(server, updates, cfg.n_clients)

    server.round = rnd
    # an empty round carries no new information and must leave every model untouched
    if updates and recluster_due(rnd, cfg):
        recluster(clients, server, cfg, streams("kmeans", rnd))

    train_loss, test_loss = global_losses(server, clients, spec, dataset)
    trained = [u.client_id for u in updates]
    return RoundReport(
        round=rnd,
        participants=trained,
        per_client_loss={u.client_id: u.final_local_loss for u in updates},
        # a lone client's control delta is derivable from its model delta, so it is not sent
        comms_bytes=comms_cost(len(trained), spec.n_params,
                               cfg.algorithm == "scaffold" and cfg.n_clients > 1),
        global_train_loss=train_loss,
        global_test_loss=test_loss,
        per_cluster_sizes=_cluster_sizes(clients, len(server.models)),
    )


def one_step_centralized(
    server: ServerState,
    clients: list[ClientState],
    cfg: FLConfig,
    spec: nn.NetworkSpec,
    dataset: Dataset,
    streams: Streams,
) -> RoundReport:
    """One minibatch SGD step of model 0 on the pooled train split."""
    rnd = server.round + 1
    train = dataset.train_indices
    if cfg.batch_size >= len(train):
        batch = train
    else:
        batch = streams("central", rnd).choice(train, size=cfg.batch_size, replace=False)
    _, g = nn.loss_and_grad_flat(spec, server.models[0], dataset.points[batch], dataset.labels[batch])
    server.models[0] = server.models[0] - cfg.client_lr * g
    server.round = rnd
    train_loss, test_loss = global_losses(server, clients, spec, dataset)
    return RoundReport(
        round=rnd,
        global_train_loss=train_loss,
        global_test_loss=test_loss,
        per_cluster_sizes=_cluster_sizes(clients, len(server.models)),
        centralized=True,
    )


def train_client_local(
    client_id: int,
    epochs: int,
    server: ServerState,
    clients: list[ClientState],
    cfg: FLConfig,
    spec: nn.NetworkSpec,
    dataset: Dataset,
    rng: np.random.Generator,
) -> tuple[ClientState, list[float]]:
    """Train a single client from its cluster model without aggregating.

    Only ``local_weights`` changes; global models and control variates stay put.
    """
    if not (_is_int(client_id) and 0 <= client_id < len(clients)):
        raise UnknownClientError(f"no client {client_id!r}", "client_id")
    if epochs < 0:
        raise ValueError("epochs must be nonnegative")
    client = clients[client_id]
    if epochs == 0 or len(client.data_indices) == 0:
        return client, []
    idx = client.data_indices
    points, labels = dataset.points[idx], dataset.labels[idx]
    start = server.models[client.cluster_id]
    correction = None
    if cfg.algorithm == "scaffold":
        correction = server.server_control - client.control_variate
    losses: list[float] = []
    w, _ = _local_sgd(
        start, start, spec, points, labels, epochs, cfg, rng, correction,
        on_epoch=lambda w: losses.append(nn.data_loss(spec, w, points, labels)),
    )
    client.local_weights = w
    return client, losses


class Simulation:
    """Engine state for one run: data, clients, server, and the seed streams."""

    def __init__(
        self,
        cfg: FLConfig,
        spec: nn.NetworkSpec,
        dataset: Dataset,
        partition: Partition,
        seed: int,
    ):
        cfg.validate()
        spec.validate()
        if partition.n_clients != cfg.n_clients:
            raise ConfigError("partition size does not match n_clients", "n_clients")
        self.cfg = cfg
        self.spec = spec
        self.dataset = dataset
        self.partition = partition
        self.streams = Streams(seed)
        models = [
            nn.flatten_weights(nn.init_network(spec, self.streams("init", j))).values
            for j in range(cfg.cluster_k)
        ]
        self.server = new_server(models)
        self.clients = new_clients(partition, spec.n_params, cfg.cluster_k)
        self.local_runs = 0

    @property
    def round(self) -> int:
        return self.server.round

    def step(self) -> RoundReport:
        if self.cfg.federated_enabled:
            return one_step_fl(self.server, self.clients, self.cfg, self.spec, self.dataset, self.streams)
        return one_step_centralized(self.server, self.clients, self.cfg, self.spec, self.dataset, self.streams)

    def train_client_local(self, client_id: int, epochs: int) -> list[float]:
        self.local_runs += 1
        rng = self.streams("local", self.local_runs, client_id if _is_int(client_id) else 0)
        _, losses = train_client_local(
            client_id, epochs, self.server, self.clients, self.cfg, self.spec, self.dataset, rng
        )
        return losses

    def update_config(self, cfg: FLConfig) -> None:
        cfg.validate()
        if cfg.algorithm != self.cfg.algorithm:
            self.reset_algorithm_state()
        self.cfg = cfg

    def reset_algorithm_state(self) -> None:
        s = self.server
        s.adam_m = [np.zeros_like(m) for m in s.models]
        s.adam_v = [np.zeros_like(m) for m in s.models]
        s.server_control = np.zeros_like(s.server_control)
        for c in self.clients:
            c.control_variate = np.zeros_like(c.control_variate)

    def client_model(self, client_id: int) -> np.ndarray:
        if not (_is_int(client_id) and 0 <= client_id < len(self.clients)):
            raise UnknownClientError(f"no client {client_id!r}", "client_id")
        c = self.clients[client_id]
        return c.local_weights if c.local_weights is not None else self.server.models[c.cluster_id]

    def state_digest(self) -> str:
        """SHA-256 over every piece of mutable numeric state."""
        h = hashlib.sha256()
        s = self.server
        h.update(str(s.round).encode())
        for arr in (*s.models, *s.adam_m, *s.adam_v, s.server_control):
            h.update(np.ascontiguousarray(arr).tobytes())
        for c in self.clients:
            h.update(f"{c.client_id}:{c.cluster_id}".encode())
            h.update(c.control_variate.tobytes())
            h.update(b"-" if c.local_weights is None else c.local_weights.tobytes())
        h.update(str(self.local_runs).encode())
        return h.hexdigest()


__all__ = [
    "ALGORITHMS", "FLConfig", "ClientState", "ServerState", "ClientUpdate", "Simulation",
    "sample_clients", "local_train", "apply_dp", "aggregate_weighted", "server_apply",
    "scaffold_server_update", "recluster", "recluster_due", "one_step_fl",
    "one_step_centralized", "train_client_local", "global_losses", "new_server",
    "new_clients", "canonical_algorithm",
]
