"""Stateful simulation façade used by the protocol server and the CLI.

Parameter changes are queued and take effect at the next round boundary,
so a ``set_param`` arriving from another thread while ``step`` is running
never lands mid-round.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import replace

import numpy as np

from . import metrics, nn
from .config import HOT_KEYS, SessionConfig
from .datasets import data_distribution, generate_dataset, make_partition
from .engine import Simulation
from .errors import ColdParamError, ConfigError, ParamRangeError, ProtocolError, UnknownClientError
from .metrics import MetricsSeries, RoundReport
from .rng import Streams

GRID_SIZE = 50
GRID_EXTENT = (-6.0, 6.0)
SNAPSHOT_KINDS = (
    "metrics", "participation", "data_distribution", "boundary_global",
    "boundary_client", "boundary_cluster", "config",
)


def grid_points(size: int = GRID_SIZE) -> np.ndarray:
    """Lattice over [-6, 6]^2, row-major with x1 varying fastest, origin (-6, -6)."""
    axis = np.linspace(*GRID_EXTENT, size)
    x1, x2 = np.meshgrid(axis, axis)  # rows follow x2, columns follow x1
    return np.stack([x1.ravel(), x2.ravel()], axis=1)


class Session:
    def __init__(self, config: SessionConfig, session_id: str = "s1"):
        self.id = session_id
        self.status = "idle"
        self._lock = threading.RLock()
        self._pending_lock = threading.Lock()
        self._interrupt = threading.Event()
        self._build(config)

    def _build(self, config: SessionConfig) -> None:
        config.validate()
        streams = Streams(config.seed)
        d = config.data
        self.dataset = generate_dataset(d.dataset, d.n_points, d.noise, d.train_ratio, streams("data"))
        try:
            self.partition = make_partition(
                self.dataset, config.fl.n_clients, d.partition, streams("partition"),
                alpha_label=d.alpha_label, alpha_size=d.alpha_size,
            )
        except ValueError as exc:
            raise ConfigError(str(exc), "n_clients") from None
        self.config = config
        self.sim = Simulation(config.fl, config.network, self.dataset, self.partition, config.seed)
        self.series = MetricsSeries()
        self.config_version = 0
        self._next = config
        self.status = "idle"

    @classmethod
    def create(cls, record: dict | None = None, session_id: str = "s1") -> Session:
        return cls(SessionConfig.from_record(record), session_id)

    @property
    def spec(self) -> nn.NetworkSpec:
        return self.config.network

    @property
    def round(self) -> int:
        return self.sim.round

    # -- parameters -------------------------------------------------------

    def set_param(self, key: str, value) -> dict:
        """Queue a hot parameter change for the next round boundary."""
        if key not in HOT_KEYS:
            if key in SessionConfig().to_record():
                raise ColdParamError(f"{key} changes data, partition or architecture; reset instead", key)
            raise ProtocolError(f"unknown parameter {key!r}", key)
        with self._pending_lock:
            try:
                candidate = self._next.with_value(key, value)
                candidate.fl.validate()
            except ConfigError as exc:
                raise ParamRangeError(str(exc), exc.key or key) from None
            self._next = candidate
            coerced = getattr(candidate.fl, key)
        return {"key": key, "value": _jsonable(coerced), "effective_round": self.round + 1}

    def _apply_pending(self) -> None:
        with self._pending_lock:
            nxt = self._next
        if nxt != self.config:
            self.sim.update_config(nxt.fl)
            self.config = nxt
            self.config_version += 1

    def interrupt(self) -> None:
        """Ask a running ``step`` to stop at the next round boundary."""
        self._interrupt.set()

    # -- running ----------------------------------------------------------

    def step(self, count: int = 1) -> list[RoundReport]:
        if isinstance(count, bool) or not isinstance(count, (int, np.integer)) or count < 1:
            raise ProtocolError("count must be a positive integer", "count")
        with self._lock:
            self._interrupt.clear()
            self.status = "running"
            out = []
            try:
                for _ in range(count):
                    if self._interrupt.is_set():
                        break
                    self._apply_pending()
                    report = self.sim.step()
                    report.config_version = self.config_version
                    self.series.append(report)
                    out.append(report)
            except Exception:
                self.status = "finished-error"
                raise
            self.status = "idle"
            return out

    def train_local(self, client_id: int, epochs: int) -> list[float]:
        with self._lock:
            return self.sim.train_client_local(client_id, epochs)

    def reset(self, seed: int | None = None, changes: dict | None = None) -> None:
        """Rebuild from round 0; ``changes`` may touch cold keys as well."""
        with self._lock:
            config = self._next
            for key, value in (changes or {}).items():
                config = config.with_value(key, value)
            if seed is not None:
                config = replace(config, seed=int(seed))
            self._build(config)

    # -- read-only views --------------------------------------------------

    def boundary(self, weights: np.ndarray) -> dict:
        values = nn.predict(self.spec, weights, grid_points())
        return {
            "size": GRID_SIZE,
            "extent": list(GRID_EXTENT),
            "origin": [GRID_EXTENT[0], GRID_EXTENT[0]],
            "order": "row-major, x1 fastest",
            "values": values.tolist(),
        }

    def snapshot(self, kinds) -> dict:
        with self._lock:
            return {label: payload for label, payload in (self._one(k) for k in kinds)}

    def _one(self, kind):
        name, ident = _parse_kind(kind)
        if name == "metrics":
            cols = metrics.CSV_HEADER.split(",")
            return name, {"columns": cols, "rows": self.series.csv_rows()}
        if name == "participation":
            return name, metrics.participation_histogram(self.series, self.config.fl.n_clients)
        if name == "data_distribution":
            return name, data_distribution(self.partition, self.dataset)
        if name == "config":
            return name, {"config": self.config.to_record(), "config_version": self.config_version}
        if name == "boundary_global":
            return name, self.boundary(self.sim.server.models[0])
        if name == "boundary_client":
            return f"{name}:{ident}", self.boundary(self.sim.client_model(ident))
        if name == "boundary_cluster":
            if not 0 <= ident < len(self.sim.server.models):
                raise UnknownClientError(f"no cluster {ident}", "cluster_id")
            return f"{name}:{ident}", self.boundary(self.sim.server.models[ident])
        raise ProtocolError(f"unknown snapshot kind {kind!r}", "kinds")

    def digest(self) -> str:
        h = hashlib.sha256(self.sim.state_digest().encode())
        h.update(repr(sorted(self.config.to_record().items())).encode())
        h.update(repr(self.series.to_records()).encode())
        return h.hexdigest()

    def csv(self) -> str:
        return self.series.to_csv()


def _parse_kind(kind):
    if isinstance(kind, dict):
        name, ident = kind.get("kind"), kind.get("id")
    elif isinstance(kind, str) and ":" in kind:
        name, _, raw = kind.partition(":")
        ident = raw
    else:
        name, ident = kind, None
    if name not in SNAPSHOT_KINDS:
        raise ProtocolError(f"unknown snapshot kind {kind!r}", "kinds")
    if name in ("boundary_client", "boundary_cluster"):
        try:
            ident = int(ident)
        except (TypeError, ValueError):
            raise UnknownClientError(f"bad id in {kind!r}", "client_id") from None
    return name, ident


def _jsonable(v):
    if isinstance(v, float) and v == float("inf"):
        return "inf"
    if isinstance(v, tuple):
        return list(v)
    return v
