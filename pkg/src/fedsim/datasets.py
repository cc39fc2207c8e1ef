"""Synthetic 2D datasets and client partitioners.

Geometry follows the classic playground generators (circle, xor, two
gaussians, spiral), all on the square [-6, 6]^2 with labels in {-1, +1}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("circle", "xor", "gauss", "spiral")
PARTITION_MODES = ("iid", "dirichlet_label", "uniform_class_skewed_size")
BOUND = 6.0


@dataclass(eq=False)
class Dataset:
    kind: str
    points: np.ndarray  # (n, 2)
    labels: np.ndarray  # (n,) in {-1., +1.}
    train_indices: np.ndarray
    test_indices: np.ndarray
    noise: float = 0.0

    @property
    def n(self) -> int:
        return len(self.labels)

    def to_record(self) -> dict:
        return {
            "kind": self.kind,
            "noise": self.noise,
            "points": self.points.tolist(),
            "labels": self.labels.astype(int).tolist(),
            "train_indices": self.train_indices.tolist(),
            "test_indices": self.test_indices.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> Dataset:
        return cls(
            kind=rec["kind"],
            points=np.asarray(rec["points"], dtype=float).reshape(-1, 2),
            labels=np.asarray(rec["labels"], dtype=float),
            train_indices=np.asarray(rec["train_indices"], dtype=np.int64),
            test_indices=np.asarray(rec["test_indices"], dtype=np.int64),
            noise=float(rec["noise"]),
        )


@dataclass(eq=False)
class Partition:
    assignments: list[np.ndarray]
    mode: str
    alpha_label: float | None = None
    alpha_size: float | None = None

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def to_record(self) -> dict:
        return {
            "mode": self.mode,
            "alpha_label": self.alpha_label,
            "alpha_size": self.alpha_size,
            "assignments": [a.tolist() for a in self.assignments],
        }

    @classmethod
    def from_record(cls, rec: dict) -> Partition:
        return cls(
            assignments=[np.asarray(a, dtype=np.int64) for a in rec["assignments"]],
            mode=rec["mode"],
            alpha_label=rec.get("alpha_label"),
            alpha_size=rec.get("alpha_size"),
        )


def _class_sizes(n: int) -> tuple[int, int]:
    pos = (n + 1) // 2
    return pos, n - pos


def _circle(n, noise, rng):
    radius = 5.0
    n_pos, n_neg = _class_sizes(n)
    r = np.concatenate([
        rng.uniform(0.0, 0.5 * radius, n_pos),
        rng.uniform(0.7 * radius, radius, n_neg),
    ])
    angle = rng.uniform(0.0, 2 * np.pi, n)
    pts = np.stack([r * np.sin(angle), r * np.cos(angle)], axis=1)
    pts = pts + rng.normal(0.0, 5.0 * noise, pts.shape)
    labels = np.where(np.hypot(pts[:, 0], pts[:, 1]) < 0.5 * radius, 1.0, -1.0)
    return pts, labels


def _xor(n, noise, rng):
    padding = 0.3
    pts = rng.uniform(-5.0, 5.0, (n, 2))
    pts += np.where(pts > 0, padding, -padding)
    # force the class split to n/2 by mirroring x2 where needed
    n_pos, _ = _class_sizes(n)
    want_pos = np.arange(n) < n_pos
    flip = (pts[:, 0] * pts[:, 1] > 0) != want_pos
    pts[flip, 1] *= -1
    pts = pts + rng.normal(0.0, 5.0 * noise, pts.shape)
    labels = np.where(pts[:, 0] * pts[:, 1] >= 0, 1.0, -1.0)
    return pts, labels


def _gauss(n, noise, rng):
    std = np.sqrt(0.5 + 7.0 * noise)  # variance 0.5 at noise 0, 4.0 at noise 0.5
    n_pos, n_neg = _class_sizes(n)
    pos = rng.normal(2.0, std, (n_pos, 2))
    neg = rng.normal(-2.0, std, (n_neg, 2))
    return np.concatenate([pos, neg]), np.concatenate([np.ones(n_pos), -np.ones(n_neg)])


def _spiral(n, noise, rng):
    parts, labels = [], []
    for count, delta_t, label in zip(_class_sizes(n), (0.0, np.pi), (1.0, -1.0)):
        i = np.arange(count)
        r = i / max(count, 1) * 5.0
        t = 1.75 * i / max(count, 1) * 2 * np.pi + delta_t
        pts = np.stack([r * np.sin(t), r * np.cos(t)], axis=1)
        parts.append(pts + rng.normal(0.0, 5.0 * noise, pts.shape))
        labels.append(np.full(count, label))
    return np.concatenate(parts), np.concatenate(labels)


_GENERATORS = {"circle": _circle, "xor": _xor, "gauss": _gauss, "spiral": _spiral}


def generate_dataset(
    kind: str,
    n: int,
    noise: float,
    train_ratio: float,
    rng: np.random.Generator,
) -> Dataset:
    if kind not in _GENERATORS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if n < 4:
        raise ValueError("need at least 4 points")
    if not 0 <= noise <= 0.5:
        raise ValueError("noise must lie in [0, 0.5]")
    if not 0 < train_ratio < 1:
        raise ValueError("train_ratio must lie in (0, 1)")
    points, labels = _GENERATORS[kind](n, noise, rng)
    points = np.clip(points, -BOUND, BOUND)
    order = rng.permutation(n)
    n_train = min(max(int(round(n * train_ratio)), 1), n - 1)
    return Dataset(
        kind=kind,
        points=points,
        labels=labels,
        train_indices=np.sort(order[:n_train]),
        test_indices=np.sort(order[n_train:]),
        noise=float(noise),
    )


def _check_clients(dataset: Dataset, n_clients: int) -> None:
    if n_clients < 1:
        raise ValueError("n_clients must be positive")
    if n_clients > len(dataset.train_indices):
        raise ValueError(
            f"cannot split {len(dataset.train_indices)} train points over {n_clients} clients"
        )


def _repair_empty(lists: list[list[int]]) -> list[list[int]]:
    # Give every empty client one sample taken from the currently largest client.
    for cid in range(len(lists)):
        if not lists[cid]:
            donor = max(range(len(lists)), key=lambda k: (len(lists[k]), -k))
            lists[cid].append(lists[donor].pop())
    return lists


def partition_iid(dataset: Dataset, n_clients: int, rng: np.random.Generator) -> Partition:
    _check_clients(dataset, n_clients)
    shuffled = rng.permutation(dataset.train_indices)
    return Partition([np.sort(shuffled[c::n_clients]) for c in range(n_clients)], "iid")


def partition_dirichlet(
    dataset: Dataset, n_clients: int, alpha_label: float, rng: np.random.Generator
) -> Partition:
    """Label-skewed split: each class is spread over clients by a Dirichlet draw."""
    if not alpha_label > 0:
        raise ValueError("alpha_label must be positive")
    _check_clients(dataset, n_clients)
    train = dataset.train_indices
    lists: list[list[int]] = [[] for _ in range(n_clients)]
    for label in np.unique(dataset.labels[train]):
        members = rng.permutation(train[dataset.labels[train] == label])
        p = rng.dirichlet(np.full(n_clients, float(alpha_label)))
        counts = rng.multinomial(len(members), p / p.sum())
        for cid, chunk in enumerate(np.split(members, np.cumsum(counts)[:-1])):
            lists[cid].extend(chunk.tolist())
    lists = _repair_empty(lists)
    return Partition(
        [np.sort(np.asarray(l, dtype=np.int64)) for l in lists],
        "dirichlet_label",
        alpha_label=float(alpha_label),
    )


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    weights = np.asarray(weights, dtype=float)
    ideal = weights / weights.sum() * total
    counts = np.floor(ideal).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(ideal - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_uniform_class_skewed_size(
    dataset: Dataset, n_clients: int, alpha_size: float, rng: np.random.Generator
) -> Partition:
    """Dirichlet-skewed client sizes, each client keeping the global class mix."""
    if not alpha_size > 0:
        raise ValueError("alpha_size must be positive")
    _check_clients(dataset, n_clients)
    train = dataset.train_indices
    q = rng.dirichlet(np.full(n_clients, float(alpha_size)))
    sizes = largest_remainder(q, len(train))
    # every client keeps at least one sample; the largest client donates
    for cid in range(n_clients):
        if sizes[cid] == 0:
            donor = int(np.argmax(sizes))
            sizes[donor] -= 1
            sizes[cid] += 1

    classes = np.unique(dataset.labels[train])
    totals = np.array([(dataset.labels[train] == c).sum() for c in classes])
    per_class = np.zeros((n_clients, len(classes)), dtype=np.int64)
    remaining = sizes.copy()
    for j in range(len(classes) - 1):
        per_class[:, j] = largest_remainder(sizes * totals[j], int(totals[j])) if totals[j] else 0
        per_class[:, j] = np.minimum(per_class[:, j], remaining)
        remaining = remaining - per_class[:, j]
    per_class[:, -1] = remaining

    lists: list[list[int]] = [[] for _ in range(n_clients)]
    for j, c in enumerate(classes):
        members = rng.permutation(train[dataset.labels[train] == c])
        for cid, chunk in enumerate(np.split(members, np.cumsum(per_class[:, j])[:-1])):
            lists[cid].extend(chunk.tolist())
    return Partition(
        [np.sort(np.asarray(l, dtype=np.int64)) for l in lists],
        "uniform_class_skewed_size",
        alpha_size=float(alpha_size),
    )


def make_partition(
    dataset: Dataset,
    n_clients: int,
    mode: str,
    rng: np.random.Generator,
    alpha_label: float = 0.5,
    alpha_size: float = 0.5,
) -> Partition:
    if mode == "iid":
        return partition_iid(dataset, n_clients, rng)
    if mode == "dirichlet_label":
        return partition_dirichlet(dataset, n_clients, alpha_label, rng)
    if mode == "uniform_class_skewed_size":
        return partition_uniform_class_skewed_size(dataset, n_clients, alpha_size, rng)
    raise ValueError(f"unknown partition mode {mode!r}")


def data_distribution(partition: Partition, dataset: Dataset) -> list[dict]:
    """Per-client sample counts, split by class label."""
    rows = []
    for cid, idx in enumerate(partition.assignments):
        labels = dataset.labels[idx]
        rows.append({
            "client": cid,
            "size": int(len(idx)),
            "counts": {"-1": int((labels < 0).sum()), "+1": int((labels > 0).sum())},
        })
    return rows
