"""Point-cloud datasets: normalization, binary cloud files, manifests, set sources and batching."""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Protocol

import numpy as np

from .circles import ANGULAR_SD, RADIAL_SD, gen_circle_set
from .meshes import read_off, sample_mesh_points

CLOUD_MAGIC = b"SFCLOUD\0"


@dataclass(frozen=True)
class NormalizationRecord:
    """``normalized = (raw - shift) * scale``."""

    shift: tuple[float, ...]
    scale: float

    def raw_loglik(self, per_entity_ll: float, dim: int = 3) -> float:
        """Per-entity log-likelihood in raw (unnormalized) coordinates."""
        return per_entity_ll + dim * float(np.log(self.scale))


def normalize_cloud(cloud) -> tuple[np.ndarray, NormalizationRecord]:
    """Center on the centroid and scale into the unit ball (max norm 1)."""
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 1:
        raise ValueError("cloud must be a non-empty [n, D] array")
    shift = pts.mean(axis=0)
    centered = pts - shift
    radius = np.linalg.norm(centered, axis=1).max()
    if not radius > 0:
        raise ValueError("all points identical: cannot normalize scale")
    scale = 1.0 / radius
    return centered * scale, NormalizationRecord(tuple(float(s) for s in shift), float(scale))


def write_cloud(path, array) -> None:
    """Little-endian float64 array with an 8-byte magic and a shape header."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_cloud(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CLOUD_MAGIC:
        raise ValueError(f"{path}: not a cloud file (bad magic)")
    (ndim,) = struct.unpack_from("<I", raw, 8)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 12)
    start = 12 + 8 * ndim
    n = int(np.prod(shape))
    if len(raw) - start != 8 * n:
        raise ValueError(f"{path}: truncated cloud data")
    return np.frombuffer(raw, dtype="<f8", offset=start, count=n).reshape(shape).astype(np.float64)


# --------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    cls: str
    split: str
    seed: int

    def to_json(self) -> str:
        return json.dumps({"path": self.path, "class": self.cls, "split": self.split,
                           "seed": self.seed}, sort_keys=True)


def build_manifest(root, classes=None, seed: int = 0, train_frac: float = 0.8) -> list[ManifestEntry]:
    """Seeded per-class split of model files under ``root/<class>/{train,test}/``.

    The original train/test folders are pooled and re-split by file.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    wanted = None if classes is None else set(classes)
    entries = []
    for cdir in sorted(p for p in root.iterdir() if p.is_dir()):
        if wanted is not None and cdir.name not in wanted:
            continue
        files = sorted(str(p.relative_to(root)) for p in cdir.rglob("*")
                       if p.suffix.lower() in (".off", ".bin") and p.is_file())
        order = rng.permutation(len(files))
        n_train = int(round(train_frac * len(files)))
        for rank, i in enumerate(order):
            split = "train" if rank < n_train else "test"
            entries.append(ManifestEntry(files[i], cdir.name, split, seed))
    if wanted is not None and not entries:
        raise FileNotFoundError(f"no model files for classes {sorted(wanted)} under {root}")
    return sorted(entries, key=lambda e: e.path)


def write_manifest(path, entries, root=None) -> None:
    with open(path, "w") as fh:
        if root is not None:
            fh.write(json.dumps({"kind": "pointcloud", "root": str(root)}) + "\n")
        for e in entries:
            fh.write(e.to_json() + "\n")


def read_manifest(path) -> tuple[dict, list[ManifestEntry]]:
    header, entries = {}, []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "kind" in rec:
                header = rec
                continue
            entries.append(ManifestEntry(rec["path"], rec["class"], rec["split"], rec["seed"]))
    return header, entries


@dataclass
class PointCloudDataset:
    clouds: list[np.ndarray]
    labels: np.ndarray
    splits: list[str]
    records: list[NormalizationRecord]
    class_names: list[str]
    paths: list[str] = field(default_factory=list)

    def subset(self, split: str) -> "PointCloudDataset":
        idx = [i for i, s in enumerate(self.splits) if s == split]
        return PointCloudDataset([self.clouds[i] for i in idx], self.labels[idx],
                                 [split] * len(idx), [self.records[i] for i in idx],
                                 self.class_names, [self.paths[i] for i in idx])

    def __len__(self) -> int:
        return len(self.clouds)


def load_point_clouds(entries, root, n_points: int = 10_000, seed: int = 0,
                      class_names=None) -> PointCloudDataset:
    """Build normalized source clouds: OFF meshes are surface-sampled, cloud files used as-is."""
    root = Path(root)
    class_names = class_names or sorted({e.cls for e in entries})
    index = {c: i for i, c in enumerate(class_names)}
    clouds, labels, splits, records, paths = [], [], [], [], []
    for i, e in enumerate(entries):
        p = root / e.path
        if p.suffix.lower() == ".off":
            rng = np.random.default_rng([seed, i])
            pts = sample_mesh_points(read_off(p), n_points, rng)
        else:
            pts = read_cloud(p)
        cloud, rec = normalize_cloud(pts)
        clouds.append(cloud)
        labels.append(index[e.cls])
        splits.append(e.split)
        records.append(rec)
        paths.append(e.path)
    return PointCloudDataset(clouds, np.array(labels, dtype=np.int64), splits, records,
                             list(class_names), paths)


# --------------------------------------------------------------------------
# set sources and batching


class SetSource(Protocol):
    entity_dim: int

    def sample_batch(self, s: int, batch_size: int, rng: np.random.Generator
                     ) -> tuple[np.ndarray, np.ndarray | None]: ...


class CloudSource:
    """Sets drawn as random size-``s`` subsets (without replacement) of source clouds."""

    def __init__(self, clouds, labels=None):
        self.clouds = [np.asarray(c, dtype=np.float64) for c in clouds]
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        if not self.clouds:
            raise ValueError("no source clouds")
        self.entity_dim = self.clouds[0].shape[1]
        self._warned: set[int] = set()

    def sample_batch(self, s, batch_size, rng):
        usable = [i for i, c in enumerate(self.clouds) if len(c) >= s]
        for i in set(range(len(self.clouds))) - set(usable) - self._warned:
            warnings.warn(f"source {i} has {len(self.clouds[i])} < {s} entities; skipped")
            self._warned.add(i)
        if not usable:
            raise ValueError(f"no source has at least {s} entities")
        picks = rng.choice(usable, size=batch_size)
        X = np.stack([self.clouds[i][rng.choice(len(self.clouds[i]), size=s, replace=False)]
                      for i in picks])
        return X, None if self.labels is None else self.labels[picks]


class CircleSource:
    """Fresh circle sets of the requested size from the toy generator."""

    entity_dim = 2

    def __init__(self, radial_sd: float = RADIAL_SD, angular_sd: float = ANGULAR_SD):
        self.radial_sd, self.angular_sd = radial_sd, angular_sd

    def sample_batch(self, s, batch_size, rng):
        X = np.stack([gen_circle_set(s, rng, self.radial_sd, self.angular_sd)[0]
                      for _ in range(batch_size)])
        return X, None


class FixedSetSource:
    """Pre-generated sets; a batch of size ``s`` uses only sets with exactly ``s`` entities."""

    def __init__(self, sets, labels=None):
        self.sets = [np.asarray(x, dtype=np.float64) for x in sets]
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self.entity_dim = self.sets[0].shape[1]
        self._by_size: dict[int, list[int]] = {}
        for i, x in enumerate(self.sets):
            self._by_size.setdefault(len(x), []).append(i)

    def sample_batch(self, s, batch_size, rng):
        pool = self._by_size.get(s)
        if not pool:
            raise ValueError(f"no stored sets of size {s}")
        picks = rng.choice(pool, size=batch_size)
        X = np.stack([self.sets[i][rng.permutation(s)] for i in picks])
        return X, None if self.labels is None else self.labels[picks]


def make_batches(dataset: SetSource, set_sizes, batch_size: int,
                 rng: np.random.Generator) -> Iterator[tuple[np.ndarray, np.ndarray | None]]:
    """Endless stream of ``(X[batch_size, s, D], labels)`` with ``s`` uniform over ``set_sizes``."""
    sizes = [int(s) for s in set_sizes]
    if not sizes:
        raise ValueError("set_sizes must be non-empty")
    while True:
        s = sizes[int(rng.integers(len(sizes)))]
        yield dataset.sample_batch(s, batch_size, rng)
