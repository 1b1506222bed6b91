"""Datasets, client partitions, and the canonical client-block ordering.

After :func:`reorder_global`, client ``i`` owns the contiguous sample range
``[offset_i, offset_i + |D_i|)`` of the global set, so selecting its block of
any global (sample, component) vector is a plain slice.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
FWDS_MAGIC = b"FWDS"


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledSet:
    inputs: np.ndarray  # n0 x N
    labels: np.ndarray  # k x N
    source_ids: np.ndarray = None  # original sample identifiers
    classes: np.ndarray = None  # raw integer class per sample, when known

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if y.ndim == 1:
            y = y[None, :]
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
            raise ValueError(f"inputs {x.shape} and labels {y.shape} disagree on sample count")
        if not np.all(np.isfinite(y)):
            raise ValueError("labels must be finite")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        n = x.shape[1]
        ids = np.arange(n) if self.source_ids is None else np.asarray(self.source_ids, dtype=np.int64)
        object.__setattr__(self, "source_ids", ids)
        if self.classes is not None:
            object.__setattr__(self, "classes", np.asarray(self.classes, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.inputs.shape[1]

    @property
    def n0(self) -> int:
        return self.inputs.shape[0]

    @property
    def k(self) -> int:
        return self.labels.shape[0]

    def targets_vec(self) -> np.ndarray:
        """vec(Y): labels flattened sample-major."""
        return self.labels.T.reshape(-1)

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledSet(
            self.inputs[:, idx],
            self.labels[:, idx],
            self.source_ids[idx],
            None if self.classes is None else self.classes[idx],
        )


@dataclass(frozen=True, eq=False)
class Partition:
    client_indices: tuple[np.ndarray, ...]
    total: int = field(default=None)

    def __post_init__(self):
        lists = tuple(np.sort(np.asarray(c, dtype=np.intp)) for c in self.client_indices)
        object.__setattr__(self, "client_indices", lists)
        total = sum(len(c) for c in lists) if self.total is None else self.total
        object.__setattr__(self, "total", total)
        if not lists:
            raise ValueError("partition needs at least one client")
        for i, c in enumerate(lists):
            if len(c) == 0:
                raise ValueError(f"client {i} has no samples")
        merged = np.concatenate(lists)
        if len(merged) != total or not np.array_equal(np.sort(merged), np.arange(total)):
            raise ValueError("client index lists must be disjoint and cover 0..N-1")

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.client_indices])

    @property
    def weights(self) -> np.ndarray:
        return self.sizes / self.total

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]])

    def is_contiguous(self) -> bool:
        return all(
            np.array_equal(c, np.arange(o, o + len(c)))
            for c, o in zip(self.client_indices, self.offsets)
        )

    def block(self, i: int, k: int = 1) -> slice:
        """Rows of client i in a global (sample, component) vector; contiguous partitions only."""
        if not self.is_contiguous():
            raise ValueError("block slicing needs the canonical ordering (see reorder_global)")
        o = int(self.offsets[i])
        return slice(k * o, k * (o + int(self.sizes[i])))


def _normalize_columns(x: np.ndarray) -> np.ndarray:
    m = np.sqrt(np.sum(x * x, axis=0)).max()
    return x / m if m > 0 else x


def gen_synthetic(n0: int, per_class: int, separation: float = 1.0, seed: int = 0,
                  noise: float | None = None) -> LabeledSet:
    """Two Gaussian clouds at +/- separation * u, u = ones / sqrt(n0).

    ``noise`` is the per-coordinate std (default ``1/sqrt(n0)``, i.e. unit
    expected noise norm). Class +1 comes first. Columns are scaled so the
    largest has norm 1.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if not 0 < separation <= 1:
        raise ValueError("separation must be in (0, 1]")
    if noise is None:
        noise = 1.0 / np.sqrt(n0)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    u = np.full(n0, 1.0 / np.sqrt(n0))
    signs = np.concatenate([np.ones(per_class), -np.ones(per_class)])
    x = separation * u[:, None] * signs[None, :] + noise * rng.standard_normal((n0, 2 * per_class))
    classes = np.concatenate([np.zeros(per_class, dtype=np.int64), np.ones(per_class, dtype=np.int64)])
    return LabeledSet(_normalize_columns(x), signs[None, :], None, classes)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(buf: bytes, expected_magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(buf) < 4:
        raise DataFormatError(f"{what}: truncated at byte 0, need 4-byte magic, have {len(buf)} bytes")
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != expected_magic:
        raise DataFormatError(f"{what}: bad magic 0x{magic:08x} at byte 0, expected 0x{expected_magic:08x}")
    if len(buf) < header:
        raise DataFormatError(f"{what}: truncated header, need {header} bytes, have {len(buf)}")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header < count:
        raise DataFormatError(
            f"{what}: truncated payload at byte {len(buf)}, expected {count} bytes from offset {header}"
        )
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx_raw(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, "images")
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"count mismatch: images file has {images.shape[0]} items, labels file has {labels.shape[0]}"
        )
    return images, labels


def load_idx(images_path, labels_path) -> LabeledSet:
    """Read an IDX image/label pair (optionally gzipped).

    Pixels go to [0, 1], then every flattened image is divided by the largest
    column norm of the file so all inputs lie in the unit ball. ``labels``
    holds the raw digit; binarize with :func:`make_mini_binary`.
    """
    images, labels = read_idx_raw(images_path, labels_path)
    n = images.shape[0]
    x = images.reshape(n, -1).T.astype(np.float64) / 255.0
    return LabeledSet(_normalize_columns(x), labels.astype(np.float64)[None, :], None, labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise ValueError("need N x R x C images and N labels")
    head = struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape)
    lhead = struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0])
    for path, payload in ((images_path, head + images.tobytes()), (labels_path, lhead + labels.tobytes())):
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "wb") as f:
            f.write(payload)


def save_fwds(ds: LabeledSet, path) -> None:
    """FWDS container: b'FWDS', u32 n0, k, N (little-endian), then f64 inputs and labels column-major."""
    with open(path, "wb") as f:
        f.write(FWDS_MAGIC)
        f.write(struct.pack("<III", ds.n0, ds.k, ds.size))
        f.write(ds.inputs.T.astype("<f8").tobytes())
        f.write(ds.labels.T.astype("<f8").tobytes())


def load_fwds(path) -> LabeledSet:
    buf = Path(path).read_bytes()
    if buf[:4] != FWDS_MAGIC:
        raise DataFormatError(f"bad magic {buf[:4]!r} at byte 0, expected {FWDS_MAGIC!r}")
    if len(buf) < 16:
        raise DataFormatError(f"truncated header: {len(buf)} bytes, need 16")
    n0, k, n = struct.unpack_from("<III", buf, 4)
    need = 16 + 8 * n * (n0 + k)
    if len(buf) != need:
        raise DataFormatError(f"payload size mismatch: file has {len(buf)} bytes, header implies {need}")
    x = np.frombuffer(buf, dtype="<f8", count=n0 * n, offset=16).reshape(n, n0).T
    y = np.frombuffer(buf, dtype="<f8", count=k * n, offset=16 + 8 * n0 * n).reshape(n, k).T
    return LabeledSet(x.astype(np.float64), y.astype(np.float64))


def make_mini_binary(ds: LabeledSet, class_a: int, class_b: int, train_per_class: int = 50,
                     test_per_class: int = 10, seed: int = 0) -> tuple[LabeledSet, LabeledSet]:
    """Sample a balanced two-class task: class_a -> +1, class_b -> -1.

    Samples are drawn without replacement per class; train and test are
    disjoint. Within each split class_a samples come first.
    """
    if ds.classes is None:
        raise ValueError("dataset has no raw class labels")
    train_idx, test_idx, train_y, test_y = [], [], [], []
    for j, (cls, sign) in enumerate(((class_a, 1.0), (class_b, -1.0))):
        pool = np.flatnonzero(ds.classes == cls)
        need = train_per_class + test_per_class
        if len(pool) < need:
            raise ValueError(f"class {cls} has {len(pool)} samples, need {need}")
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))
        pick = rng.choice(pool, size=need, replace=False)
        train_idx.append(pick[:train_per_class])
        test_idx.append(pick[train_per_class:])
        train_y.append(np.full(train_per_class, sign))
        test_y.append(np.full(test_per_class, sign))

    def build(idx, y):
        idx = np.concatenate(idx)
        return LabeledSet(ds.inputs[:, idx], np.concatenate(y)[None, :], ds.source_ids[idx], ds.classes[idx])

    return build(train_idx, train_y), build(test_idx, test_y)


def _largest_remainder(props: np.ndarray, total: int) -> np.ndarray:
    raw = props * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    # ties broken by lower client index
    order = np.lexsort((np.arange(len(props)), -(raw - counts)))
    counts[order[:short]] += 1
    return counts


def partition_dirichlet(labels, M: int, alpha: float, seed: int = 0) -> Partition:
    """Per class, split that class's shuffled indices by Dirichlet(alpha) proportions.

    Clients left empty each take one sample from the currently largest client
    (its lowest class, then lowest index).
    """
    labels = np.asarray(labels)
    if M < 1:
        raise ValueError("M must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if len(labels) < M:
        raise ValueError(f"{len(labels)} samples cannot fill {M} clients")
    clients: list[list[int]] = [[] for _ in range(M)]
    for ci, cls in enumerate(np.unique(labels)):
        idx = np.flatnonzero(labels == cls)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ci,)))
        g = rng.gamma(alpha, 1.0, size=M)
        props = g / g.sum() if g.sum() > 0 else np.full(M, 1.0 / M)
        idx = rng.permutation(idx)
        counts = _largest_remainder(props, len(idx))
        start = 0
        for i, c in enumerate(counts):
            clients[i].extend(idx[start:start + c].tolist())
            start += c
    for i in range(M):
        if clients[i]:
            continue
        donor = max(range(M), key=lambda j: (len(clients[j]), -j))
        pool = sorted(clients[donor], key=lambda s: (labels[s], s))
        clients[donor].remove(pool[0])
        clients[i].append(pool[0])
    return Partition(tuple(np.array(sorted(c), dtype=np.intp) for c in clients))


def _even_split(idx: np.ndarray, parts: int) -> list[np.ndarray]:
    base, rem = divmod(len(idx), parts)
    out, start = [], 0
    for i in range(parts):
        size = base + (1 if i < rem else 0)
        out.append(idx[start:start + size])
        start += size
    return out


def partition_exclusive(labels, M: int) -> Partition:
    """First half of the clients share class A, the second half class B."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) != 2:
        raise ValueError(f"exclusive partition needs exactly 2 classes, got {len(classes)}")
    if M < 2 or M % 2:
        raise ValueError(f"exclusive partition needs an even number of clients, got M={M}")
    half = M // 2
    shards = []
    for cls in classes:
        idx = np.flatnonzero(labels == cls)
        if len(idx) < half:
            raise ValueError(f"class {cls} has {len(idx)} samples for {half} clients")
        shards.extend(_even_split(idx, half))
    return Partition(tuple(shards))


def partition_iid(n: int, M: int, seed: int = 0) -> Partition:
    """Uniform random shuffle split into M near-equal shards."""
    if n < M:
        raise ValueError(f"{n} samples cannot fill {M} clients")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    return Partition(tuple(_even_split(rng.permutation(n), M)))


def reorder_global(ds: LabeledSet, part: Partition) -> tuple[LabeledSet, Partition]:
    """Permute samples into client-block order; source_ids carry the permutation."""
    if part.total != ds.size:
        raise ValueError(f"partition covers {part.total} samples, set has {ds.size}")
    perm = np.concatenate(part.client_indices)
    sizes = part.sizes
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    new_part = Partition(tuple(np.arange(s, s + n) for s, n in zip(starts, sizes)))
    return ds.subset(perm), new_part


def split_clients(ds: LabeledSet, part: Partition) -> list[LabeledSet]:
    return [ds.subset(c) for c in part.client_indices]
