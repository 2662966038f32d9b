"""Embedding datasets, incremental phase schedules, and the binary file format.

File format (little-endian, one file per split):

    magic   4 bytes  b"IPTE"
    version u16      currently 1
    dim     u32      embedding dimensionality
    classes u32      number of class names
    records u64      number of records in this file
    names   classes * (u16 length + UTF-8 bytes)
    records records * (u32 label + dim * f32)

Train and test splits live in separate files sharing dim and class names.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DataCorruptionError,
    DataFormatError,
    ParameterError,
    ScheduleError,
    ValidationError,
)

MAGIC = b"IPTE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIQ")  # magic, version, dim, class_count, record_count

PHI = "PHI"
PNI = "PNI"


@dataclass
class EmbeddingRecord:
    """One labeled embedding vector. Vectors are float32, matching the file."""

    label: int
    vector: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.vector, other.vector)


@dataclass
class EmbeddingDataset:
    """A labeled embedding dataset with train/test splits.

    Immutable after construction by convention; nothing in the engine
    mutates records in place.  ``meta`` carries generator diagnostics
    (synthetic datasets only) and takes no part in equality or file IO.
    """

    dim: int
    class_names: list[str]
    train_records: list[EmbeddingRecord]
    test_records: list[EmbeddingRecord]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValidationError(f"dim must be positive, got {self.dim}")
        for split, records in (("train", self.train_records), ("test", self.test_records)):
            _validate_records(records, self.dim, len(self.class_names), split)
            present = {r.label for r in records}
            missing = set(range(len(self.class_names))) - present
            if missing:
                raise ValidationError(f"classes {sorted(missing)} missing from {split} split")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.class_names == other.class_names
            and self.train_records == other.train_records
            and self.test_records == other.test_records
        )


def _validate_records(records: Sequence[EmbeddingRecord], dim: int, num_classes: int, where: str):
    for i, rec in enumerate(records):
        if rec.vector.shape != (dim,):
            raise ValidationError(
                f"{where} record {i}: vector shape {rec.vector.shape} does not match dim {dim}"
            )
        if not np.all(np.isfinite(rec.vector)):
            raise ValidationError(f"{where} record {i}: non-finite entries")
        if not np.any(rec.vector):
            raise ValidationError(f"{where} record {i}: zero vector")
        if not 0 <= rec.label < num_classes:
            raise ValidationError(
                f"{where} record {i}: label {rec.label} outside [0, {num_classes})"
            )


# ---------------------------------------------------------------------------
# binary IO


def write_split(path, dim: int, class_names: Sequence[str], records: Sequence[EmbeddingRecord]):
    """Write one split to `path` in the binary format above. Deterministic bytes."""
    _validate_records(records, dim, len(class_names), "split")
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, dim, len(class_names), len(records))]
    for name in class_names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError(f"class name too long: {name!r}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
    for rec in records:
        chunks.append(struct.pack("<I", rec.label))
        chunks.append(np.ascontiguousarray(rec.vector, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def read_split(path) -> tuple[int, list[str], list[EmbeddingRecord]]:
    """Read one split file; returns (dim, class_names, records)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, dim, class_count, record_count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    names = []
    for _ in range(class_count):
        if off + 2 > len(blob):
            raise DataCorruptionError(f"{path}: truncated class-name table")
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + nlen > len(blob):
            raise DataCorruptionError(f"{path}: truncated class-name table")
        names.append(blob[off : off + nlen].decode("utf-8"))
        off += nlen
    rec_size = 4 + 4 * dim
    if len(blob) - off != record_count * rec_size:
        raise DataCorruptionError(
            f"{path}: record count {record_count} disagrees with payload "
            f"({len(blob) - off} bytes, expected {record_count * rec_size})"
        )
    records = []
    for _ in range(record_count):
        (label,) = struct.unpack_from("<I", blob, off)
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=off + 4).copy()
        records.append(EmbeddingRecord(int(label), vec))
        off += rec_size
    _validate_records(records, dim, class_count, str(path))
    return dim, names, records


def save_dataset(dataset: EmbeddingDataset, train_path, test_path):
    """Save both splits; byte output is a pure function of the dataset."""
    write_split(train_path, dataset.dim, dataset.class_names, dataset.train_records)
    write_split(test_path, dataset.dim, dataset.class_names, dataset.test_records)


def load_dataset(train_path, test_path) -> EmbeddingDataset:
    """Load train and test split files into one dataset."""
    dim, names, train = read_split(train_path)
    dim2, names2, test = read_split(test_path)
    if dim != dim2 or names != names2:
        raise ValidationError(
            f"train/test headers disagree: dim {dim} vs {dim2}, names match={names == names2}"
        )
    return EmbeddingDataset(dim, names, train, test)


# ---------------------------------------------------------------------------
# phase schedule


@dataclass(frozen=True)
class PhaseSchedule:
    """Class ordering and per-phase class-count boundaries.

    ``boundaries`` holds the full fencepost list starting at 0 and ending at
    the total class count; phase t covers ordered class ids
    [boundaries[t], boundaries[t+1]).
    """

    protocol: str
    num_incremental_phases: int
    class_order: tuple[int, ...]
    boundaries: tuple[int, ...]

    def __post_init__(self):
        if self.boundaries[0] != 0:
            raise ScheduleError("boundaries must start at 0")
        if list(self.boundaries) != sorted(set(self.boundaries)):
            raise ScheduleError("boundaries must be strictly increasing")
        if self.boundaries[-1] != len(self.class_order):
            raise ScheduleError("last boundary must equal total class count")
        if sorted(self.class_order) != list(range(len(self.class_order))):
            raise ScheduleError("class_order must be a permutation of class ids")

    @property
    def num_phases(self) -> int:
        return len(self.boundaries) - 1

    @property
    def num_classes(self) -> int:
        return len(self.class_order)

    def seen_before(self, t: int) -> int:
        """Number of classes learned before phase t."""
        return self.boundaries[t]

    def phase_range(self, t: int) -> tuple[int, int]:
        """Ordered class-id range [lo, hi) taught at phase t."""
        if not 0 <= t < self.num_phases:
            raise IndexError(f"phase {t} out of range [0, {self.num_phases})")
        return self.boundaries[t], self.boundaries[t + 1]

    def position_of(self, original_label: int) -> int:
        """Ordered id of an original class label."""
        return self._positions[original_label]

    @property
    def _positions(self) -> np.ndarray:
        pos = getattr(self, "_positions_cache", None)
        if pos is None:
            pos = np.empty(len(self.class_order), dtype=np.int64)
            pos[np.asarray(self.class_order)] = np.arange(len(self.class_order))
            object.__setattr__(self, "_positions_cache", pos)
        return pos


def make_schedule(
    num_classes: int,
    protocol: str,
    num_incremental_phases: int,
    class_order=None,
) -> PhaseSchedule:
    """Build a PHI or PNI schedule.

    ``class_order`` may be an explicit permutation, an int seed for a uniform
    shuffle, or None for the identity order.
    """
    if num_classes <= 0 or num_incremental_phases <= 0:
        raise ScheduleError("num_classes and num_incremental_phases must be positive")
    if protocol == PHI:
        if num_classes % 2 != 0:
            raise ScheduleError(f"PHI needs an even class count, got {num_classes}")
        half = num_classes // 2
        if half % num_incremental_phases != 0:
            raise ScheduleError(
                f"PHI: {half} remaining classes not divisible by {num_incremental_phases} phases"
            )
        step = half // num_incremental_phases
        boundaries = (0, half) + tuple(
            half + step * (i + 1) for i in range(num_incremental_phases)
        )
    elif protocol == PNI:
        if num_classes % num_incremental_phases != 0:
            raise ScheduleError(
                f"PNI: {num_classes} classes not divisible by {num_incremental_phases} phases"
            )
        step = num_classes // num_incremental_phases
        boundaries = tuple(step * i for i in range(num_incremental_phases + 1))
    else:
        raise ScheduleError(f"unknown protocol {protocol!r}")

    if class_order is None:
        order = tuple(range(num_classes))
    elif isinstance(class_order, (int, np.integer)):
        order = tuple(
            int(c) for c in np.random.default_rng(int(class_order)).permutation(num_classes)
        )
    else:
        order = tuple(int(c) for c in class_order)
        if sorted(order) != list(range(num_classes)):
            raise ScheduleError("class_order is not a permutation of class ids")
    return PhaseSchedule(protocol, num_incremental_phases, order, boundaries)


def phase_data(
    dataset: EmbeddingDataset, schedule: PhaseSchedule, t: int, split: str
) -> list[EmbeddingRecord]:
    """Records whose class, under the schedule's order, falls in phase t."""
    lo, hi = schedule.phase_range(t)
    records = _split_records(dataset, split)
    pos = schedule._positions
    return [r for r in records if lo <= pos[r.label] < hi]


def seen_data(
    dataset: EmbeddingDataset, schedule: PhaseSchedule, t: int, split: str
) -> list[EmbeddingRecord]:
    """Records of every class seen up to and including phase t."""
    _, hi = schedule.phase_range(t)
    records = _split_records(dataset, split)
    pos = schedule._positions
    return [r for r in records if pos[r.label] < hi]


def _split_records(dataset: EmbeddingDataset, split: str) -> list[EmbeddingRecord]:
    if split == "train":
        return dataset.train_records
    if split == "test":
        return dataset.test_records
    raise ParameterError(f"split must be 'train' or 'test', got {split!r}")


# ---------------------------------------------------------------------------
# synthetic data


def gen_synthetic(
    num_classes: int,
    dim: int,
    per_class_train: int,
    per_class_test: int,
    modes_per_class: int,
    center_scale: float,
    spread: float,
    seed: int,
) -> EmbeddingDataset:
    """Generate a unit-normalized Gaussian-mixture embedding dataset.

    Each class is a mixture of ``modes_per_class`` blobs around unit mode
    centers scaled by ``center_scale``; samples get isotropic noise of scale
    ``spread`` and are then normalized onto the unit sphere.  The output is a
    pure function of the arguments.  ``meta`` records, per class, the largest
    cosine between its mode centers and any other class's mode centers, to
    calibrate how confusable the classes are.
    """
    if num_classes <= 0 or dim <= 0 or per_class_train <= 0 or per_class_test <= 0:
        raise ParameterError("counts and dim must be positive")
    if modes_per_class <= 0:
        raise ParameterError("modes_per_class must be positive")
    if spread <= 0:
        raise ParameterError(f"spread must be positive, got {spread}")

    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, modes_per_class, dim))
    centers /= np.linalg.norm(centers, axis=2, keepdims=True)
    centers *= center_scale

    def draw(count: int, cls: int) -> list[EmbeddingRecord]:
        out = []
        for i in range(count):
            mode = centers[cls, i % modes_per_class]
            vec = mode + spread * rng.standard_normal(dim)
            norm = np.linalg.norm(vec)
            if norm < 1e-12:  # measure-zero; retry deterministically
                vec = mode
                norm = np.linalg.norm(vec)
            out.append(EmbeddingRecord(cls, (vec / norm).astype(np.float32)))
        return out

    train, test = [], []
    for cls in range(num_classes):
        train.extend(draw(per_class_train, cls))
    for cls in range(num_classes):
        test.extend(draw(per_class_test, cls))

    flat = centers.reshape(num_classes * modes_per_class, dim)
    flat = flat / np.linalg.norm(flat, axis=1, keepdims=True)
    sims = flat @ flat.T
    nearest = []
    for cls in range(num_classes):
        rows = slice(cls * modes_per_class, (cls + 1) * modes_per_class)
        block = sims[rows].copy()
        block[:, rows] = -np.inf  # mask own class
        nearest.append(float(block.max()))
    width = len(str(num_classes - 1))
    names = [f"class_{c:0{width}d}" for c in range(num_classes)]
    meta = {
        "seed": seed,
        "center_scale": center_scale,
        "spread": spread,
        "modes_per_class": modes_per_class,
        "nearest_other_class_cosine": nearest,
        "min_inter_class_cosine": float(min(nearest)),
        "max_inter_class_cosine": float(max(nearest)),
    }
    return EmbeddingDataset(dim, names, train, test, meta=meta)
