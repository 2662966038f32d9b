"""Category and example prototype storage, cosine classification, k-means.

Prototypes are stored unnormalized (float64); normalization happens inside
the cosine similarity so gradients flow through it consistently.  All
tie-breaks resolve to the lowest index for determinism.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataCorruptionError,
    DataFormatError,
    MathDomainError,
    ParameterError,
    StateError,
    ValidationError,
)

BANK_MAGIC = b"IPTB"
BANK_VERSION = 1
_BANK_HEADER = struct.Struct("<4sHIII")  # magic, version, dim, class_count, n_e
_CLASS_HEADER = struct.Struct("<IIB")  # class_id, birth_phase, frozen


def cosine_sim(a, b) -> float:
    """Cosine similarity <a,b>/(|a||b|), in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise MathDomainError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


@dataclass
class PrototypeEntry:
    category: np.ndarray  # (dim,)
    examples: np.ndarray  # (n_e, dim), possibly n_e == 0
    birth_phase: int
    examples_frozen: bool = False


class PrototypeBank:
    """All category and example prototypes, keyed by class id.

    Mutations (add_class, freezing, trainer updates) need exclusive access;
    reads are safe under concurrent readers.
    """

    def __init__(self, dim: int):
        if dim <= 0:
            raise ValidationError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.classes: dict[int, PrototypeEntry] = {}

    @property
    def n_e(self) -> int | None:
        """Example prototypes per class; None until the first class is added."""
        for entry in self.classes.values():
            return entry.examples.shape[0]
        return None

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_ids(self) -> list[int]:
        return sorted(self.classes)

    def category_matrix(self, lo: int, hi: int) -> np.ndarray:
        """Stacked category prototypes for the contiguous id range [lo, hi)."""
        if hi <= lo:
            raise ParameterError(f"empty class range [{lo}, {hi})")
        rows = []
        for cid in range(lo, hi):
            if cid not in self.classes:
                raise StateError(f"class {cid} not in bank")
            rows.append(self.classes[cid].category)
        return np.ascontiguousarray(np.stack(rows))


def add_class(
    bank: PrototypeBank,
    class_id: int,
    category_init: np.ndarray,
    example_inits,
    phase: int,
) -> None:
    """Register a new class with its prototype initializations."""
    if class_id in bank.classes:
        raise StateError(f"class {class_id} already in bank")
    category = np.ascontiguousarray(category_init, dtype=np.float64)
    if category.shape != (bank.dim,):
        raise ValidationError(
            f"category prototype shape {category.shape} does not match dim {bank.dim}"
        )
    examples = np.asarray(example_inits, dtype=np.float64).reshape(-1, bank.dim).copy()
    expected = bank.n_e
    if expected is not None and examples.shape[0] != expected:
        raise ValidationError(
            f"class {class_id} has {examples.shape[0]} example prototypes, bank uses {expected}"
        )
    for mat in (category.reshape(1, -1), examples):
        if mat.size and (not np.all(np.isfinite(mat)) or np.any(~mat.any(axis=1))):
            raise ValidationError("prototypes must be finite and nonzero")
    bank.classes[class_id] = PrototypeEntry(category, examples, birth_phase=phase)


def freeze_examples_before(bank: PrototypeBank, phase: int) -> None:
    """Freeze example prototypes of every class born before `phase`."""
    for entry in bank.classes.values():
        entry.examples_frozen = entry.birth_phase < phase


def logits(bank: PrototypeBank, embedding, class_range: tuple[int, int]) -> np.ndarray:
    """Cosine similarities of one embedding to category prototypes in a range."""
    lo, hi = class_range
    cats = bank.category_matrix(lo, hi)
    x = np.asarray(embedding, dtype=np.float64)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        raise MathDomainError("zero embedding")
    sims = cats @ x / (np.linalg.norm(cats, axis=1) * nx)
    return sims


def predict(bank: PrototypeBank, embedding) -> int:
    """Most-similar class id over all known classes; lowest id wins ties."""
    if not bank.classes:
        raise StateError("empty bank")
    ids = bank.class_ids()
    sims = [
        cosine_sim(embedding, bank.classes[cid].category) for cid in ids
    ]
    return ids[int(np.argmax(sims))]


def predict_batch(bank: PrototypeBank, embeddings: np.ndarray) -> np.ndarray:
    """Vectorized predict over rows of `embeddings` (n, dim)."""
    if not bank.classes:
        raise StateError("empty bank")
    ids = np.asarray(bank.class_ids())
    cats = np.stack([bank.classes[int(c)].category for c in ids])
    cats = cats / np.linalg.norm(cats, axis=1, keepdims=True)
    x = np.asarray(embeddings, dtype=np.float64)
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    sims = x @ cats.T
    return ids[np.argmax(sims, axis=1)]


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    centers: np.ndarray  # (k, dim)
    assignment: np.ndarray  # (n,)
    sse: float
    sse_history: list[float] = field(default_factory=list)
    n_iters: int = 0


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.einsum("nd,nd->n", points - centers[0], points - centers[0])
    for i in range(1, k):
        idx = rng.choice(n, p=d2 / d2.sum())
        centers[i] = points[idx]
        new = np.einsum("nd,nd->n", points - centers[i], points - centers[i])
        d2 = np.minimum(d2, new)
    return centers


def kmeans(points, k: int, seed: int, max_iters: int = 100) -> KMeansResult:
    """Lloyd iterations with k-means++ seeding.

    Empty clusters are repaired by stealing the point farthest from its
    assigned center.  SSE is non-increasing across iterations and the loop
    stops once assignments are stable.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ParameterError("points must be a nonempty (n, dim) array")
    distinct = np.unique(pts, axis=0).shape[0]
    if k <= 0 or k > distinct:
        raise ParameterError(f"k={k} outside [1, {distinct}] (distinct points)")

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_seed(pts, k, rng)
    assignment = np.argmin(_sq_dists(pts, centers), axis=1)
    history: list[float] = []
    iters = 0
    for _ in range(max_iters):
        iters += 1
        # update step
        for j in range(k):
            mask = assignment == j
            if mask.any():
                centers[j] = pts[mask].mean(axis=0)
        # repair empty clusters
        empty = [j for j in range(k) if not (assignment == j).any()]
        if empty:
            d2 = _sq_dists(pts, centers)
            own = d2[np.arange(len(pts)), assignment].copy()
            for j in empty:
                far = int(np.argmax(own))
                centers[j] = pts[far]
                assignment[far] = j
                own[far] = 0.0
        d2 = _sq_dists(pts, centers)
        history.append(float(d2[np.arange(len(pts)), assignment].sum()))
        new_assignment = np.argmin(d2, axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    d2 = _sq_dists(pts, centers)
    sse = float(d2[np.arange(len(pts)), assignment].sum())
    return KMeansResult(centers, assignment, sse, history, iters)


def init_example_prototypes(class_embeddings, n_e: int, seed: int) -> np.ndarray:
    """K-means centers of a class's embeddings, unit-normalized, as (n_e, dim).

    When the class has fewer distinct embeddings than n_e, the distinct
    embeddings (first-occurrence order) are cycled until n_e vectors exist.
    """
    pts = np.asarray(class_embeddings, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ParameterError("class_embeddings must be a nonempty (n, dim) array")
    if n_e <= 0:
        raise ParameterError(f"n_e must be positive, got {n_e}")
    _, first_idx = np.unique(pts, axis=0, return_index=True)
    distinct = pts[np.sort(first_idx)]
    if distinct.shape[0] < n_e:
        reps = [distinct[i % distinct.shape[0]] for i in range(n_e)]
        centers = np.stack(reps)
    else:
        centers = kmeans(pts, n_e, seed).centers
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    # a center can only be ~zero if a cluster of unit vectors cancels exactly
    degenerate = norms[:, 0] < 1e-12
    if degenerate.any():
        centers[degenerate] = distinct[0]
        norms = np.linalg.norm(centers, axis=1, keepdims=True)
    return centers / norms


# ---------------------------------------------------------------------------
# checkpoint IO


def save_bank(bank: PrototypeBank, path) -> None:
    """Write the bank checkpoint (vectors as float64, little-endian)."""
    n_e = bank.n_e or 0
    chunks = [
        _BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.dim, bank.num_classes, n_e)
    ]
    for cid in bank.class_ids():
        entry = bank.classes[cid]
        chunks.append(_CLASS_HEADER.pack(cid, entry.birth_phase, int(entry.examples_frozen)))
        chunks.append(np.ascontiguousarray(entry.category, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(entry.examples, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_bank(path) -> PrototypeBank:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _BANK_HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, dim, class_count, n_e = _BANK_HEADER.unpack_from(blob, 0)
    if magic != BANK_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != BANK_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    off = _BANK_HEADER.size
    class_size = _CLASS_HEADER.size + 8 * dim * (1 + n_e)
    if len(blob) - off != class_count * class_size:
        raise DataCorruptionError(f"{path}: class count disagrees with payload length")
    bank = PrototypeBank(dim)
    for _ in range(class_count):
        cid, birth, frozen = _CLASS_HEADER.unpack_from(blob, off)
        off += _CLASS_HEADER.size
        category = np.frombuffer(blob, dtype="<f8", count=dim, offset=off).copy()
        off += 8 * dim
        examples = (
            np.frombuffer(blob, dtype="<f8", count=dim * n_e, offset=off)
            .reshape(n_e, dim)
            .copy()
        )
        off += 8 * dim * n_e
        add_class(bank, int(cid), category, examples, int(birth))
        bank.classes[int(cid)].examples_frozen = bool(frozen)
    return bank
