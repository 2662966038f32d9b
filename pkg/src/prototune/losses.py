"""The three incremental-prototype loss terms plus the average-similarity ablation.

All losses are computed over cosine similarities with analytic gradients
with respect to the trainable prototypes; embeddings are constants (the
representation backbone is frozen).  Gradient maps are sparse: an entry
exists only for parameters that are trainable and in scope for the term.

Parameter ids: ("cat", class_id) for category prototypes and
("ex", class_id, j) for the j-th example prototype of a class.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .embedset import EmbeddingRecord
from .errors import ContractError, ParameterError, StateError, ValidationError
from .protobank import PrototypeBank

ParamKey = tuple


@dataclass
class SoftmaxHead:
    """Similarity-to-probability head: softmax over temperature * cosine.

    Cosine logits live in [-1, 1]; the default temperature of 16 makes the
    softmax expressive enough to fit.  Temperature 1 recovers the plain
    softmax used by the analytic unit-test values.
    """

    temperature: float = 16.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")


@dataclass
class LossOutput:
    value: float
    grads: dict[ParamKey, np.ndarray] = field(default_factory=dict)


def _merge(outputs: list[LossOutput]) -> LossOutput:
    total = LossOutput(0.0, {})
    for out in outputs:
        total.value += out.value
        for key, g in out.grads.items():
            if key in total.grads:
                total.grads[key] = total.grads[key] + g
            else:
                total.grads[key] = g
    return total


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    """Accepts a list of EmbeddingRecord or a prebuilt (X, labels) pair."""
    if isinstance(batch, tuple):
        x, labels = batch
        return np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.int64)
    if len(batch) == 0:
        raise ParameterError("empty batch")
    x = np.stack([np.asarray(r.vector, dtype=np.float64) for r in batch])
    labels = np.asarray([r.label for r in batch], dtype=np.int64)
    return x, labels


def l_ces(batch, bank: PrototypeBank, phase_range: tuple[int, int], head: SoftmaxHead) -> LossOutput:
    """Sample-classification cross-entropy over current-phase classes only.

    Softmax runs over temperature-scaled cosine similarities to the
    category prototypes of the current phase; gradients land on those
    prototypes only.
    """
    lo, hi = phase_range
    x, labels = _batch_arrays(batch)
    if labels.min() < lo or labels.max() >= hi:
        raise ContractError(f"batch labels outside phase range [{lo}, {hi})")
    cats = bank.category_matrix(lo, hi)
    loss, dcats, _ = kernels.ce_cosine_fb(
        np.ascontiguousarray(x), cats, np.ascontiguousarray(labels - lo), head.temperature, False
    )
    grads = {("cat", cid): dcats[cid - lo] for cid in range(lo, hi)}
    return LossOutput(loss, grads)


def l_cep(
    bank: PrototypeBank,
    current_phase_range: tuple[int, int],
    head: SoftmaxHead,
    freeze_old_categories: bool = False,
) -> LossOutput:
    """Example-classification cross-entropy, mean over all (class, example) pairs.

    Every seen class contributes its example prototypes, making the term
    class-balanced by construction; the softmax runs over all seen category
    prototypes.  Frozen example prototypes contribute to the value but get
    no gradient; old category prototypes get gradients unless
    `freeze_old_categories`.
    """
    if not bank.classes:
        raise StateError("empty bank")
    ids = bank.class_ids()
    n_e = bank.n_e or 0
    if n_e == 0:
        return LossOutput(0.0, {})
    lo, hi = current_phase_range
    ex = np.ascontiguousarray(
        np.stack([bank.classes[cid].examples for cid in ids])
    )  # (C, n_e, d)
    x = ex.reshape(len(ids) * n_e, bank.dim)
    owners = np.repeat(np.arange(len(ids), dtype=np.int64), n_e)
    cats = np.ascontiguousarray(np.stack([bank.classes[cid].category for cid in ids]))
    loss, dcats, dx = kernels.ce_cosine_fb(
        np.ascontiguousarray(x), cats, owners, head.temperature, True
    )
    grads: dict[ParamKey, np.ndarray] = {}
    for pos, cid in enumerate(ids):
        if freeze_old_categories and not lo <= cid < hi:
            continue
        grads[("cat", cid)] = dcats[pos]
    dx = dx.reshape(len(ids), n_e, bank.dim)
    for pos, cid in enumerate(ids):
        if not lo <= cid < hi or bank.classes[cid].examples_frozen:
            continue
        for j in range(n_e):
            grads[("ex", cid, j)] = dx[pos, j]
    return LossOutput(loss, grads)


def _example_sim_loss(batch, bank: PrototypeBank, use_max: bool) -> LossOutput:
    x, labels = _batch_arrays(batch)
    present = sorted(set(int(c) for c in labels))
    for cid in present:
        if cid not in bank.classes:
            raise StateError(f"class {cid} not in bank")
        if bank.classes[cid].examples.shape[0] == 0:
            raise StateError(f"class {cid} has no example prototypes")
    block_index = {cid: m for m, cid in enumerate(present)}
    ex = np.ascontiguousarray(np.stack([bank.classes[cid].examples for cid in present]))
    block_of = np.asarray([block_index[int(c)] for c in labels], dtype=np.int64)
    loss, dex = kernels.sim_loss_fb(np.ascontiguousarray(x), block_of, ex, use_max)
    grads: dict[ParamKey, np.ndarray] = {}
    for cid in present:
        if bank.classes[cid].examples_frozen:
            continue
        for j in range(ex.shape[1]):
            grads[("ex", cid, j)] = dex[block_index[cid], j]
    return LossOutput(loss, grads)


def l_ms(batch, bank: PrototypeBank) -> LossOutput:
    """Maximum similarity loss: mean of 1 - best example-prototype cosine.

    Per sample, gradient flows only to the argmax example prototype of the
    sample's own class (lowest j on ties); category prototypes get none.
    """
    return _example_sim_loss(batch, bank, use_max=True)


def l_as(batch, bank: PrototypeBank) -> LossOutput:
    """Average similarity loss: mean of 1 - mean example-prototype cosine."""
    return _example_sim_loss(batch, bank, use_max=False)


def total_loss(
    batch,
    bank: PrototypeBank,
    phase_range: tuple[int, int],
    head: SoftmaxHead,
    *,
    enable_ces: bool = True,
    enable_cep: bool = True,
    sim_loss: str | None = "msl",
    freeze_old_categories: bool = False,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> LossOutput:
    """Unweighted sum of the enabled loss terms (weights overridable for experiments)."""
    parts = []
    if enable_ces:
        parts.append(_scale(l_ces(batch, bank, phase_range, head), weights[0]))
    if enable_cep:
        parts.append(
            _scale(l_cep(bank, phase_range, head, freeze_old_categories), weights[1])
        )
    if sim_loss is not None:
        if sim_loss == "msl":
            parts.append(_scale(l_ms(batch, bank), weights[2]))
        elif sim_loss == "asl":
            parts.append(_scale(l_as(batch, bank), weights[2]))
        else:
            raise ParameterError(f"sim_loss must be 'msl', 'asl', or None, got {sim_loss!r}")
    return _merge(parts)


def _scale(out: LossOutput, w: float) -> LossOutput:
    if w == 1.0:
        return out
    return LossOutput(w * out.value, {k: w * g for k, g in out.grads.items()})
