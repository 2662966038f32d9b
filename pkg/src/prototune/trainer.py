"""Per-phase three-stage training and the full incremental protocol loop.

Stage 1 initializes category prototypes (class-mean or provided vectors)
and example prototypes (k-means or random) for the phase's new classes and
freezes example prototypes born earlier.  Stage 2 runs minibatch SGD on
the combined loss.  Stage 3 is an extension hook for tuning additional
backbone-side parameters and defaults to a no-op.

All class ids inside the bank are *ordered* ids: positions in the
schedule's class order.  Original dataset labels are remapped on entry.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .embedset import EmbeddingDataset, PhaseSchedule, phase_data
from .errors import ContractError, ScheduleError, ValidationError
from .losses import SoftmaxHead, total_loss
from .optim import OptimizerConfig, SgdState, clip_gradients, lr_at_epoch, sgd_step
from .protobank import (
    PrototypeBank,
    add_class,
    freeze_examples_before,
    init_example_prototypes,
    predict_batch,
)

CATEGORY_INIT_MODES = ("class-mean", "provided-vectors")
EXAMPLE_INIT_MODES = ("kmeans", "random")


@dataclass
class TrainConfig:
    n_e: int = 10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    head: SoftmaxHead = field(default_factory=SoftmaxHead)
    msl_or_asl: str | None = "msl"
    enable_cep: bool = True
    freeze_old_categories: bool = False
    category_init: str = "class-mean"
    example_init: str = "kmeans"
    seed: int = 0
    provided_category_vectors: np.ndarray | None = None  # indexed by original class id

    def __post_init__(self):
        if self.n_e < 0:
            raise ValidationError(f"n_e must be nonnegative, got {self.n_e}")
        if self.n_e == 0:
            # baseline mode: no example prototypes, hence no CEP and no MSL/ASL
            self.enable_cep = False
            self.msl_or_asl = None
        if self.msl_or_asl not in (None, "msl", "asl"):
            raise ValidationError(f"msl_or_asl must be 'msl', 'asl', or None")
        if self.category_init not in CATEGORY_INIT_MODES:
            raise ValidationError(f"category_init must be one of {CATEGORY_INIT_MODES}")
        if self.example_init not in EXAMPLE_INIT_MODES:
            raise ValidationError(f"example_init must be one of {EXAMPLE_INIT_MODES}")
        if self.category_init == "provided-vectors" and self.provided_category_vectors is None:
            raise ValidationError("provided-vectors init needs provided_category_vectors")


@dataclass
class PhaseResult:
    phase: int
    accuracy: float
    phase0_accuracy: float
    wall_time: float


def _child_seed(*key: int) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def _remap_labels(records, schedule: PhaseSchedule) -> np.ndarray:
    pos = schedule._positions
    return np.asarray([pos[r.label] for r in records], dtype=np.int64)


def run_phase(
    bank: PrototypeBank,
    train_records,
    schedule: PhaseSchedule,
    t: int,
    config: TrainConfig,
    pat_stage=None,
) -> None:
    """Train phase t in place on `bank` using only the phase's own records."""
    lo, hi = schedule.phase_range(t)
    if bank.class_ids() != list(range(lo)):
        raise ContractError(
            f"bank must contain exactly the classes of phases before {t} (ids 0..{lo - 1})"
        )
    labels = _remap_labels(train_records, schedule)
    if len(labels) == 0:
        raise ContractError(f"phase {t} received no records")
    if labels.min() < lo or labels.max() >= hi:
        raise ContractError(f"phase {t} records carry classes outside [{lo}, {hi})")
    x_all = np.ascontiguousarray(
        np.stack([np.asarray(r.vector, dtype=np.float64) for r in train_records])
    )

    # stage 1: initialization
    for cid in range(lo, hi):
        class_x = x_all[labels == cid]
        if config.category_init == "provided-vectors":
            original = schedule.class_order[cid]
            category = np.asarray(
                config.provided_category_vectors[original], dtype=np.float64
            )
        else:
            category = class_x.mean(axis=0)
            category = category / np.linalg.norm(category)
        if config.n_e > 0:
            if config.example_init == "kmeans":
                examples = init_example_prototypes(
                    class_x, config.n_e, seed=_child_seed(config.seed, t, 1, cid)
                )
            else:
                rng = np.random.default_rng(_child_seed(config.seed, t, 2, cid))
                examples = rng.standard_normal((config.n_e, bank.dim))
                examples /= np.linalg.norm(examples, axis=1, keepdims=True)
        else:
            examples = np.empty((0, bank.dim))
        add_class(bank, cid, category, examples, phase=t)
    freeze_examples_before(bank, t)

    # stage 2: prototype training
    opt = config.optimizer
    params: dict = {}
    cat_lo = lo if config.freeze_old_categories else 0
    for cid in range(cat_lo, hi):
        params[("cat", cid)] = bank.classes[cid].category
    for cid in range(lo, hi):
        for j in range(config.n_e):
            params[("ex", cid, j)] = bank.classes[cid].examples[j]
    state = SgdState()
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, t, 0)))
    n = len(train_records)
    for epoch in range(opt.epochs_prototype_stage):
        lr = lr_at_epoch(opt, epoch)
        perm = rng.permutation(n)
        for start in range(0, n, opt.batch_size):
            idx = perm[start : start + opt.batch_size]
            batch = (x_all[idx], labels[idx])
            out = total_loss(
                batch,
                bank,
                (lo, hi),
                config.head,
                enable_cep=config.enable_cep,
                sim_loss=config.msl_or_asl,
                freeze_old_categories=config.freeze_old_categories,
            )
            grads = clip_gradients(out.grads, opt.clip_max_norm)
            sgd_step(params, grads, state, lr, opt)

    # stage 3: additional-parameter tuning hook (no-op by default)
    if pat_stage is not None:
        pat_stage(bank=bank, records=train_records, schedule=schedule, phase=t, config=config)


def run_protocol(
    dataset: EmbeddingDataset,
    schedule: PhaseSchedule,
    config: TrainConfig,
    pat_stage=None,
    phase_callback=None,
) -> "metrics.RunReport":
    """Run all phases, evaluating over all seen classes after each one.

    `phase_callback(t, bank)` fires after each phase's training+evaluation,
    for checkpointing or instrumentation.
    """
    if schedule.num_classes != dataset.num_classes:
        raise ScheduleError(
            f"schedule covers {schedule.num_classes} classes, dataset has {dataset.num_classes}"
        )
    bank = PrototypeBank(dataset.dim)
    test_x = np.ascontiguousarray(
        np.stack([np.asarray(r.vector, dtype=np.float64) for r in dataset.test_records])
    )
    test_labels = _remap_labels(dataset.test_records, schedule)
    phase0_hi = schedule.boundaries[1]

    phase_results: list[PhaseResult] = []
    final_predictions = None
    for t in range(schedule.num_phases):
        records = phase_data(dataset, schedule, t, "train")
        start = time.perf_counter()
        run_phase(bank, records, schedule, t, config, pat_stage=pat_stage)
        wall = time.perf_counter() - start
        _, hi = schedule.phase_range(t)
        seen = test_labels < hi
        predictions = predict_batch(bank, test_x[seen])
        truth = test_labels[seen]
        acc = metrics.accuracy(predictions, truth)
        p0_mask = truth < phase0_hi
        p0_acc = metrics.accuracy(predictions[p0_mask], truth[p0_mask])
        phase_results.append(PhaseResult(t, acc, p0_acc, wall))
        if t == schedule.num_phases - 1:
            final_predictions = predictions
        if phase_callback is not None:
            phase_callback(t, bank)

    return metrics.build_report(
        phase_results=phase_results,
        final_predictions=final_predictions,
        final_labels=test_labels,
        num_classes=dataset.num_classes,
        schedule=schedule,
        config=config,
        bank=bank,
    )


def config_to_dict(config: TrainConfig) -> dict:
    """JSON-ready echo of a TrainConfig (deterministic key order handled by dumps)."""
    return {
        "n_e": config.n_e,
        "msl_or_asl": config.msl_or_asl,
        "enable_cep": config.enable_cep,
        "freeze_old_categories": config.freeze_old_categories,
        "category_init": config.category_init,
        "example_init": config.example_init,
        "seed": config.seed,
        "temperature": config.head.temperature,
        "optimizer": {
            "base_lr": config.optimizer.base_lr,
            "momentum": config.optimizer.momentum,
            "weight_decay": config.optimizer.weight_decay,
            "decay_epochs": list(config.optimizer.decay_epochs),
            "decay_factor": config.optimizer.decay_factor,
            "clip_max_norm": config.optimizer.clip_max_norm,
            "epochs_prototype_stage": config.optimizer.epochs_prototype_stage,
            "batch_size": config.optimizer.batch_size,
        },
    }
