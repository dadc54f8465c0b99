"""Full-batch transductive training: compose the classification loss with the
two contrastive losses, refresh pseudo-labels every epoch, early-stop on
validation macro-F1, and evaluate accuracy / macro-F1."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import ShortGCLError
from . import numerics as nm
from .contrastive import (
    POOL_VIEW,
    PseudoLabelAssignment,
    build_pseudo_labels,
    ccl_loss,
    dump_assignments,
    icl_loss,
)
from .graphs import InfoGraph, ProjectionMatrix
from .ingest import CorpusBundle
from .model import (
    FINAL_LINEAR,
    ModelParams,
    active_sources,
    forward_all,
    init_params,
    predict,
)
from .numerics import AdamState, Tensor, adam_step, backward, zero_grads

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12

HISTORY_COLUMNS = ("epoch", "ce", "icl", "ccl", "total", "val_acc", "val_macro_f1")


class TrainError(ShortGCLError):
    """Training aborted (non-finite loss, inconsistent inputs)."""


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-2
    tau: float = 0.5
    eta: float = 1.0
    zeta: float = 1.0
    patience: int = 30
    seed: int = 0
    hidden: int = 64
    use_word: bool = True
    use_pos: bool = True
    use_entity: bool = True
    use_icl: bool = True
    use_ccl: bool = True
    parallel_mode: bool = False
    final_activation: str = FINAL_LINEAR
    ccl_mean_positives: bool = False
    ccl_pool: str = POOL_VIEW
    val_metric: str = "macro_f1"

    def validate(self) -> None:
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        if self.patience < 1:
            raise TrainError("patience must be >= 1")
        if self.tau <= 0:
            raise TrainError("tau must be > 0")
        if self.eta < 0 or self.zeta < 0:
            raise TrainError("loss weights must be >= 0")
        if self.val_metric not in ("macro_f1", "accuracy"):
            raise TrainError(f"unknown validation metric {self.val_metric!r}")

    def ablation_flags(self) -> dict[str, bool]:
        return {"word": self.use_word, "pos": self.use_pos, "entity": self.use_entity}

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    per_class_f1: np.ndarray

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_f1": [float(v) for v in self.per_class_f1],
        }


@dataclass
class EpochRecord:
    epoch: int
    ce: float
    icl: float
    ccl: float
    total: float
    val_acc: float
    val_macro_f1: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    best_metric: float
    wall_seconds: float = 0.0


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def ce_loss(q: Tensor, labels: np.ndarray, train_rows: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over the training rows, log floored at
    1e-12. ``labels`` is per-row with -1 marking unlabeled rows."""
    train_rows = np.asarray(train_rows, dtype=np.intp)
    if train_rows.size == 0:
        raise TrainError("training set is empty")
    gold = labels[train_rows]
    if np.any(gold < 0):
        missing = train_rows[gold < 0]
        raise TrainError(f"training row {int(missing[0])} has no label")
    n_classes = q.data.shape[1]
    if np.any(gold >= n_classes):
        raise TrainError("label out of range for class count")

    picked = nm.gather_rows(q, train_rows)
    onehot = np.zeros((train_rows.size, n_classes))
    onehot[np.arange(train_rows.size), gold] = 1.0
    logs = nm.mul(nm.log(picked, floor=LOG_FLOOR), nm.constant(onehot))
    return nm.scale(nm.sum_all(logs), -1.0 / train_rows.size)


def total_loss(
    ce: Tensor, icl: Tensor | None, ccl: Tensor | None, eta: float, zeta: float
) -> Tensor:
    """Weighted sum of the enabled terms; disabled terms simply drop out."""
    total = ce
    if icl is not None:
        total = nm.add(total, nm.scale(icl, eta))
    if ccl is not None:
        total = nm.add(total, nm.scale(ccl, zeta))
    return total


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def macro_f1(preds: np.ndarray, gold: np.ndarray, num_classes: int) -> tuple[float, np.ndarray]:
    """Unweighted mean of per-class F1; zero-denominator cases score 0."""
    preds = np.asarray(preds)
    gold = np.asarray(gold)
    if preds.shape != gold.shape:
        raise ValueError("preds and gold must have the same length")
    per_class = np.zeros(num_classes)
    for cls in range(num_classes):
        tp = int(np.sum((preds == cls) & (gold == cls)))
        fp = int(np.sum((preds == cls) & (gold != cls)))
        fn = int(np.sum((preds != cls) & (gold == cls)))
        denom = 2 * tp + fp + fn
        per_class[cls] = (2 * tp / denom) if denom > 0 else 0.0
    return float(per_class.mean()), per_class


def _split_rows_and_gold(
    bundle: CorpusBundle, split: str
) -> tuple[np.ndarray, np.ndarray]:
    if split not in bundle.splits:
        raise ValueError(f"unknown split {split!r}")
    ids = bundle.splits[split]
    if not ids:
        raise TrainError(f"split {split!r} is empty")
    row_of = bundle.row_index()
    rows, gold = [], []
    for d in bundle.originals:
        if d.doc_id in ids and d.label is not None:
            rows.append(row_of[d.doc_id])
            gold.append(d.label)
    if not rows:
        raise TrainError(f"split {split!r} has no labeled documents")
    return np.array(rows, dtype=np.intp), np.array(gold, dtype=np.int64)


def metrics_for_split(
    q: np.ndarray, bundle: CorpusBundle, split: str
) -> Metrics:
    rows, gold = _split_rows_and_gold(bundle, split)
    preds = predict(q[rows])
    acc = float(np.mean(preds == gold))
    f1, per_class = macro_f1(preds, gold, bundle.num_classes)
    return Metrics(accuracy=acc, macro_f1=f1, per_class_f1=per_class)


def evaluate(
    params: ModelParams,
    bundle: CorpusBundle,
    graphs: dict[str, InfoGraph],
    projections: dict[str, ProjectionMatrix],
    split: str,
) -> Metrics:
    """Transductive inference: every view was encoded all along, so this is
    one forward pass plus argmax over the split's original-view rows."""
    outputs = forward_all(graphs, projections, params)
    return metrics_for_split(outputs.q.data, bundle, split)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _row_labels(bundle: CorpusBundle, masked_ids: set[int]) -> np.ndarray:
    """Per-row labels with -1 for augmented rows, unlabeled docs, and any doc
    in ``masked_ids``. The trainer masks everything outside the train split so
    test labels are unreadable on the training path."""
    labels = np.full(len(bundle.documents), -1, dtype=np.int64)
    for row, d in enumerate(bundle.documents):
        if d.view == "original" and d.label is not None and d.doc_id not in masked_ids:
            labels[row] = d.label
    return labels


def train(
    bundle: CorpusBundle,
    graphs: dict[str, InfoGraph],
    projections: dict[str, ProjectionMatrix],
    config: TrainConfig,
    pseudo_dump_dir: str | None = None,
) -> TrainResult:
    """Train with per-epoch pseudo-label refresh and early stopping.

    Hierarchical mode chains instance loss on the normalized joint embedding,
    cluster loss on the projected space, and cross-entropy on the class head;
    parallel mode branches the heads side by side. Returns the checkpoint
    with the best validation metric (ties keep the earliest epoch).
    """
    config.validate()
    started = time.perf_counter()

    if not bundle.is_augmented():
        raise TrainError("bundle must be augmented before training")
    if not bundle.splits["train"]:
        raise TrainError("bundle must be split before training")

    n_orig = bundle.num_originals
    n_rows = len(bundle.documents)
    pairing = np.concatenate([np.arange(n_orig) + n_orig, np.arange(n_orig)])

    sources = active_sources(graphs, config.ablation_flags())
    params = init_params(
        graphs,
        sources,
        hidden=config.hidden,
        num_classes=bundle.num_classes,
        seed=config.seed,
        parallel=config.parallel_mode,
        final_activation=config.final_activation,
    )
    state = AdamState(params.tensors())

    row_of = bundle.row_index()
    train_rows = np.array(sorted(row_of[i] for i in bundle.splits["train"]), dtype=np.intp)
    masked = {d.doc_id for d in bundle.originals} - bundle.splits["train"]
    labels = _row_labels(bundle, masked)
    org_ids = [d.doc_id for d in bundle.originals]
    aug_ids = [d.doc_id for d in bundle.augmented]

    history: list[EpochRecord] = []
    best_metric = -np.inf
    best_epoch = -1
    best_values: dict[str, np.ndarray] | None = None
    bad_epochs = 0

    for epoch in range(1, config.epochs + 1):
        outputs = forward_all(graphs, projections, params)

        icl = None
        if config.use_icl:
            icl = icl_loss(outputs.z_norm, pairing, config.tau)

        ccl = None
        if config.use_ccl:
            z_detached = outputs.z_norm.data
            assignment = PseudoLabelAssignment(
                org=build_pseudo_labels(z_detached[:n_orig], "org"),
                aug=build_pseudo_labels(z_detached[n_orig:], "aug"),
            )
            if pseudo_dump_dir is not None:
                dump_assignments(
                    os.path.join(pseudo_dump_dir, f"pseudo_labels_epoch{epoch:04d}.tsv"),
                    org_ids,
                    aug_ids,
                    assignment,
                )
            u_org = nm.gather_rows(outputs.u_norm, np.arange(n_orig))
            u_aug = nm.gather_rows(outputs.u_norm, np.arange(n_orig, n_rows))
            ccl = ccl_loss(
                u_org,
                u_aug,
                assignment.org.indicator,
                assignment.aug.indicator,
                config.tau,
                mean_positives=config.ccl_mean_positives,
                pool=config.ccl_pool,
            )

        ce = ce_loss(outputs.q, labels, train_rows)
        total = total_loss(ce, icl, ccl, config.eta, config.zeta)

        ce_v = ce.item()
        icl_v = icl.item() if icl is not None else 0.0
        ccl_v = ccl.item() if ccl is not None else 0.0
        total_v = total.item()
        if not np.isfinite(total_v):
            parts = {"ce": ce_v, "icl": icl_v, "ccl": ccl_v}
            bad = [k for k, v in parts.items() if not np.isfinite(v)]
            raise TrainError(f"non-finite loss at epoch {epoch}: {', '.join(bad) or 'total'}")

        tensors = params.tensors()
        zero_grads(tensors.values())
        backward(total)
        grads = {k: t.grad for k, t in tensors.items() if t.grad is not None}
        adam_step(tensors, grads, state, lr=config.lr)

        val_metrics = evaluate(params, bundle, graphs, projections, "validation")
        history.append(
            EpochRecord(
                epoch=epoch,
                ce=ce_v,
                icl=icl_v,
                ccl=ccl_v,
                total=total_v,
                val_acc=val_metrics.accuracy,
                val_macro_f1=val_metrics.macro_f1,
            )
        )

        score = val_metrics.macro_f1 if config.val_metric == "macro_f1" else val_metrics.accuracy
        if score > best_metric:
            best_metric = score
            best_epoch = epoch
            best_values = params.copy_values()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                break

    assert best_values is not None
    params.load_values(best_values)
    return TrainResult(
        params=params,
        history=history,
        best_epoch=best_epoch,
        best_metric=best_metric,
        wall_seconds=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# history persistence
# ---------------------------------------------------------------------------

def save_history(history: list[EpochRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow(
                [rec.epoch, repr(rec.ce), repr(rec.icl), repr(rec.ccl),
                 repr(rec.total), repr(rec.val_acc), repr(rec.val_macro_f1)]
            )


def load_history(path: str) -> list[EpochRecord]:
    out: list[EpochRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != HISTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected history columns {header}")
        for row in reader:
            out.append(
                EpochRecord(
                    epoch=int(row[0]),
                    ce=float(row[1]),
                    icl=float(row[2]),
                    ccl=float(row[3]),
                    total=float(row[4]),
                    val_acc=float(row[5]),
                    val_macro_f1=float(row[6]),
                )
            )
    return out
