"""Semi-supervised training state machine and the variant registry.

One trainer covers nine variants:

* ``baseline``       supervised on the labeled split only
* ``self_training``  pseudo-labels confident unlabeled samples once per epoch
* ``pi``             consistency vs. a second stochastic forward pass
* ``te``             consistency vs. per-sample temporal-ensemble targets
* ``mt``             consistency vs. an EMA-weight teacher model
* ``fc_mt``          mt plus direct feature-consistency regularization
* ``src_pi/src_te/src_mt``  the above consistency variants plus the
  batch-relation consistency loss

The student is optimized with Adam (implemented here from its update
rule); the teacher, where one exists, changes only through the EMA
update, applied once per optimization step. The unsupervised weight
follows the Gaussian ramp exp(-5 (1 - t/T)^2) over the first T epochs,
then stays at 1. Everything is deterministic given the config seed:
every random draw comes from a substream keyed on
(seed, purpose, epoch, batch, ...), so recomputation or extra reads
never shift unrelated draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import losses, metrics, models
from . import tensor as T
from .data import Batch, BatchPlan, Dataset, Splits, UnlabeledView, epoch_batches
from .errors import ConfigError, ContractError, DimensionError
from .models import ArchSpec, Params
from .perturb import PerturbConfig, perturb_pair, substream

VARIANTS = ("baseline", "self_training", "pi", "te", "mt", "fc_mt",
            "src_pi", "src_te", "src_mt")

_CONSISTENCY = frozenset({"pi", "te", "mt", "fc_mt", "src_pi", "src_te", "src_mt"})
_EMA_TEACHER = frozenset({"mt", "fc_mt", "src_mt"})
_RELATION = frozenset({"src_pi", "src_te", "src_mt"})

# substream purpose tags
_TAG_INIT = 0
_TAG_BATCH = 1
_TAG_PERTURB = 2
_TAG_DROPOUT = 3


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "src_mt"
    alpha: float = 0.99                 # EMA decay of the teacher weights
    beta: float = 1.0                   # weight of the relation/feature term
    ramp_epochs: int = 30
    total_epochs: int = 60
    batch_labeled: int = 12
    batch_unlabeled: int = 36
    learning_rate: float = 1e-4
    lr_decay_power: float = 0.9
    pseudo_label_threshold: float = 0.9
    te_ensemble_rate: float = 0.99
    seed: int = 0
    feature_tap: str = "post_pool"
    teacher_dropout: bool = True
    relation_eps: float = losses.DEFAULT_ROW_NORM_EPS
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    perturb: PerturbConfig = field(default_factory=PerturbConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError("alpha must be in [0, 1)")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.ramp_epochs < 1 or self.total_epochs < 1:
            raise ConfigError("epoch counts must be >= 1")
        if self.ramp_epochs > self.total_epochs:
            raise ConfigError("ramp_epochs must not exceed total_epochs")
        if self.batch_labeled < 1 or self.batch_unlabeled < 0:
            raise ConfigError("batch sizes must be >= 1 labeled / >= 0 unlabeled")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 < self.pseudo_label_threshold < 1.0:
            raise ConfigError("pseudo_label_threshold must be in (0, 1)")
        if not 0.0 <= self.te_ensemble_rate < 1.0:
            raise ConfigError("te_ensemble_rate must be in [0, 1)")
        if self.feature_tap not in ("post_pool", "pre_pool"):
            raise ConfigError("feature_tap must be 'post_pool' or 'pre_pool'")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    @property
    def plan(self) -> BatchPlan:
        if self.variant == "baseline":
            return BatchPlan(self.batch_labeled, 0)
        if self.variant == "self_training":
            # pseudo-labeled samples join the supervised pool: full batch, all labeled
            return BatchPlan(self.batch_labeled + self.batch_unlabeled, 0)
        return BatchPlan(self.batch_labeled, self.batch_unlabeled)


@dataclass
class LossBreakdown:
    supervised: float
    consistency: float
    relation: float
    ramp_weight: float
    relation_weight: float
    total: float


@dataclass
class CurvePoint:
    epoch: int
    loss_supervised: float
    loss_consistency: float
    loss_relation: float
    ramp_weight: float
    learning_rate: float
    val_auc: float
    val_accuracy: float


@dataclass
class TemporalStore:
    """Per-sample running average of predictions, indexed by sample id."""

    ensemble: dict[int, np.ndarray] = field(default_factory=dict)
    update_counts: dict[int, int] = field(default_factory=dict)
    pending: dict[int, np.ndarray] = field(default_factory=dict)

    def target_for(self, sample_id: int, rate: float) -> np.ndarray | None:
        t = self.update_counts.get(sample_id, 0)
        if t == 0:
            return None
        return self.ensemble[sample_id] / (1.0 - rate ** t)

    def record(self, sample_id: int, prediction: np.ndarray) -> None:
        self.pending[sample_id] = prediction.copy()

    def apply_epoch_update(self, rate: float) -> None:
        for sid in sorted(self.pending):
            pred = self.pending[sid]
            old = self.ensemble.get(sid)
            self.ensemble[sid] = (1.0 - rate) * pred if old is None \
                else rate * old + (1.0 - rate) * pred
            self.update_counts[sid] = self.update_counts.get(sid, 0) + 1
        self.pending = {}


@dataclass
class TrainerState:
    config: TrainConfig
    arch: ArchSpec
    student: Params
    teacher: Params | None
    class_weights: np.ndarray
    multilabel: bool
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_steps: int = 0
    epoch: int = 0
    temporal: TemporalStore | None = None
    pseudo: tuple[np.ndarray, np.ndarray] | None = None  # (unlabeled rows, hard labels)


@dataclass
class RunResult:
    test_metrics: metrics.MetricsReport
    curves: list[CurvePoint]
    state: TrainerState
    relation_dumps: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# schedule and update primitives


def lambda_rampup(t: float, ramp_epochs: int) -> float:
    """Gaussian warm-up exp(-5 (1 - t/T)^2) on [0, T], exactly 1 afterwards."""
    if ramp_epochs < 1:
        raise ContractError("ramp_epochs must be >= 1")
    if t < 0:
        raise ContractError("t must be >= 0")
    if t >= ramp_epochs:
        return 1.0
    frac = t / ramp_epochs
    return math.exp(-5.0 * (1.0 - frac) ** 2)


def learning_rate_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Polynomial decay: lr0 * (1 - epoch/total)^power, applied per epoch."""
    return cfg.learning_rate * (1.0 - epoch / cfg.total_epochs) ** cfg.lr_decay_power


def ema_update(teacher: Params, student: Params, alpha: float) -> Params:
    """teacher <- alpha * teacher + (1 - alpha) * student, elementwise."""
    if teacher.keys() != student.keys():
        raise ContractError("teacher and student parameter names differ")
    out: Params = {}
    for name, t_val in teacher.items():
        s_val = student[name]
        if t_val.shape != s_val.shape:
            raise ContractError(f"shape mismatch for {name}: {t_val.shape} vs {s_val.shape}")
        out[name] = alpha * t_val + (1.0 - alpha) * s_val
    return out


def combine_losses(supervised: T.Tensor, consistency: T.Tensor | None,
                   relation: T.Tensor | None, ramp_weight: float,
                   relation_weight: float,
                   measured_relation: float = 0.0) -> tuple[T.Tensor, LossBreakdown]:
    """Total objective: supervised + ramp * (consistency + weight * relation).

    ``relation`` must be None when relation_weight is 0: the term is then
    skipped entirely rather than multiplied by zero. ``measured_relation``
    lets callers log a relation value computed outside the objective.
    """
    if relation is not None and relation_weight == 0.0:
        raise ContractError("relation term must be skipped, not zero-weighted")
    total = supervised
    cons_value = 0.0
    rel_value = measured_relation
    if consistency is not None:
        unsup = consistency
        if relation is not None:
            unsup = T.add(unsup, T.scale(relation, relation_weight))
            rel_value = relation.item()
        total = T.add(total, T.scale(unsup, ramp_weight))
        cons_value = consistency.item()
    return total, LossBreakdown(
        supervised=supervised.item(), consistency=cons_value, relation=rel_value,
        ramp_weight=ramp_weight, relation_weight=relation_weight, total=total.item())


def pseudo_label_select(probs: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Samples whose top probability strictly exceeds the threshold, with
    their argmax label (ties resolve to the lowest class index)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise DimensionError(f"probs must be [B, K], got {probs.shape}")
    out = []
    for i in range(probs.shape[0]):
        top = int(np.argmax(probs[i]))
        if probs[i, top] > threshold:
            out.append((i, top))
    return out


def te_target_update(ensemble: np.ndarray, epoch_preds: np.ndarray, rate: float,
                     t: int) -> tuple[np.ndarray, np.ndarray]:
    """One temporal-ensembling update on aligned arrays.

    ensemble <- rate * ensemble + (1 - rate) * epoch_preds; the returned
    targets are startup-bias corrected by 1/(1 - rate**t), where t >= 1
    counts the updates applied so far (including this one).
    """
    ensemble = np.asarray(ensemble, dtype=np.float64)
    epoch_preds = np.asarray(epoch_preds, dtype=np.float64)
    if ensemble.shape != epoch_preds.shape:
        raise ContractError("ensemble store and epoch predictions must align")
    if t < 1:
        raise ContractError("update count t must be >= 1")
    new_ensemble = rate * ensemble + (1.0 - rate) * epoch_preds
    return new_ensemble, new_ensemble / (1.0 - rate ** t)


# ---------------------------------------------------------------------------
# trainer


def init_trainer(cfg: TrainConfig, arch: ArchSpec, labeled: Dataset) -> TrainerState:
    if len(labeled) == 0:
        raise ConfigError("labeled split is empty; every variant needs supervision")
    student = models.init_params(arch, substream(cfg.seed, _TAG_INIT))
    teacher = {k: v.copy() for k, v in student.items()} if cfg.variant in _EMA_TEACHER else None
    weights = losses.inverse_frequency_weights(labeled.labels, arch.num_classes)
    return TrainerState(
        config=cfg, arch=arch, student=student, teacher=teacher,
        class_weights=weights, multilabel=labeled.multilabel,
        adam_m={k: np.zeros_like(v) for k, v in student.items()},
        adam_v={k: np.zeros_like(v) for k, v in student.items()},
        temporal=TemporalStore() if cfg.variant in ("te", "src_te") else None,
    )


def _adam_step(state: TrainerState, grads: dict[str, np.ndarray], lr: float) -> None:
    cfg = state.config
    state.adam_steps += 1
    t = state.adam_steps
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, p in state.student.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.adam_m[name] = b1 * state.adam_m[name] + (1 - b1) * g
        v = state.adam_v[name] = b2 * state.adam_v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        state.student[name] = p - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _probs_node(logits: T.Tensor, multilabel: bool) -> T.Tensor:
    return T.sigmoid(logits) if multilabel else T.softmax(logits)


def predict_probs(arch: ArchSpec, params: Params, x: np.ndarray, multilabel: bool,
                  chunk: int = 256) -> np.ndarray:
    """Deterministic eval-mode probabilities, computed in chunks."""
    outs = []
    for start in range(0, x.shape[0], chunk):
        fwd = models.forward(arch, params, x[start:start + chunk], mode="eval",
                             trainable=False)
        outs.append(_probs_node(fwd.logits, multilabel).data)
    return np.concatenate(outs, axis=0)


def eval_model_params(state: TrainerState) -> Params:
    """Parameters used for prediction: the EMA teacher when one exists."""
    return state.teacher if state.teacher is not None else state.student


def _target_view_output(state: TrainerState, view: np.ndarray,
                        dropout_rng: np.random.Generator) -> models.ForwardOutput:
    """Forward pass producing the consistency-target side (never trainable).

    Uses the EMA teacher's weights when the variant has one, otherwise a
    second stochastic pass through the student's weights.
    """
    cfg = state.config
    params = state.teacher if state.teacher is not None else state.student
    mode = "train" if cfg.teacher_dropout else "eval"
    return models.forward(state.arch, params, view, mode=mode,
                          rng=dropout_rng, trainable=False)


def _train_step(state: TrainerState, batch: Batch, epoch: int, batch_idx: int,
                ramp_weight: float, lr: float,
                probe: Callable[[dict], None] | None = None) -> LossBreakdown:
    """One optimization step; returns the loss breakdown for logging."""
    cfg = state.config
    variant = cfg.variant
    x = batch.inputs
    ids = batch.sample_ids
    n_lab = batch.n_labeled
    b = x.shape[0]

    step_key = (cfg.seed, _TAG_PERTURB, epoch, batch_idx)
    view_s, view_t, _ = perturb_pair(x, cfg.perturb, step_key, sample_ids=ids)

    out_s = models.forward(
        state.arch, state.student, view_s, mode="train",
        rng=substream(cfg.seed, _TAG_DROPOUT, epoch, batch_idx, 0), trainable=True)
    probs_s = _probs_node(out_s.logits, state.multilabel)

    lab_logits = out_s.logits if n_lab == b else T.slice_rows(out_s.logits, 0, n_lab)
    supervised = losses.weighted_cross_entropy(lab_logits, batch.y_labeled,
                                               state.class_weights)

    consistency = None
    relation = None
    measured = 0.0
    out_t = None
    feat_s_values = feat_t_values = None

    if variant in _CONSISTENCY:
        teacher_rng = substream(cfg.seed, _TAG_DROPOUT, epoch, batch_idx, 1)
        if variant in ("te", "src_te"):
            targets = np.zeros(probs_s.shape)
            mask = np.zeros(probs_s.shape)
            for i, sid in enumerate(ids):
                tgt = state.temporal.target_for(int(sid), cfg.te_ensemble_rate)
                if tgt is not None:
                    targets[i] = tgt
                    mask[i] = 1.0
            diff = T.mul(T.sub(probs_s, T.constant(targets)), T.constant(mask))
            consistency = T.scale(T.frobenius_sq(diff), 1.0 / b)
            if variant == "src_te":
                out_t = _target_view_output(state, view_t, teacher_rng)
        else:
            out_t = _target_view_output(state, view_t, teacher_rng)
            probs_t = _probs_node(out_t.logits, state.multilabel)
            consistency = losses.consistency_mse(probs_s, probs_t.data)

        if out_t is not None and b >= 2:
            feat_s = models.tap_features(out_s, cfg.feature_tap)
            feat_s_values = feat_s.data
            feat_t_values = models.tap_features(out_t, cfg.feature_tap).data
            if variant in _RELATION and cfg.beta > 0.0:
                relation = losses.src_loss(feat_s, feat_t_values, eps=cfg.relation_eps)
            elif variant == "fc_mt" and cfg.beta > 0.0:
                relation = losses.feature_consistency_loss(feat_s, feat_t_values)
            else:
                measured = losses.src_loss(T.constant(feat_s_values), feat_t_values,
                                           eps=cfg.relation_eps).item()

        if state.temporal is not None:
            for i, sid in enumerate(ids):
                state.temporal.record(int(sid), probs_s.data[i])

    total, breakdown = combine_losses(supervised, consistency, relation,
                                      ramp_weight, cfg.beta, measured)
    grads = T.backward(total)
    _adam_step(state, grads, lr)
    if state.teacher is not None:
        state.teacher = ema_update(state.teacher, state.student, cfg.alpha)

    if probe is not None:
        probe({
            "epoch": epoch, "batch": batch_idx, "breakdown": breakdown,
            "probs_student": probs_s.data,
            "probs_teacher": None if out_t is None else _probs_node(
                out_t.logits, state.multilabel).data,
            "features_student": feat_s_values,
            "features_teacher": feat_t_values,
        })
    return breakdown


def _pseudo_label_pass(state: TrainerState, unlabeled: UnlabeledView) -> None:
    """Refresh pseudo-labels from the model of the previous epoch."""
    if len(unlabeled) == 0:
        state.pseudo = None
        return
    probs = predict_probs(state.arch, state.student, unlabeled.read(), state.multilabel)
    selected = pseudo_label_select(probs, state.config.pseudo_label_threshold)
    if not selected:
        state.pseudo = None
        return
    rows = np.array([i for i, _ in selected], dtype=int)
    labels = np.array([y for _, y in selected], dtype=int)
    state.pseudo = (rows, labels)


def _self_training_pool(state: TrainerState, splits: Splits) -> Dataset:
    labeled = splits.labeled
    if state.pseudo is None:
        return labeled
    rows, labels = state.pseudo
    extra_inputs = splits.unlabeled.read(rows)
    return Dataset(
        np.concatenate([labeled.inputs, extra_inputs], axis=0),
        np.concatenate([labeled.labels, labels]),
        labeled.kind, labeled.num_classes,
        ids=np.concatenate([labeled.ids, splits.unlabeled.ids[rows]]),
    )


def train_epoch(state: TrainerState, splits: Splits,
                probe: Callable[[dict], None] | None = None) -> CurvePoint:
    """Run one epoch (state is advanced in place) and return its curve point."""
    cfg = state.config
    epoch = state.epoch
    ramp_weight = lambda_rampup(epoch, cfg.ramp_epochs)
    lr = learning_rate_for_epoch(cfg, epoch)
    batch_rng = substream(cfg.seed, _TAG_BATCH, epoch)

    if cfg.variant == "self_training":
        if epoch > 0:
            _pseudo_label_pass(state, splits.unlabeled)
        pool = _self_training_pool(state, splits)
        batches = epoch_batches(pool, None, cfg.plan, batch_rng)
    elif cfg.variant == "baseline":
        batches = epoch_batches(splits.labeled, None, cfg.plan, batch_rng)
    else:
        batches = epoch_batches(splits.labeled, splits.unlabeled, cfg.plan, batch_rng)

    sums = np.zeros(3)
    for batch_idx, batch in enumerate(batches):
        bd = _train_step(state, batch, epoch, batch_idx, ramp_weight, lr, probe)
        sums += (bd.supervised, bd.consistency, bd.relation)
    means = sums / max(1, len(batches))

    if state.temporal is not None:
        state.temporal.apply_epoch_update(cfg.te_ensemble_rate)

    probs_val = predict_probs(state.arch, eval_model_params(state),
                              splits.validation.inputs, state.multilabel)
    val_report = metrics.classification_report(probs_val, splits.validation.labels)
    state.epoch += 1
    return CurvePoint(
        epoch=epoch, loss_supervised=float(means[0]), loss_consistency=float(means[1]),
        loss_relation=float(means[2]), ramp_weight=ramp_weight, learning_rate=lr,
        val_auc=val_report.auc, val_accuracy=val_report.accuracy)


def run_variant(cfg: TrainConfig, arch: ArchSpec, splits: Splits,
                relation_dump_epochs: tuple[int, ...] = (),
                probe: Callable[[dict], None] | None = None) -> RunResult:
    """Train one variant to completion and evaluate on the test split."""
    state = init_trainer(cfg, arch, splits.labeled)
    dumps: dict[int, dict[str, np.ndarray]] = {}
    dump_epochs = set(relation_dump_epochs)

    def dump_probe(info: dict) -> None:
        if probe is not None:
            probe(info)
        if info["epoch"] in dump_epochs and info["batch"] == 0 \
                and info["features_student"] is not None:
            r_s = losses.relation_matrix(T.constant(info["features_student"]),
                                         cfg.relation_eps).data
            r_t = losses.relation_matrix(T.constant(info["features_teacher"]),
                                         cfg.relation_eps).data
            dumps[info["epoch"]] = {
                "student": r_s, "teacher": r_t,
                "distance": losses.distance_matrix(r_s, r_t),
            }

    curves = [train_epoch(state, splits, dump_probe) for _ in range(cfg.total_epochs)]
    probs_test = predict_probs(state.arch, eval_model_params(state),
                               splits.test.inputs, state.multilabel)
    report = metrics.classification_report(probs_test, splits.test.labels)
    return RunResult(test_metrics=report, curves=curves, state=state,
                     relation_dumps=dumps)
