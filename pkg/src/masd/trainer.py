"""Training protocol: split construction, AdamW, and the fit loop.

Within-subject splits rotate whole blocks through five folds (3 test blocks
per fold, 2 validation and 10 training blocks from the rest), so trials from
one block never straddle partitions. Cross-subject splits hold one subject
out entirely and take a seeded eighth of every remaining subject for
validation. Augmentation is generated once before training and only from
training-partition trials.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .augment import NoiseConfig, NoiseDomain, augment_trial
from .dsp import EnvelopeTrial
from .loss import LossConfig, cross_entropy, info_nce
from .modality import EmbeddingTable
from .net import autodiff as ad
from .net.model import Model
from .seeding import derive_rng

N_FOLDS = 5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class SplitMode(enum.Enum):
    WITHIN_SUBJECT = "within"
    CROSS_SUBJECT = "cross"


@dataclass
class SplitPlan:
    mode: SplitMode
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    fold_index: int
    seed: int

    def validate(self, n_trials: int) -> None:
        parts = [self.train_idx, self.val_idx, self.test_idx]
        combined = np.concatenate(parts)
        if len(np.unique(combined)) != combined.size:
            raise ValueError("split partitions overlap")
        if combined.size != n_trials or set(combined.tolist()) != set(range(n_trials)):
            raise ValueError("split partitions do not cover all trials")


@dataclass
class TrainConfig:
    batch_size: int = 48
    lr: float = 1e-3
    weight_decay: float = 0.01
    max_epochs: int = 100
    patience: int = 50
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    augmentation: NoiseConfig | None = None
    noise_domain: NoiseDomain = NoiseDomain.TIME

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        self.loss.validate()
        if self.augmentation is not None:
            self.augmentation.validate()


def split_within(trials: list[EnvelopeTrial], fold: int, seed: int) -> SplitPlan:
    """Block-rotating five-fold split for one subject's trials.

    Fold f tests on blocks [f*nb/5, (f+1)*nb/5); of the remaining blocks a
    seeded shuffle assigns one sixth to validation and the rest to training
    (10:2:3 over 15 blocks).
    """
    if not 0 <= fold < N_FOLDS:
        raise ValueError(f"fold must be in [0, {N_FOLDS})")
    subjects = {t.subject for t in trials}
    if len(subjects) != 1:
        raise ValueError(f"within-subject split needs one subject, got {sorted(subjects)}")
    blocks = sorted({t.block for t in trials})
    if len(blocks) % N_FOLDS != 0:
        raise ValueError(f"{len(blocks)} blocks cannot rotate through {N_FOLDS} folds")
    per_fold = len(blocks) // N_FOLDS
    test_blocks = set(blocks[fold * per_fold : (fold + 1) * per_fold])
    rest = [b for b in blocks if b not in test_blocks]
    n_val = max(1, round(len(rest) / 6))
    rng = derive_rng(seed, 0x5B11, fold)
    shuffled = list(rng.permutation(rest))
    val_blocks = set(shuffled[:n_val])
    train_blocks = set(shuffled[n_val:])
    idx = {"train": [], "val": [], "test": []}
    for i, t in enumerate(trials):
        if t.block in test_blocks:
            idx["test"].append(i)
        elif t.block in val_blocks:
            idx["val"].append(i)
        else:
            idx["train"].append(i)
    plan = SplitPlan(
        mode=SplitMode.WITHIN_SUBJECT,
        train_idx=np.array(idx["train"], dtype=int),
        val_idx=np.array(idx["val"], dtype=int),
        test_idx=np.array(idx["test"], dtype=int),
        fold_index=fold,
        seed=seed,
    )
    plan.validate(len(trials))
    assert train_blocks | val_blocks | test_blocks == set(blocks)
    return plan


def split_cross(trials: list[EnvelopeTrial], held_out_subject: int, seed: int) -> SplitPlan:
    """Leave-one-subject-out split with a seeded 1/8 validation share.

    The held-out subject forms the test set; from every other subject an
    eighth of the trials go to validation and the rest to training.
    """
    subjects = sorted({t.subject for t in trials})
    if len(subjects) < 2:
        raise ValueError("cross-subject split needs >= 2 subjects")
    if held_out_subject not in subjects:
        raise ValueError(f"unknown subject id {held_out_subject}")
    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    for subj in subjects:
        their = [i for i, t in enumerate(trials) if t.subject == subj]
        if subj == held_out_subject:
            test.extend(their)
            continue
        rng = derive_rng(seed, 0x5B22, subj)
        perm = rng.permutation(len(their))
        n_val = len(their) // 8
        val.extend(their[i] for i in perm[:n_val])
        train.extend(their[i] for i in perm[n_val:])
    plan = SplitPlan(
        mode=SplitMode.CROSS_SUBJECT,
        train_idx=np.array(sorted(train), dtype=int),
        val_idx=np.array(sorted(val), dtype=int),
        test_idx=np.array(sorted(test), dtype=int),
        fold_index=held_out_subject,
        seed=seed,
    )
    plan.validate(len(trials))
    return plan


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Decay multiplies parameters by (1 - lr * weight_decay) before the
    bias-corrected moment update; it never passes through the gradients.
    """

    def __init__(self, params, lr: float = 1e-3, weight_decay: float = 0.01,
                 betas: tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {p.name or f'param {i}'}")
            if self.weight_decay != 0.0:
                p.data *= 1.0 - self.lr * self.weight_decay
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1**self.t)
            v_hat = self.v[i] / (1.0 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def optimizer_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: dict | None,
    lr: float,
    weight_decay: float,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> tuple[list[np.ndarray], dict]:
    """Functional AdamW update on raw arrays (same math as :class:`AdamW`)."""
    if state is None:
        state = {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}
    state["t"] += 1
    t = state["t"]
    b1, b2 = betas
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in param {i}")
        p = p * (1.0 - lr * weight_decay)
        state["m"][i] = b1 * state["m"][i] + (1.0 - b1) * g
        state["v"][i] = b2 * state["v"][i] + (1.0 - b2) * g * g
        m_hat = state["m"][i] / (1.0 - b1**t)
        v_hat = state["v"][i] / (1.0 - b2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return new_params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_top1: float


@dataclass
class FitResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    epochs_run: int
    train_source_indices: np.ndarray


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def _batch_losses(
    model: Model,
    x: np.ndarray,
    classes: np.ndarray,
    words: np.ndarray,
    cfg: TrainConfig,
    zt: np.ndarray | None,
    zs: np.ndarray | None,
):
    out = model.forward(x)
    total = cross_entropy(out.logits, classes)
    if zt is not None:
        total = total + cfg.loss.lambda_t * info_nce(out.features_text, zt[words], cfg.loss.tau)
    if zs is not None:
        total = total + cfg.loss.lambda_s * info_nce(out.features_speech, zs[words], cfg.loss.tau)
    return total, out


def _dataset_loss(model, data, classes, words, cfg, zt, zs) -> tuple[float, float]:
    """Eval-mode total loss and top-1 over a partition, batched like training."""
    model.eval()
    n = data.shape[0]
    loss_sum = 0.0
    hits = 0
    with ad.no_grad():
        for batch in _batches(n, cfg.batch_size):
            total, out = _batch_losses(model, data[batch], classes[batch], words[batch], cfg, zt, zs)
            loss_sum += total.item() * batch.size
            preds = metrics.predictions(out.logits.data)
            hits += int((preds == classes[batch]).sum())
    return loss_sum / n, hits / n


def fit(
    model: Model,
    split: SplitPlan,
    trials: list[EnvelopeTrial],
    cfg: TrainConfig,
    text_table: EmbeddingTable | None = None,
    speech_table: EmbeddingTable | None = None,
    class_of_word: np.ndarray | None = None,
) -> FitResult:
    """Train with early stopping on validation total loss; restores the best state.

    ``class_of_word`` maps word_id to the classification target (identity
    for the word task). Embedding tables are frozen; their rows are gathered
    by each trial's word_id for the contrastive terms.
    """
    cfg.validate()
    if split.train_idx.size == 0 or split.val_idx.size == 0:
        raise ValueError("empty train or validation partition")
    n_words = max(t.word_id for t in trials) + 1
    if class_of_word is None:
        class_of_word = np.arange(n_words)
    class_of_word = np.asarray(class_of_word, dtype=int)

    zt = zs = None
    f1, f2 = model.cfg.branch_dims
    if text_table is not None:
        if text_table.dim != f1:
            raise ValueError(f"text table dim {text_table.dim} != branch dim {f1}")
        zt = text_table.matrix()
        if zt.shape[0] < n_words:
            raise ValueError("text table does not cover all words")
    if speech_table is not None:
        if speech_table.dim != f2:
            raise ValueError(f"speech table dim {speech_table.dim} != branch dim {f2}")
        zs = speech_table.matrix()
        if zs.shape[0] < n_words:
            raise ValueError("speech table does not cover all words")

    train_trials = [trials[i] for i in split.train_idx]
    if cfg.augmentation is not None and cfg.augmentation.copies > 0:
        augmented: list[EnvelopeTrial] = []
        for j, src in zip(split.train_idx, train_trials):
            rng = derive_rng(cfg.seed, 0xA7, int(j))
            augmented.extend(augment_trial(src, cfg.augmentation, cfg.noise_domain, rng))
        train_trials = train_trials + augmented

    x_train = np.stack([t.data for t in train_trials])
    w_train = np.array([t.word_id for t in train_trials], dtype=int)
    y_train = class_of_word[w_train]
    x_val = np.stack([trials[i].data for i in split.val_idx])
    w_val = np.array([trials[i].word_id for i in split.val_idx], dtype=int)
    y_val = class_of_word[w_val]

    model.reseed_dropout(cfg.seed)
    opt = AdamW(model.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    history: list[EpochRecord] = []
    best_val = np.inf
    best_epoch = 0
    best_state = model.state_dict()
    epochs_without_improvement = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = derive_rng(cfg.seed, 0xE0, epoch).permutation(x_train.shape[0])
        model.train()
        train_loss_sum = 0.0
        for batch in _batches(x_train.shape[0], cfg.batch_size, order):
            model.zero_grad()
            total, _ = _batch_losses(model, x_train[batch], y_train[batch], w_train[batch], cfg, zt, zs)
            total.backward()
            opt.step()
            train_loss_sum += total.item() * batch.size
        train_loss = train_loss_sum / x_train.shape[0]
        val_loss, val_top1 = _dataset_loss(model, x_val, y_val, w_val, cfg, zt, zs)
        history.append(EpochRecord(epoch, train_loss, val_loss, val_top1))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = model.state_dict()
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= cfg.patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    return FitResult(
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        epochs_run=len(history),
        train_source_indices=np.array(sorted(set(split.train_idx.tolist())), dtype=int),
    )


def evaluate_split(
    model: Model,
    split: SplitPlan,
    trials: list[EnvelopeTrial],
    cfg: TrainConfig,
    class_of_word: np.ndarray | None = None,
    n_classes: int | None = None,
) -> dict:
    """Eval-mode test metrics for a trained model on the split's test set."""
    if split.test_idx.size == 0:
        raise ValueError("empty test partition")
    n_words = max(t.word_id for t in trials) + 1
    if class_of_word is None:
        class_of_word = np.arange(n_words)
    class_of_word = np.asarray(class_of_word, dtype=int)
    x = np.stack([trials[i].data for i in split.test_idx])
    y = class_of_word[np.array([trials[i].word_id for i in split.test_idx], dtype=int)]
    model.eval()
    logit_rows = []
    with ad.no_grad():
        for batch in _batches(x.shape[0], cfg.batch_size):
            logit_rows.append(model.forward_logits(x[batch]).data)
    logits = np.concatenate(logit_rows, axis=0)
    k_classes = n_classes or model.cfg.n_classes
    k5 = min(5, k_classes)
    preds = metrics.predictions(logits)
    return {
        "top1": metrics.topk_accuracy(logits, y, 1),
        "top5": metrics.topk_accuracy(logits, y, k5),
        "bca": metrics.bca(preds, y, k_classes),
        "n_test": int(x.shape[0]),
    }


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_top1"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss), repr(rec.val_top1)])
