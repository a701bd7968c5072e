"""Mini-batch Adam training of interpolation policies by backpropagation through time."""
from __future__ import annotations

import csv
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core import NumericalError, RtiError, SplineConfig, ValidationError
from .policy import PARAM_TYPES, MyopicParams, ParametrizedParams, init_rnn
from .rti import unroll

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"parametrized": 200, "rnn": 400}
DEFAULT_LR = {"parametrized": 0.05, "rnn": 0.005}
REPORT_COLUMNS = ("epoch", "train_mean", "train_std", "val_mean", "val_std", "lr", "seconds")


class EmptyDataset(RtiError, ValueError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class DegenerateBaseline(RtiError, ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    kind: str
    spline: SplineConfig = SplineConfig(3, 1)
    epochs: int | None = None
    batch_size: int = 32
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    lr_halving_period: int = 50
    seed: int = 0
    rnn_lambda_raw: float = -3.0

    def __post_init__(self):
        if self.kind not in PARAM_TYPES:
            raise ValidationError(f"unknown policy kind {self.kind!r}")
        if self.epochs is not None and self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.lr is not None and not self.lr > 0:
            raise ValidationError("learning rate must be positive")
        if self.lr_halving_period < 1:
            raise ValidationError("lr_halving_period must be at least 1")

    @property
    def n_epochs(self) -> int:
        return DEFAULT_EPOCHS.get(self.kind, 0) if self.epochs is None else self.epochs

    @property
    def base_lr(self) -> float:
        return DEFAULT_LR.get(self.kind, 0.0) if self.lr is None else self.lr

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during 1-based ``epoch``."""
        return self.base_lr * 0.5 ** ((epoch - 1) // self.lr_halving_period)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=float)
        if g.shape != np.shape(p):
            raise ValidationError(f"gradient shape {g.shape} does not match parameter {k!r}")
        if weight_decay:
            g = g + weight_decay * p
        m = beta1 * state.m[k] + (1 - beta1) * g
        v = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_mean: float
    train_std: float
    val_mean: float
    val_std: float
    lr: float
    seconds: float


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    wall_time: float = 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in REPORT_COLUMNS[1:]])


@dataclass(frozen=True)
class EvalResult:
    losses: np.ndarray
    mean: float
    std: float


def _summary(losses) -> tuple[float, float]:
    losses = np.asarray(losses, dtype=float)
    std = float(np.std(losses, ddof=1)) if len(losses) > 1 else 0.0
    return float(np.mean(losses)), std


def _groups(seqs, order):
    """Indices of ``order`` grouped by sequence length (unroll needs equal lengths)."""
    by_len = defaultdict(list)
    for i in order:
        by_len[len(seqs[i])].append(i)
    return list(by_len.values())


def sequence_losses(seqs, cfg: SplineConfig, params, order=None):
    """Per-sequence mean curvature for ``seqs[order]``; tracked if ``params`` hold Vars."""
    order = list(range(len(seqs))) if order is None else list(order)
    parts, idx = [], []
    for grp in _groups(seqs, order):
        x = np.stack([seqs[i].x for i in grp])
        y = np.stack([seqs[i].y for i in grp])
        e = np.stack([seqs[i].eps for i in grp])
        parts.append(unroll(x, y, e, cfg, params))
        idx += grp
    pos = {i: k for k, i in enumerate(idx)}
    losses = ad.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    return ad.getitem(losses, np.array([pos[i] for i in order]))


def evaluate(seqs, cfg: SplineConfig, params) -> EvalResult:
    if not len(seqs):
        raise EmptyDataset("nothing to evaluate")
    losses = np.asarray(sequence_losses(seqs, cfg, params), dtype=float)
    return EvalResult(losses, *_summary(losses))


def loss_and_grad(seqs, cfg: SplineConfig, kind: str, arrays: dict, order=None, reduction: str = "mean"):
    """Batch loss and its gradient with respect to every entry of ``arrays``."""
    tape = ad.Tape()
    names = list(arrays)
    leaves = [tape.var(np.asarray(arrays[k], dtype=float), k) for k in names]
    params = PARAM_TYPES[kind].from_arrays(dict(zip(names, leaves)))
    per_seq = sequence_losses(seqs, cfg, params, order)
    loss = ad.mean(per_seq) if reduction == "mean" else ad.sum(per_seq)
    grads = ad.backward(loss, leaves)
    return float(ad.value(loss)), np.asarray(ad.value(per_seq)), dict(zip(names, grads))


def initial_params(tcfg: TrainConfig):
    if tcfg.kind == "myopic":
        return MyopicParams()
    if tcfg.kind == "parametrized":
        return ParametrizedParams()
    rng = np.random.default_rng(np.random.SeedSequence(tcfg.seed).spawn(2)[0])
    return init_rnn(tcfg.spline, rng, lambda_raw=tcfg.rnn_lambda_raw)


def train(train_seqs, val_seqs, tcfg: TrainConfig, init=None, progress=None):
    """Fit a policy on standardized sequences; return ``(best_params, TrainReport)``.

    The parameters with the lowest validation mean loss are returned, the
    initial parameters (epoch 0) included.
    """
    if not len(train_seqs) or not len(val_seqs):
        raise EmptyDataset("training and validation splits must be nonempty")
    cfg = tcfg.spline
    cls = PARAM_TYPES[tcfg.kind]
    params = initial_params(tcfg) if init is None else init
    report = TrainReport()
    start = time.perf_counter()

    tr0, va0 = evaluate(train_seqs, cfg, params), evaluate(val_seqs, cfg, params)
    report.rows.append(EpochRow(0, tr0.mean, tr0.std, va0.mean, va0.std, 0.0, 0.0))
    best, report.best_val = params, va0.mean
    if tcfg.kind == "myopic":
        report.wall_time = time.perf_counter() - start
        return params, report

    arrays = {k: np.asarray(v, dtype=float) for k, v in params.arrays().items()}
    state = AdamState.zeros_like(arrays)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(tcfg.seed).spawn(2)[1])
    n = len(train_seqs)
    for epoch in range(1, tcfg.n_epochs + 1):
        t0 = time.perf_counter()
        lr = tcfg.lr_at(epoch)
        perm = shuffle_rng.permutation(n)
        epoch_losses = []
        for b in range(0, n, tcfg.batch_size):
            order = perm[b:b + tcfg.batch_size]
            loss, per_seq, grads = loss_and_grad(train_seqs, cfg, tcfg.kind, arrays, order)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"non-finite loss or gradient at epoch {epoch}")
            arrays, state = adam_step(arrays, grads, state, lr, tcfg.beta1, tcfg.beta2,
                                      tcfg.adam_eps, tcfg.weight_decay)
            epoch_losses.append(per_seq)
        params = cls.from_arrays(arrays)
        va = evaluate(val_seqs, cfg, params)
        if not math.isfinite(va.mean):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        tr_mean, tr_std = _summary(np.concatenate(epoch_losses))
        row = EpochRow(epoch, tr_mean, tr_std, va.mean, va.std, lr, time.perf_counter() - t0)
        report.rows.append(row)
        if va.mean < report.best_val:
            best, report.best_val, report.best_epoch = params, va.mean, epoch
        log.info("epoch %d train %.4f val %.4f", epoch, tr_mean, va.mean)
        if progress is not None:
            progress(row)
    report.wall_time = time.perf_counter() - start
    return best, report


def improvement(policy_loss: float, myopic_loss: float, batch_loss: float,
                policy_std: float = 0.0, myopic_std: float = 0.0, batch_std: float = 0.0):
    """Percentage of the myopic-to-batch gap closed by a policy, with first-order uncertainty."""
    gap = myopic_loss - batch_loss
    if not gap > 0:
        raise DegenerateBaseline("myopic loss must exceed the batch loss")
    pct = 100.0 * (myopic_loss - policy_loss) / gap
    d_policy = -100.0 / gap
    d_myopic = 100.0 * (policy_loss - batch_loss) / gap ** 2
    d_batch = 100.0 * (myopic_loss - policy_loss) / gap ** 2
    err = math.sqrt((d_policy * policy_std) ** 2 + (d_myopic * myopic_std) ** 2 + (d_batch * batch_std) ** 2)
    return pct, err
