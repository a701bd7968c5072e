"""Synthetic interval datasets: AR(1) source, midtread quantizer, swinging-door compressor.

Two pipelines are provided. ``s1`` quantizes a uniformly sampled AR(1)
series; ``s2`` compresses it with a swinging-door trend recorder so that
retained timestamps are irregular. Both are cut into 288 sequences of 100
intervals and split 192/64/32 at random.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import IntervalSequence, RtiError, ValidationError

GENERATOR_NAME = "numpy.random.PCG64"
SEQ_LEN = 100
SPLIT_SIZES = (192, 64, 32)
SPLIT_NAMES = ("train", "val", "test")
CSV_HEADER = ("seq_id", "t", "x", "y", "eps")


class InsufficientData(RtiError, ValueError):
    pass


class ZeroVariance(RtiError, ArithmeticError):
    pass


@dataclass(frozen=True)
class Ar1Config:
    n: int
    seed: int = 0
    phi: float = 0.9
    innovation_variance: float = 0.1
    z0: float | None = None  # overrides the first sample; used for deterministic checks

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValidationError("autoregressive coefficient must satisfy |phi| < 1")
        if self.n < 1:
            raise ValidationError("n must be at least 1")
        if self.innovation_variance < 0:
            raise ValidationError("innovation variance must be non-negative")


def ar1_generate(cfg: Ar1Config, rng: np.random.Generator | None = None):
    """Return ``(x, z)`` with ``x = 0..n-1`` and ``z_t = phi z_{t-1} + w_t``, ``z_0 = w_0``."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    w = rng.standard_normal(cfg.n) * math.sqrt(cfg.innovation_variance)
    if cfg.z0 is not None:
        w[0] = cfg.z0
    z = np.empty(cfg.n)
    acc = 0.0
    for t in range(cfg.n):
        acc = cfg.phi * acc + w[t]
        z[t] = acc
    return np.arange(cfg.n, dtype=float), z


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def midtread_quantize(z, eps: float = 0.1, x=None) -> IntervalSequence:
    if not eps > 0:
        raise ValidationError("quantization half-step must be positive")
    z = np.asarray(z, dtype=float)
    x = np.arange(len(z), dtype=float) if x is None else np.asarray(x, dtype=float)
    step = 2.0 * eps
    y = _round_half_away(z / step) * step + 0.0  # no negative zeros
    return IntervalSequence.from_arrays(x, y, np.full(len(z), eps))


def swinging_door_indices(x, z, comp_dev: float = 0.1) -> np.ndarray:
    """Indices of the samples kept by the swinging-door recorder.

    From the last kept sample, a slope corridor is narrowed by every
    skipped sample ``i`` to the slopes whose line passes within
    ``comp_dev`` of ``z_i``. A sample is a valid end point while its own
    slope lies inside the corridor of the samples before it; when the next
    sample falls outside, the previous one is kept and becomes the new
    anchor. Linear interpolation of kept samples therefore never deviates by
    more than ``comp_dev`` from a skipped one.
    """
    if not comp_dev > 0:
        raise ValidationError("comp_dev must be positive")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n = len(z)
    if n < 2:
        raise ValidationError("need at least two samples")
    kept = [0]
    a = 0
    lo, hi = -math.inf, math.inf
    j = 1
    while j < n:
        dx = x[j] - x[a]
        slope = (z[j] - z[a]) / dx
        if lo <= slope <= hi:
            lo = max(lo, (z[j] - comp_dev - z[a]) / dx)
            hi = min(hi, (z[j] + comp_dev - z[a]) / dx)
            j += 1
        else:
            a = j - 1
            kept.append(a)
            lo, hi = -math.inf, math.inf
    if kept[-1] != n - 1:
        kept.append(n - 1)
    return np.array(kept)


def swinging_door_compress(x, z, comp_dev: float = 0.1) -> IntervalSequence:
    idx = swinging_door_indices(x, z, comp_dev)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    return IntervalSequence.from_arrays(x[idx], z[idx], np.full(len(idx), comp_dev))


def replay_deviation(x, z, kept_x, kept_y) -> float:
    """Largest gap between the linear interpolant of kept points and the source."""
    return float(np.max(np.abs(np.interp(x, kept_x, kept_y) - np.asarray(z))))


@dataclass(frozen=True)
class Standardization:
    mean: float
    std: float


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    test: tuple
    train_ids: tuple = ()
    val_ids: tuple = ()
    test_ids: tuple = ()
    stats: Standardization | None = None
    standardized: bool = False
    meta: dict = field(default_factory=dict)

    def part(self, name: str) -> tuple:
        if name not in SPLIT_NAMES:
            raise ValidationError(f"unknown split {name!r}")
        return getattr(self, name)

    def ids(self, name: str) -> tuple:
        return getattr(self, f"{name}_ids")


def _chunk(x, y, eps, count: int):
    return [IntervalSequence.from_arrays(x[i * SEQ_LEN:(i + 1) * SEQ_LEN], y[i * SEQ_LEN:(i + 1) * SEQ_LEN],
                                         eps[i * SEQ_LEN:(i + 1) * SEQ_LEN]) for i in range(count)]


def _s2_source(noise_seed, total: int, comp_dev: float, ar: dict, max_len: int):
    n = 4 * total
    while True:
        x, z = ar1_generate(Ar1Config(n=n, **ar), np.random.default_rng(noise_seed))
        idx = swinging_door_indices(x, z, comp_dev)
        if len(idx) >= total:
            return x, z, idx, n
        if n >= max_len:
            raise InsufficientData(f"only {len(idx)} of {total} samples retained from {n} source samples")
        n = min(max_len, int(n * total / max(len(idx), 1) * 1.1) + 1)


def build_dataset(source: str, seed: int, *, eps: float = 0.1, comp_dev: float = 0.1,
                  n_sequences: int = sum(SPLIT_SIZES), split_sizes=SPLIT_SIZES,
                  innovation_variance: float = 0.1, ar_coef: float = 0.9,
                  max_source_len: int = 10_000_000) -> DatasetSplit:
    """Generate a raw (unstandardized) split; see the module docstring."""
    if sum(split_sizes) != n_sequences:
        raise ValidationError("split sizes must add up to the number of sequences")
    noise_ss, split_ss = np.random.SeedSequence(seed).spawn(2)
    total = n_sequences * SEQ_LEN
    ar = dict(phi=ar_coef, innovation_variance=innovation_variance)
    meta = dict(source=source, seed=seed, generator=GENERATOR_NAME, ar_coef=ar_coef,
                innovation_variance=innovation_variance, n_sequences=n_sequences)
    if source == "s1":
        x, z = ar1_generate(Ar1Config(n=total, **ar), np.random.default_rng(noise_ss))
        q = midtread_quantize(z, eps, x)
        seqs = _chunk(q.x, q.y, q.eps, n_sequences)
        meta.update(eps=eps, source_length=total)
    elif source == "s2":
        x, z, idx, n = _s2_source(noise_ss, total, comp_dev, ar, max_source_len)
        idx = idx[:total]
        seqs = _chunk(x[idx], z[idx], np.full(total, comp_dev), n_sequences)
        meta.update(comp_dev=comp_dev, source_length=n,
                    replay_max_deviation=replay_deviation(x[: idx[-1] + 1], z[: idx[-1] + 1], x[idx], z[idx]))
    else:
        raise ValidationError(f"unknown source {source!r}; expected 's1' or 's2'")
    perm = np.random.default_rng(split_ss).permutation(n_sequences)
    cuts = np.cumsum(split_sizes)[:-1]
    parts = np.split(perm, cuts)
    split = DatasetSplit(
        *(tuple(seqs[i] for i in p) for p in parts),
        *(tuple(int(i) for i in p) for p in parts),
        meta=meta,
    )
    return replace(split, stats=compute_stats(split.train))


def compute_stats(train) -> Standardization:
    if not train:
        raise ValidationError("training split is empty")
    y = np.concatenate([s.y for s in train])
    std = float(np.std(y))
    if not std > 0:
        raise ZeroVariance("training centroids have zero variance")
    return Standardization(float(np.mean(y)), std)


def _transform(seq: IntervalSequence, mean: float, std: float) -> IntervalSequence:
    return IntervalSequence.from_arrays(seq.x, (seq.y - mean) / std, seq.eps / std)


def standardize(split: DatasetSplit) -> DatasetSplit:
    if split.standardized:
        return split
    stats = split.stats or compute_stats(split.train)
    return replace(split, stats=stats, standardized=True,
                   **{n: tuple(_transform(s, stats.mean, stats.std) for s in split.part(n)) for n in SPLIT_NAMES})


def inverse_standardize(split: DatasetSplit) -> DatasetSplit:
    if not split.standardized:
        return split
    m, s = split.stats.mean, split.stats.std
    return replace(split, standardized=False,
                   **{n: tuple(IntervalSequence.from_arrays(q.x, q.y * s + m, q.eps * s) for q in split.part(n))
                      for n in SPLIT_NAMES})


# on-disk format ------------------------------------------------------------------


def write_sequences_csv(path, seqs, ids=None) -> None:
    ids = range(len(seqs)) if ids is None or not len(ids) else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for sid, seq in zip(ids, seqs):
            for t, (x, y, e) in enumerate(zip(seq.x, seq.y, seq.eps)):
                w.writerow((sid, t, repr(float(x)), repr(float(y)), repr(float(e))))


def read_sequences_csv(path) -> tuple[list, list]:
    rows: dict[int, list] = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            sid = int(row["seq_id"])
            if sid not in rows:
                rows[sid] = []
                order.append(sid)
            rows[sid].append((int(row["t"]), float(row["x"]), float(row["y"]), float(row["eps"])))
    seqs = []
    for sid in order:
        r = sorted(rows[sid])
        seqs.append(IntervalSequence.from_arrays([v[1] for v in r], [v[2] for v in r], [v[3] for v in r]))
    return order, seqs


def save_dataset(split: DatasetSplit, out_dir) -> dict:
    """Write the raw split as one CSV per part; return the dataset description."""
    raw = inverse_standardize(split)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in SPLIT_NAMES:
        fname = f"{name}.csv"
        write_sequences_csv(out / fname, raw.part(name), raw.ids(name))
        files[name] = fname
    return dict(raw.meta, files=files, standardization={"mean": raw.stats.mean, "std": raw.stats.std})


def load_dataset(data_dir, standardized: bool = True) -> DatasetSplit:
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    desc = manifest.get("dataset", manifest)
    parts, ids = {}, {}
    for name in SPLIT_NAMES:
        fname = desc.get("files", {}).get(name, f"{name}.csv")
        ids[name], parts[name] = read_sequences_csv(data_dir / fname)
    st = desc.get("standardization")
    stats = Standardization(float(st["mean"]), float(st["std"])) if st else compute_stats(parts["train"])
    split = DatasetSplit(parts["train"], parts["val"], parts["test"],
                         tuple(ids["train"]), tuple(ids["val"]), tuple(ids["test"]),
                         stats=stats, meta=desc)
    return standardize(split) if standardized else split
