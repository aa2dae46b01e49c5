"""Synthetic datasets, the view-augmentation family, and minibatch iteration.

Clusters are Gaussian blobs around well-separated means pushed through one
fixed random tanh mixing layer, so the observed coordinates are a nonlinear
function of the latent class structure and representation learning has
something to do.  Every generator is a pure function of its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

OOD_MODES = ("shifted_means", "scaled_variance", "uniform_box")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray | None
    split_tag: str
    gen_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if not np.all(np.isfinite(self.x)):
            raise DataError("dataset contains non-finite values")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape[0] != self.x.shape[0]:
                raise DataError("label count does not match row count")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]


@dataclass
class AugmentationConfig:
    noise_std: float = 0.1
    mask_prob: float = 0.1
    scale_min: float = 0.8
    scale_max: float = 1.2

    def __post_init__(self):
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ConfigError("mask_prob must lie in [0, 1)")
        if not 0.0 < self.scale_min <= self.scale_max:
            raise ConfigError("scale range must satisfy 0 < min <= max")


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(entropy))))


def _cluster_params(classes: int, input_dim: int, separation: float, seed: int):
    """Class means on a separation-scaled sphere plus the fixed mixing layer.
    Derived from its own seed stream so OOD generators can replay it."""
    rng = _rng(seed, 0)
    dirs = rng.standard_normal((classes, input_dim))
    means = separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    mix = rng.standard_normal((input_dim, input_dim)) / np.sqrt(input_dim)
    return means, mix


def make_clusters(classes: int, per_class: int, input_dim: int,
                  separation: float, seed: int, split_tag: str = "pretrain") -> Dataset:
    if classes < 2:
        raise ConfigError("need at least 2 classes")
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    if separation <= 0:
        raise ConfigError("separation must be positive")
    means, mix = _cluster_params(classes, input_dim, separation, seed)
    rng = _rng(seed, 1)
    labels = np.repeat(np.arange(classes), per_class)
    raw = means[labels] + rng.standard_normal((labels.size, input_dim))
    x = np.tanh(raw @ mix)
    meta = {"kind": "clusters", "classes": classes, "per_class": per_class,
            "input_dim": input_dim, "separation": separation, "seed": seed}
    return Dataset(x=x, y=labels, split_tag=split_tag, gen_meta=meta)


def make_ood(reference: Dataset, mode: str, seed: int,
             count: int | None = None) -> Dataset:
    """Unlabeled out-of-distribution analogue of a clusters dataset."""
    if reference.gen_meta.get("kind") != "clusters":
        raise ConfigError("make_ood requires a clusters-generated reference")
    if mode not in OOD_MODES:
        raise ConfigError(f"unknown OOD mode {mode!r}; choose from {OOD_MODES}")
    meta = reference.gen_meta
    classes, input_dim = meta["classes"], meta["input_dim"]
    separation = meta["separation"]
    means, mix = _cluster_params(classes, input_dim, separation, meta["seed"])
    n = reference.n if count is None else int(count)
    rng = _rng(seed, 2)
    assign = np.arange(n) % classes

    if mode == "shifted_means":
        # radius 4x separation: at least 3x separation from every reference mean
        dirs = rng.standard_normal((classes, input_dim))
        ood_means = 4.0 * separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        raw = ood_means[assign] + rng.standard_normal((n, input_dim))
        x = np.tanh(raw @ mix)
    elif mode == "scaled_variance":
        raw = means[assign] + 5.0 * rng.standard_normal((n, input_dim))
        x = np.tanh(raw @ mix)
    else:  # uniform_box over the reference's observed bounding box, doubled
        lo, hi = reference.x.min(axis=0), reference.x.max(axis=0)
        center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
        x = rng.uniform(center - 2.0 * half, center + 2.0 * half, size=(n, input_dim))

    ood_meta = {"kind": "ood", "mode": mode, "seed": seed, "reference": dict(meta)}
    return Dataset(x=x, y=None, split_tag="ood", gen_meta=ood_meta)


def augment_pair(x_batch: np.ndarray, cfg: AugmentationConfig,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two independent draws from the augmentation family applied to the
    same rows: per-row multiplicative jitter, additive Gaussian noise, then
    independent coordinate masking."""
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DataError("augment_pair: need a non-empty 2-D batch")

    def one_view() -> np.ndarray:
        jitter = rng.uniform(cfg.scale_min, cfg.scale_max, size=(x.shape[0], 1))
        v = x * jitter
        if cfg.noise_std > 0:
            v = v + cfg.noise_std * rng.standard_normal(x.shape)
        if cfg.mask_prob > 0:
            v = v * (rng.random(x.shape) >= cfg.mask_prob)
        return v

    return one_view(), one_view()


def minibatches(n: int, batch: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded per-epoch permutation chunked into batches; the final short
    batch is kept, so each index appears exactly once per epoch."""
    if batch < 1:
        raise ConfigError("batch size must be >= 1")
    perm = _rng(seed, 3, epoch).permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


# ---- persistence: binary payload + text header -----------------------------

def save_dataset(ds: Dataset, stem: str) -> None:
    """Writes <stem>.bin (float64 LE rows, labels appended when present)
    and <stem>.txt (dims, seed, generator parameters)."""
    with open(f"{stem}.bin", "wb") as f:
        f.write(ds.x.astype("<f8").tobytes())
        if ds.y is not None:
            f.write(ds.y.astype("<f8").tobytes())
    lines = [f"rows = {ds.n}", f"dim = {ds.input_dim}",
             f"labeled = {int(ds.y is not None)}", f"split_tag = {ds.split_tag}"]
    for key, val in sorted(ds.gen_meta.items()):
        lines.append(f"gen.{key} = {val}")
    with open(f"{stem}.txt", "w") as f:
        f.write("\n".join(lines) + "\n")


def _coerce(raw: str):
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    return raw


def load_dataset(stem: str) -> Dataset:
    header: dict[str, str] = {}
    with open(f"{stem}.txt") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            header[key.strip()] = val.strip()
    rows, dim = int(header["rows"]), int(header["dim"])
    labeled = bool(int(header["labeled"]))
    with open(f"{stem}.bin", "rb") as f:
        raw = np.frombuffer(f.read(), dtype="<f8")
    expected = rows * dim + (rows if labeled else 0)
    if raw.size != expected:
        raise DataError(f"{stem}.bin: expected {expected} values, found {raw.size}")
    x = raw[:rows * dim].reshape(rows, dim).copy()
    y = raw[rows * dim:].astype(np.int64) if labeled else None
    # header values come back typed so generators (e.g. make_ood) can replay
    meta = {k[4:]: _coerce(v) for k, v in header.items() if k.startswith("gen.")}
    return Dataset(x=x, y=y, split_tag=header.get("split_tag", "train"), gen_meta=meta)
