"""Synthetic embedding datasets with controllable class separation and label noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import EmbeddingDataset
from .errors import RejectionFailure, ValidationError

MAX_PROTOTYPE_ATTEMPTS = 10_000
# independent random streams derived from one seed
_PROTOTYPE_STREAM = 1
_SPLITS = {"train": 2, "test": 3}
_NOISE_STREAM = 4


def stream(seed: int, key: int) -> np.random.Generator:
    # spawn_key keeps streams distinct; SeedSequence([seed, 0]) would alias SeedSequence(seed)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 10
    shots: int = 16
    dim: int = 32
    patches: int = 16
    separation: float = 20.0
    background_fraction: float = 0.25
    noise_rate: float = 0.0
    noise_kind: Literal["symmetric", "asymmetric"] = "symmetric"
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.shots < 1 or self.dim < 1 or self.patches < 1:
            raise ValidationError("num_classes, shots, dim and patches must be >= 1")
        if not self.separation > 0:
            raise ValidationError("separation must be positive")
        if not 0 <= self.background_fraction < 1:
            raise ValidationError("background_fraction must lie in [0, 1)")
        if not 0 <= self.noise_rate < 1:
            raise ValidationError("noise_rate must lie in [0, 1)")
        if self.noise_kind not in ("symmetric", "asymmetric"):
            raise ValidationError(f"unknown noise kind {self.noise_kind!r}")

    @property
    def max_prototype_cosine(self) -> float:
        return 1.0 / (1.0 + self.separation / 10.0)

    @property
    def sigma(self) -> float:
        return 1.0 / self.separation


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def class_prototypes(cfg: SynthConfig) -> np.ndarray:
    """Unit prototypes whose pairwise cosine stays below ``cfg.max_prototype_cosine``.

    Drawn one at a time by rejection; depends only on the seed, so every split of
    a benchmark shares the same classes.
    """
    rng = stream(cfg.seed, _PROTOTYPE_STREAM)
    bound = cfg.max_prototype_cosine
    protos: list[np.ndarray] = []
    attempts = 0
    while len(protos) < cfg.num_classes:
        if attempts >= MAX_PROTOTYPE_ATTEMPTS:
            raise RejectionFailure(
                f"could not place {cfg.num_classes} prototypes in {cfg.dim} dims "
                f"with pairwise cosine <= {bound:.3f}"
            )
        attempts += 1
        cand = _unit(rng.standard_normal(cfg.dim))
        if all(cand @ p <= bound for p in protos):
            protos.append(cand)
    return np.stack(protos)


def gen_dataset(cfg: SynthConfig, split: str = "train", shots: int | None = None) -> EmbeddingDataset:
    """Clean-labelled dataset: ``shots`` samples per class around the class prototypes."""
    if split not in _SPLITS:
        raise ValidationError(f"split must be one of {sorted(_SPLITS)}")
    shots = cfg.shots if shots is None else shots
    protos = class_prototypes(cfg)
    rng = stream(cfg.seed, _SPLITS[split])
    C, d, L = cfg.num_classes, cfg.dim, cfg.patches
    truth = np.repeat(np.arange(C), shots)
    D = truth.size
    sigma = cfg.sigma

    global_f = _unit(protos[truth] + sigma * rng.standard_normal((D, d)))
    local_f = _unit(global_f[:, None, :] + sigma * rng.standard_normal((D, L, d)))
    n_bg = int(np.floor(cfg.background_fraction * L))
    if n_bg:
        for i in range(D):
            pos = rng.choice(L, size=n_bg, replace=False)
            local_f[i, pos] = _unit(rng.standard_normal((n_bg, d)))
    return EmbeddingDataset(global_f, local_f, truth.copy(), C, truth)


def _flip_positions(n: int, rate: float, rng) -> np.ndarray:
    if not 0 <= rate < 1:
        raise ValidationError(f"noise rate must lie in [0, 1), got {rate}")
    count = int(np.floor(rate * n))
    return np.sort(rng.choice(n, size=count, replace=False))


def inject_symmetric_noise(labels, rate: float, num_classes: int, seed):
    """Flip exactly floor(rate * D) labels to a uniformly drawn different class."""
    labels = np.array(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    pos = _flip_positions(labels.size, rate, rng)
    mask = np.zeros(labels.size, dtype=bool)
    if pos.size:
        if num_classes < 2:
            raise ValidationError("label noise needs at least two classes")
        labels[pos] = (labels[pos] + rng.integers(1, num_classes, size=pos.size)) % num_classes
        mask[pos] = True
    return labels, mask


def inject_asymmetric_noise(labels, rate: float, num_classes: int, seed):
    """Flip exactly floor(rate * D) labels k -> (k + 1) mod C."""
    labels = np.array(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    pos = _flip_positions(labels.size, rate, rng)
    mask = np.zeros(labels.size, dtype=bool)
    if pos.size:
        if num_classes < 2:
            raise ValidationError("label noise needs at least two classes")
        labels[pos] = (labels[pos] + 1) % num_classes
        mask[pos] = True
    return labels, mask


def make_noisy_dataset(cfg: SynthConfig) -> EmbeddingDataset:
    """Training split with ``cfg.noise_rate`` of its labels corrupted per ``cfg.noise_kind``."""
    ds = gen_dataset(cfg, "train")
    inject = inject_symmetric_noise if cfg.noise_kind == "symmetric" else inject_asymmetric_noise
    noisy, _ = inject(ds.labels, cfg.noise_rate, cfg.num_classes, stream(cfg.seed, _NOISE_STREAM))
    return ds.with_labels(noisy)
