"""Seeded synthetic tasks with known low-rank ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from q3r.tinynet import Batch, softmax


@dataclass(frozen=True)
class SyntheticTeacherSpec:
    input_dim: int = 32
    hidden_dim: int = 64
    num_classes: int = 4
    teacher_rank: int = 4
    samples: int = 4000
    label_noise: float = 0.0
    seed: int = 0
    seq_len: int = 0  # > 0 switches to the attention teacher

    def __post_init__(self):
        dims = (self.input_dim, self.hidden_dim, self.num_classes)
        if min(dims) < 1 or self.samples < 5:
            raise ValueError(f"degenerate teacher spec: dims={dims}, samples={self.samples}")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if not 1 <= self.teacher_rank <= min(self.input_dim, self.hidden_dim):
            raise ValueError("teacher rank exceeds the layer dimensions")
        if not 0 <= self.label_noise < 0.5:
            raise ValueError("label noise must lie in [0, 0.5)")


@dataclass
class Teacher:
    weights: list[np.ndarray]
    offset: np.ndarray
    seq_len: int = 0

    def logits(self, x: np.ndarray) -> np.ndarray:
        if self.seq_len:
            wq, wk, wv, wo, head = self.weights
            scale = 1.0 / math.sqrt(x.shape[-1])
            p = softmax(np.einsum("bsd,btd->bst", x @ wq, x @ wk) * scale)
            h = (p @ (x @ wv)) @ wo
            return h.mean(axis=1) @ head - self.offset
        w1, w2 = self.weights
        return np.maximum(x @ w1, 0.0) @ w2 - self.offset

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def low_rank_gaussian(rng: np.random.Generator, d1: int, d2: int, rank: int) -> np.ndarray:
    """Product of thin Gaussian factors, scaled to unit-variance entries."""
    rank = min(rank, d1, d2)
    a = rng.standard_normal((d1, rank))
    b = rng.standard_normal((rank, d2))
    return a @ b / math.sqrt(rank)


def make_teacher(spec: SyntheticTeacherSpec, rng: np.random.Generator) -> Teacher:
    r = spec.teacher_rank
    if spec.seq_len:
        d = spec.input_dim
        mats = [low_rank_gaussian(rng, d, d, r) / math.sqrt(d) for _ in range(4)]
        head = low_rank_gaussian(rng, d, spec.num_classes, r) / math.sqrt(d)
        teacher = Teacher(mats + [head], np.zeros(spec.num_classes), spec.seq_len)
        _balance(teacher, rng.standard_normal((2048, spec.seq_len, d)), spec.num_classes)
        return teacher
    w1 = low_rank_gaussian(rng, spec.input_dim, spec.hidden_dim, r) / math.sqrt(spec.input_dim)
    w2 = low_rank_gaussian(rng, spec.hidden_dim, spec.num_classes, r) / math.sqrt(spec.hidden_dim)
    teacher = Teacher([w1, w2], np.zeros(spec.num_classes))
    _balance(teacher, rng.standard_normal((4096, spec.input_dim)), spec.num_classes)
    return teacher


def _balance(teacher: Teacher, probe: np.ndarray, k: int, iters: int = 200) -> None:
    """Shift the class offsets until argmax labels on ``probe`` are near uniform."""
    logits = teacher.logits(probe)
    step = 0.5 * float(np.std(logits))
    offset = logits.mean(axis=0)
    for _ in range(iters):
        freq = np.bincount(np.argmax(logits - offset, axis=1), minlength=k) / len(probe)
        offset = offset + step * (freq - 1.0 / k)
    teacher.offset = offset


def gen_teacher_dataset(spec: SyntheticTeacherSpec):
    """Draw a low-rank teacher and label Gaussian inputs with it.

    Returns ``(train, eval, teacher)`` where ``train`` and ``eval`` are single
    :class:`Batch` objects holding an 80/20 split.
    """
    rng = np.random.default_rng(spec.seed)
    teacher = make_teacher(spec, rng)
    shape = (spec.samples, spec.seq_len, spec.input_dim) if spec.seq_len else (spec.samples, spec.input_dim)
    x = rng.standard_normal(shape)
    y = teacher.predict(x)
    flip = rng.random(spec.samples) < spec.label_noise
    # a flipped label moves to a uniformly chosen *different* class
    shift = rng.integers(1, spec.num_classes, size=spec.samples)
    y = np.where(flip, (y + shift) % spec.num_classes, y)
    n_train = int(round(0.8 * spec.samples))
    train = Batch(x[:n_train], y[:n_train])
    held = Batch(x[n_train:], y[n_train:])
    return train, held, teacher
