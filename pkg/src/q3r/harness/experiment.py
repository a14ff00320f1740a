"""Training runs on the synthetic tasks: train, log, truncate."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from q3r.harness.data import SyntheticTeacherSpec, gen_teacher_dataset
from q3r.optim import OptimizerConfig, get_step
from q3r.reweighting import q3r_value
from q3r.spectral import tail_ratio
from q3r.tinynet import Attention, Batch, Dense, MeanPool, Relu, backward, evaluate, parameters
from q3r.truncation import TruncationReport, target_matrices, truncate_and_eval

TASKS = ("teacher_classify", "attention_toy", "matrix_recover")
PAPER_RETENTIONS = (0.05, 0.10, 0.15, 0.20, 0.30, 0.40, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    task: str = "teacher_classify"
    hidden: tuple[int, ...] = (64,)
    epochs: int = 30
    batch_size: int = 32
    method: str = "adamq3r"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    q3r_targets: str = "dense"
    include_head: bool = False
    retentions: tuple[float, ...] = PAPER_RETENTIONS
    data: SyntheticTeacherSpec = field(default_factory=SyntheticTeacherSpec)
    output_dir: str = "runs"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.data.seed != self.seed:
            object.__setattr__(self, "data", replace(self.data, seed=self.seed))
        if self.task == "attention_toy" and self.data.seq_len < 1:
            raise ValueError("attention_toy needs data.seq_len >= 1")
        if self.task == "teacher_classify" and self.data.seq_len:
            raise ValueError("teacher_classify takes flat inputs; set seq_len = 0")
        get_step(self.method)

    @property
    def regularized(self) -> bool:
        return self.method != "adam" and self.optimizer.lam > 0


def build_net(cfg: ExperimentConfig, rng: np.random.Generator):
    d = cfg.data
    if cfg.task == "attention_toy":
        return [Attention.init("attn0", d.input_dim, rng), MeanPool(), Dense.init("head", d.input_dim, d.num_classes, rng)]
    sizes = (d.input_dim, *cfg.hidden)
    net = []
    for i in range(len(cfg.hidden)):
        net += [Dense.init(f"dense{i}", sizes[i], sizes[i + 1], rng), Relu(f"relu{i}")]
    net.append(Dense.init("head", sizes[-1], d.num_classes, rng))
    return net


@dataclass
class RunResult:
    net: list
    log: list[dict]
    timings: dict[str, float]
    train: Batch
    held: Batch
    eval_loss: float
    eval_accuracy: float | None
    steps: int = 0


def matrix_diagnostics(net, cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for _, _, p in target_matrices(net, cfg.q3r_targets, cfg.include_head):
        r = cfg.optimizer.target.for_shape(*p.shape)
        if p.op is not None:
            eps, r_env, value = p.op.eps, p.op.r_env, q3r_value(p.op, p.w)
        else:
            eps, r_env, value = 0.0, 0, 0.0
        rows.append({"matrix": p.name, "eps": eps, "r_env": r_env, "tail_ratio": tail_ratio(p.w, r), "q3r_value": value})
    return rows


def train(cfg: ExperimentConfig) -> RunResult:
    """Minibatch training with a per-epoch shuffle seeded by ``(seed, epoch)``."""
    if cfg.task == "matrix_recover":
        raise ValueError("matrix_recover has no network to train; use run_matrix_recovery")
    timings = {"data": 0.0, "forward_backward": 0.0, "optimizer": 0.0, "eval": 0.0}
    t0 = time.perf_counter()
    train_set, held, _ = gen_teacher_dataset(cfg.data)
    timings["data"] += time.perf_counter() - t0

    net = build_net(cfg, np.random.default_rng([cfg.seed, 1]))
    params = parameters(net)
    if cfg.regularized:
        for _, _, p in target_matrices(net, cfg.q3r_targets, cfg.include_head):
            p.enable_q3r(cfg.optimizer.target)
    step = get_step(cfg.method)
    opt = cfg.optimizer if cfg.method != "adam" else replace(cfg.optimizer, lam=0.0)

    n = len(train_set)
    t = 0
    log = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = Batch(train_set.inputs[idx], train_set.targets[idx])
            t1 = time.perf_counter()
            loss, grads = backward(net, batch, "ce")
            t2 = time.perf_counter()
            step(params, [grads[p.name] for p in params], opt, t)
            timings["forward_backward"] += t2 - t1
            timings["optimizer"] += time.perf_counter() - t2
            running += loss * len(idx)
            t += 1
        t1 = time.perf_counter()
        eval_loss, eval_acc = evaluate(net, [held], "ce")
        timings["eval"] += time.perf_counter() - t1
        for diag in matrix_diagnostics(net, cfg):
            log.append({"epoch": epoch + 1, "train_loss": running / n, "eval_loss": eval_loss, "eval_accuracy": eval_acc, **diag})
    eval_loss, eval_acc = evaluate(net, [held], "ce")
    return RunResult(net, log, timings, train_set, held, eval_loss, eval_acc, t)


def truncation_sweep(result: RunResult, cfg: ExperimentConfig, retentions=None) -> list[TruncationReport]:
    levels = cfg.retentions if retentions is None else retentions
    return truncate_and_eval(result.net, [result.held], levels, cfg.q3r_targets, "ce", cfg.include_head)
