"""Seeded optimization loop with adaptive-moment updates, checkpointing,
and loss-history logging.

Determinism contract: the per-step RNG stream is derived from
SeedSequence(seed, spawn_key=(step,)), so identical configs and seed
reproduce every number bitwise, and a run resumed from a checkpoint
replays the uninterrupted run's history exactly.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from .cloud import PointCloud, sample_queries_rng
from .errors import ConfigError, TrainingError
from .losses import LossConfig, LossReport, total_loss, with_auto_balanced_alpha
from .metrics import consistency_stats
from .model import ArchSpec, SdfNetwork, init_network, save_network
from . import autodiff as ad

HISTORY_HEADER = ["step", "baseline", "alignment", "mean_beta", "mean_consistency"]

PROBE_SIZE = 2000


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 1000
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0        # 0 disables intermediate checkpoints
    log_every: int = 100
    cosine_lr_decay: bool = False
    independent_queries: bool = False
    loss: LossConfig = dc_field(default_factory=LossConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name, v in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{name} must be in (0,1), got {v}")
        if self.adam_epsilon <= 0:
            raise ConfigError(f"adam_epsilon must be > 0, got {self.adam_epsilon}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")


@dataclass
class TrainHistory:
    """Per-logged-step records; steps strictly increase."""

    records: list[tuple[int, float, float, float, float]] = dc_field(default_factory=list)

    def append(self, step: int, report: LossReport, mean_consistency: float) -> None:
        if self.records and step <= self.records[-1][0]:
            raise ConfigError("history steps must strictly increase")
        self.records.append((step, report.baseline, report.alignment,
                             report.mean_beta, mean_consistency))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_HEADER)
            for step, base, align, beta, cons in self.records:
                writer.writerow([step, repr(base), repr(align), repr(beta), repr(cons)])

    @staticmethod
    def read_csv(path) -> "TrainHistory":
        hist = TrainHistory()
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows and rows[0] == HISTORY_HEADER:
            rows = rows[1:]
        for row in rows:
            hist.records.append((int(row[0]), float(row[1]), float(row[2]),
                                 float(row[3]), float(row[4])))
        return hist


class Adam:
    """First-order adaptive-moment optimizer over tape parameter leaves."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def apply(self, grads, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = np.asarray(g)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            mhat = self.m[i] / (1.0 - b1 ** self.t)
            vhat = self.v[i] / (1.0 - b2 ** self.t)
            p.value[...] = p.value - lr * mhat / (np.sqrt(vhat) + self.eps)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step,)))


def _probe_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1 << 31,)))


def step(net: SdfNetwork, pc: PointCloud, config: TrainConfig, optimizer: Adam,
         step_index: int, loss_config: LossConfig | None = None) -> LossReport:
    """One optimization step: sample a batch, evaluate the objective,
    apply one parameter update. Returns the loss decomposition."""
    rng = _step_rng(config.seed, step_index)
    batch = sample_queries_rng(pc, config.batch_size, rng)
    align_batch = None
    if config.independent_queries:
        align_batch = sample_queries_rng(pc, config.batch_size, rng)
    cfg = loss_config if loss_config is not None else config.loss
    loss, report = total_loss(net, batch, pc, cfg, alignment_batch=align_batch)
    if not np.isfinite(report.total):
        raise TrainingError(f"non-finite loss at step {step_index}")
    grads = ad.loss_param_gradients(net, loss)
    for g in grads:
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient at step {step_index}")
    lr = config.learning_rate
    if config.cosine_lr_decay:
        lr = lr * 0.5 * (1.0 + np.cos(np.pi * step_index / config.iterations))
    optimizer.apply(grads, lr=lr)
    return report


@dataclass
class FitResult:
    net: SdfNetwork
    history: TrainHistory
    loss_config: LossConfig   # after auto-balance resolution


def fit(pc: PointCloud, config: TrainConfig, arch: ArchSpec | None = None,
        out_dir=None, resume_from=None) -> FitResult:
    """Minimize the combined objective over the network parameters.

    Deterministic given (configs, seed).  When ``out_dir`` is set,
    checkpoints land there at the configured cadence (write-then-rename)
    together with the final checkpoint and history CSV.  ``resume_from``
    names an optimizer-state file written by a previous run.
    """
    if len(pc) < 2:
        raise ConfigError("fit needs at least 2 points")
    arch = arch or ArchSpec()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    net = init_network(arch, config.seed)
    optimizer = Adam(net.parameters(), config.learning_rate, config.beta1,
                     config.beta2, config.adam_epsilon)
    loss_config = config.loss
    start_step = 0
    if resume_from is not None:
        start_step, stored_alpha = _load_state(resume_from, net, optimizer)
        loss_config = replace(loss_config, alpha=stored_alpha, auto_balance=False)

    probe = sample_queries_rng(pc, PROBE_SIZE, _probe_rng(config.seed))
    if loss_config.auto_balance and loss_config.alpha > 0 and start_step == 0:
        batch0 = sample_queries_rng(pc, config.batch_size, _step_rng(config.seed, 0))
        loss_config = with_auto_balanced_alpha(net, batch0, pc, loss_config)

    history = TrainHistory()
    last_report = None
    for step_index in range(start_step, config.iterations):
        try:
            last_report = step(net, pc, config, optimizer, step_index, loss_config)
        except TrainingError:
            # parameters are still the last finite state: retain them
            if out_dir is not None:
                _write_checkpoint(net, optimizer, step_index, out_dir, loss_config,
                                  name="checkpoint_abort")
                _write_history(history, out_dir)
            raise
        at_cadence = (step_index + 1) % config.log_every == 0
        if at_cadence or step_index + 1 == config.iterations:
            stats = consistency_stats(net, probe.queries)
            history.append(step_index + 1, last_report, stats.mean)
        if out_dir is not None and config.checkpoint_every > 0 \
                and (step_index + 1) % config.checkpoint_every == 0:
            _write_checkpoint(net, optimizer, step_index + 1, out_dir, loss_config)

    if out_dir is not None:
        _write_checkpoint(net, optimizer, config.iterations, out_dir, loss_config,
                          name="checkpoint")
        _write_history(history, out_dir)
    return FitResult(net=net, history=history, loss_config=loss_config)


def _write_history(history: TrainHistory, out_dir: Path) -> None:
    tmp = out_dir / "history.csv.tmp"
    history.write_csv(tmp)
    os.replace(tmp, out_dir / "history.csv")


def _write_checkpoint(net: SdfNetwork, optimizer: Adam, step_index: int,
                      out_dir: Path, loss_config: LossConfig,
                      name: str | None = None) -> None:
    name = name or f"checkpoint_{step_index:07d}"
    tmp = out_dir / (name + ".npz.tmp")
    save_network(net, tmp)
    os.replace(tmp, out_dir / (name + ".npz"))
    state_tmp = out_dir / (name + ".state.npz.tmp")
    _save_state(state_tmp, net, optimizer, step_index, loss_config.alpha)
    os.replace(state_tmp, out_dir / (name + ".state.npz"))


def _save_state(path, net: SdfNetwork, optimizer: Adam, step_index: int,
                alpha: float) -> None:
    arrays = {"step": np.array([step_index, optimizer.t], dtype=np.int64),
              "alpha": np.array([alpha])}
    for i, p in enumerate(net.parameters()):
        arrays[f"p{i}"] = p.value
        arrays[f"m{i}"] = optimizer.m[i]
        arrays[f"v{i}"] = optimizer.v[i]
    np.savez(path, **arrays)


def _load_state(path, net: SdfNetwork, optimizer: Adam) -> tuple[int, float]:
    with np.load(path) as z:
        step_index, t = (int(x) for x in z["step"])
        alpha = float(z["alpha"][0])
        for i, p in enumerate(net.parameters()):
            p.value[...] = z[f"p{i}"]
            optimizer.m[i][...] = z[f"m{i}"]
            optimizer.v[i][...] = z[f"v{i}"]
    optimizer.t = t
    return step_index, alpha
