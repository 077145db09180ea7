import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from src.relu_net import PermutationPlan, ReluNet, gradients, mse_loss

logger = logging.getLogger(__name__)

HISTORY_SCHEMA = ("train_history", 1)


@dataclass
class TrainConfig:
    """Hyperparameters of one training run; defaults follow the 1D desk-scale setting."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    k: float = 5
    k_growth: float = 1.002 ** (1 / 10)
    lr_decay: float = 0.998
    epochs: int = 2000
    batch_size: int = 16
    seed: int = 2022
    granularity: str = "epoch"
    adaptive_k: bool = False
    freeze_affine: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}.")
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}.")
        if self.k_growth <= 0 or self.lr_decay <= 0:
            raise ValueError("k_growth and lr_decay must be positive.")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError(f"Invalid epochs={self.epochs} or batch_size={self.batch_size}.")
        if self.granularity not in ("epoch", "batch"):
            raise ValueError(f"granularity must be 'epoch' or 'batch', got '{self.granularity}'.")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if len(self.x) != len(self.y):
            raise ValueError(f"Dataset has {len(self.x)} inputs but {len(self.y)} targets.")
        if len(self.y) == 0:
            raise ValueError("Dataset is empty.")

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; lr is a scalar or per-parameter. Returns new parameters and a new state."""
    grads = np.asarray(grads, dtype=np.float64)
    m = np.zeros_like(grads) if state.m is None else state.m
    v = np.zeros_like(grads) if state.v is None else state.v
    t = state.t + 1
    m = state.beta1 * m + (1 - state.beta1) * grads
    v = state.beta2 * v + (1 - state.beta2) * grads ** 2
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    updated = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated, replace(state, m=m, v=v, t=t)


def rank_matching_plan(theta_free, W_init) -> PermutationPlan:
    """
    Plan placing the i-th smallest value of W_init where theta_free has its i-th smallest value.

    Ties in theta_free are broken by ascending index.
    """
    theta_free = np.asarray(theta_free, dtype=np.float64).reshape(-1)
    W_init = np.asarray(W_init, dtype=np.float64).reshape(-1)
    if len(theta_free) != len(W_init):
        raise ValueError(f"Length mismatch: theta has {len(theta_free)} values, W has {len(W_init)}.")
    indices = np.empty(len(W_init), dtype=np.int64)
    indices[np.argsort(theta_free, kind="stable")] = np.argsort(W_init, kind="stable")
    return PermutationPlan(indices, source="rank_matching")


def permute_to_initial(theta_free, W_init) -> np.ndarray:
    """Rearrange W_init into the rank order of theta_free."""
    return rank_matching_plan(theta_free, W_init).apply(np.asarray(W_init, dtype=np.float64))


@dataclass
class PermutationEvent:
    epoch: int
    moved_count: int
    loss_before: float
    loss_after: float


@dataclass
class TrainReport:
    net: ReluNet
    history: list[dict] = field(default_factory=list)
    events: list[PermutationEvent] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"] if self.history else float("nan")

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=["epoch", "loss", "moved_count", "k", "lr"])

    def summary(self) -> dict:
        return {
            "epochs": len(self.history),
            "final_loss": self.final_loss,
            "events": len(self.events),
            "moved_total": int(sum(e.moved_count for e in self.events)),
            "wall_time": self.wall_time,
            "multiset_preserved": self.net.multiset_preserved(),
        }


def _pack(net: ReluNet) -> np.ndarray:
    return np.concatenate((net.theta, [net.alpha, net.gamma]))


def _unpack(net: ReluNet, params: np.ndarray) -> None:
    net.theta = params[:-2].copy()
    net.alpha, net.gamma = float(params[-2]), float(params[-1])


def _run(net: ReluNet, data: Dataset, cfg: TrainConfig, project: bool, tracer=None) -> TrainReport:
    start_time = time.time()
    net = net.copy()
    report = TrainReport(net=net)
    if cfg.epochs == 0:
        return report

    rng = np.random.default_rng(cfg.seed)
    features = net.basis.features(data.x, net.activation)
    W_init = net.initial_multiset
    state = AdamState(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    params = _pack(net)
    # theta steps are scaled to the coefficient range, so the relative moves between
    # projections do not depend on how large W was drawn
    coefficient_range = float(np.max(np.abs(W_init))) or 1.0
    step_scale = np.ones(len(params))
    step_scale[:-2] = coefficient_range
    step_scale[-1] = 1.0 / coefficient_range
    projected = net.theta.copy()
    k, lr = float(cfg.k), cfg.lr
    ticks = 0

    def projection(epoch: int) -> int:
        nonlocal params, projected, k
        _unpack(net, params)
        loss_before = mse_loss(net, None, data.y, features)
        theta_new = permute_to_initial(net.theta, W_init)
        net.theta = theta_new
        loss_after = mse_loss(net, None, data.y, features)
        moved = int(np.count_nonzero(theta_new != projected))
        if tracer is not None:
            tracer.record_event(projected, theta_new, epoch, (loss_before, loss_after))
        report.events.append(PermutationEvent(epoch, moved, loss_before, loss_after))
        if cfg.adaptive_k and loss_after > 1.1 * loss_before:
            k *= 2
            logger.debug(f"Epoch {epoch}: projection raised loss {loss_before:.3g} -> {loss_after:.3g}; k={k:.3g}.")
        projected = theta_new.copy()
        params = _pack(net)
        return moved

    for epoch in range(1, cfg.epochs + 1):
        moved_this_epoch = 0
        order = rng.permutation(len(data))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _unpack(net, params)
            d_theta, d_alpha, d_gamma = gradients(net, None, data.y[batch], features[batch])
            grads = np.concatenate((d_theta, [d_alpha, d_gamma]))
            if cfg.freeze_affine:
                grads[-2:] = 0.0
            params, state = adam_step(params, grads, state, lr * step_scale)
            if cfg.freeze_affine:
                params[-2:] = (net.alpha, net.gamma)
            if project and cfg.granularity == "batch":
                ticks += 1
                if ticks >= round(k):
                    moved_this_epoch += projection(epoch)
                    ticks = 0
        if project and cfg.granularity == "epoch":
            ticks += 1
            if ticks >= round(k):
                moved_this_epoch += projection(epoch)
                ticks = 0

        _unpack(net, params)
        report.history.append({
            "epoch": epoch,
            "loss": mse_loss(net, None, data.y, features),
            "moved_count": moved_this_epoch,
            "k": k,
            "lr": lr,
        })
        k *= cfg.k_growth
        lr *= cfg.lr_decay

    if project and ticks > 0:
        report.history[-1]["moved_count"] += projection(cfg.epochs)
        report.history[-1]["loss"] = mse_loss(net, None, data.y, features)
    _unpack(net, params)

    report.wall_time = time.time() - start_time
    if project and not net.multiset_preserved():
        raise RuntimeError("Permutation training lost the initial multiset.")
    logger.debug(f"Training finished: {cfg.epochs} epochs, {len(report.events)} projections, "
                 f"final loss {report.final_loss:.4g} in {report.wall_time:.1f}s.")
    return report


def laperm_train(net: ReluNet, data: Dataset, cfg: TrainConfig, tracer=None) -> TrainReport:
    """
    Adam on (theta, alpha, gamma) with theta projected back onto the initial multiset every k ticks.

    A tick is an epoch or a batch depending on cfg.granularity. k grows by k_growth and lr
    decays by lr_decay after every epoch. A final projection is applied if training ends
    between two projections, so the returned net always preserves the multiset.
    """
    return _run(net, data, cfg, project=True, tracer=tracer)


def train_free(net: ReluNet, data: Dataset, cfg: TrainConfig) -> TrainReport:
    """The same loop without projections: an unconstrained baseline."""
    return _run(net, data, cfg, project=False)
