"""The DSR training loop: temporal forward producing representations,
backward through the surrogate clamp chain, threshold training with L2
regularization and gradient scaling, optimizers and the cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import ForwardContext, Network, network_chain_forward, network_time_forward
from .neuron import IF, LIF
from .representation import rep_input
from .tensor import ParameterError, Tensor, UsageError


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes NaN; never silently clipped."""


@dataclass
class TrainConfig:
    n_steps: int = 10
    epochs: int = 10
    batch_size: int = 64
    optimizer: str = "sgd-momentum"  # or "adam"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    cosine_horizon: int | None = None  # defaults to epochs
    threshold_l2: float = 1e-3
    threshold_floor: float = 0.01
    threshold_grad_rule: str = "batch-scaled"  # or "raw"
    train_thresholds: bool = True
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.n_steps < 1:
            raise ParameterError("n_steps must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.threshold_floor <= 0:
            raise ParameterError("threshold floor must be positive")
        if self.optimizer not in ("sgd-momentum", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.threshold_grad_rule not in ("batch-scaled", "raw"):
            raise ParameterError(f"unknown threshold grad rule {self.threshold_grad_rule!r}")

    @property
    def horizon(self) -> int:
        return self.cosine_horizon if self.cosine_horizon is not None else self.epochs


@dataclass
class TrainMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float
    mean_v_th: list[float] = field(default_factory=list)
    firing_rate: list[float] = field(default_factory=list)


@dataclass
class ForwardRecord:
    """Everything surrogate_backward needs from one temporal forward."""

    o0: np.ndarray
    ctx: ForwardContext
    logits: np.ndarray  # representation of the last spiking layer
    firing_rates: list[float]

    def representations(self) -> list[np.ndarray]:
        return [r[1] for r in self.ctx.records if r[0] == "spiking"]


def forward_collect(net: Network, frames: np.ndarray, mode: str = "train",
                    rng: np.random.Generator | None = None) -> ForwardRecord:
    """Simulate spikes (no gradient tracking) and collect each spiking
    layer's representation; the network output is the last representation."""
    ctx = ForwardContext(mode=mode, rng=rng)
    _, ctx = network_time_forward(net, frames, ctx)
    spiking = [r for r in ctx.records if r[0] == "spiking"]
    if not spiking:
        raise UsageError("network has no spiking layers")
    o0 = forward_collect_input(net, frames)
    return ForwardRecord(
        o0=o0,
        ctx=ctx,
        logits=spiking[-1][1],
        firing_rates=[r[2] for r in spiking],
    )


def forward_collect_input(net: Network, frames: np.ndarray):
    s = net.spec
    if s.model == IF:
        return rep_input(frames, IF).o
    return rep_input(frames, LIF, math.exp(-s.dt / s.tau), s.dt).o


def surrogate_backward(record: ForwardRecord, labels: np.ndarray, net: Network):
    """Backpropagate through the surrogate clamp chain.

    The chain is rebuilt layer by layer on the collected representations:
    forward values are the simulated representations (value substitution at
    each spiking layer), derivatives are those of the clamp mappings. Fills
    ``grad`` on every weight, BN affine, and threshold tensor. Returns the
    data loss (a scalar Tensor whose value used the simulated logits).
    """
    if not record.ctx.records:
        raise UsageError("record holds no forward pass")
    for p in net.parameters().values():
        p.zero_grad()
    logits = network_chain_forward(net, record.o0, record.ctx)
    if logits.ndim != 2:
        raise UsageError("network output must be [B,K] representations")
    loss = T.softmax_cross_entropy(logits, labels)
    loss.backward()
    return loss


def scale_threshold_grad(raw_grad: float, batch_size: int, model: str,
                         rule: str = "batch-scaled", dt: float = 0.05) -> float:
    """Scale the clamp-bound gradient contribution for batch size and model.

    Default rule: divide by the batch size; for LIF additionally multiply by
    dt so the V_th/dt bound contributes a unit-scale gradient to V_th.
    """
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    if rule == "raw":
        return raw_grad
    g = raw_grad / batch_size
    if model == LIF:
        g *= dt
    return g


def regularize_thresholds(thresholds: list[Tensor], coeff: float) -> float:
    """L2 penalty coeff * sum(V_th^2); adds 2*coeff*V_th to each grad.

    Returns the penalty value. No-op for coeff = 0.
    """
    if coeff < 0:
        raise ParameterError("coefficient must be >= 0")
    total = 0.0
    for t in thresholds:
        v = float(t.data)
        total += coeff * v * v
        if coeff:
            g = np.asarray(2.0 * coeff * v, dtype=t.data.dtype)
            if t.grad is None:
                t.grad = g.reshape(t.shape).copy()
            else:
                t.grad = t.grad + g
    return total


def cosine_lr(epoch: int, lr0: float, horizon: int) -> float:
    """lr(e) = lr0 * (1 + cos(pi e/horizon)) / 2, clamped past the horizon."""
    if horizon <= 0:
        return lr0
    e = min(max(epoch, 0), horizon)
    return lr0 * (1.0 + math.cos(math.pi * e / horizon)) / 2.0


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class SgdMomentum:
    def __init__(self, params: dict, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, lr: float):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and name.endswith(".weight"):
                g = g + self.weight_decay * p.data
            buf = self.buffers[name]
            buf *= self.momentum
            buf += g
            p.data -= lr * buf


class Adam:
    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and name.endswith(".weight"):
                g = g + self.weight_decay * p.data
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(net: Network, config: TrainConfig):
    params = dict(net.parameters())
    if not config.train_thresholds:
        params = {k: v for k, v in params.items() if not k.endswith(".threshold")}
    if config.optimizer == "adam":
        return Adam(params, weight_decay=config.weight_decay)
    return SgdMomentum(params, config.momentum, config.weight_decay)


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

class Trainer:
    """Owns the network parameters; one optimizer, one rng, one schedule."""

    def __init__(self, net: Network, config: TrainConfig):
        self.net = net
        self.config = config
        self.optimizer = make_optimizer(net, config)
        self.rng = np.random.default_rng(config.seed)
        self.lr = config.lr

    def set_epoch(self, epoch: int):
        self.lr = cosine_lr(epoch, self.config.lr, self.config.horizon)

    def train_step(self, frames: np.ndarray, labels: np.ndarray):
        """One DSR iteration: simulate, backprop the surrogate chain, scale
        and regularize threshold gradients, update, clamp thresholds."""
        cfg = self.config
        record = forward_collect(self.net, frames, mode="train", rng=self.rng)
        loss = surrogate_backward(record, labels, self.net)
        loss_val = float(loss.data)
        if not math.isfinite(loss_val):
            raise TrainingDiverged(f"loss is not finite: {loss_val}")

        thresholds = list(self.net.threshold_tensors().values())
        batch = labels.shape[0]
        if cfg.train_thresholds:
            for t in thresholds:
                # the loss is batch-mean reduced; the scaling rule expects the
                # per-sample summed clamp-bound gradient
                raw = 0.0 if t.grad is None else float(t.grad) * batch
                scaled = scale_threshold_grad(
                    raw, batch, self.net.spec.model, cfg.threshold_grad_rule,
                    self.net.spec.dt,
                )
                t.grad = np.asarray(scaled, dtype=t.data.dtype).reshape(t.shape)
            reg = regularize_thresholds(thresholds, cfg.threshold_l2)
        else:
            reg = 0.0
            for t in thresholds:
                t.grad = None

        for p in self.net.parameters().values():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingDiverged("non-finite gradient")

        self.optimizer.step(self.lr)
        for t in thresholds:
            if float(t.data) < cfg.threshold_floor:
                t.data = np.asarray(cfg.threshold_floor, dtype=t.data.dtype)

        acc = float((record.logits.argmax(axis=1) == labels).mean())
        return {
            "loss": loss_val,
            "reg_loss": reg,
            "acc": acc,
            "firing_rate": record.firing_rates,
        }

    def recalibrate_bn(self, frames_iter, max_batches: int = 8):
        """Refresh BN running statistics at the current weights.

        Spiking signals make the training-time EMA noisy, and threshold
        updates shift layer scales faster than the EMA tracks; averaging
        batch statistics over a few calibration batches removes the lag.
        """
        bns = self.net.bn_layers()
        if not bns:
            return
        sums = None
        n = 0
        for frames, _labels in frames_iter:
            record = forward_collect(self.net, frames, mode="train", rng=self.rng)
            stats = [r[1] for r in record.ctx.records if r[0] == "bn"]
            if sums is None:
                sums = [(m.copy(), v.copy()) for m, v in stats]
            else:
                for (sm, sv), (m, v) in zip(sums, stats):
                    sm += m
                    sv += v
            n += 1
            if n >= max_batches:
                break
        if n == 0:
            raise ParameterError("empty calibration set")
        for bn, (sm, sv) in zip(bns, sums):
            bn.params.running_mean[...] = sm / n
            bn.params.running_var[...] = sv / n

    def evaluate(self, frames_iter):
        """Accuracy over an iterable of (frames, labels) batches (eval mode)."""
        correct = total = 0
        rates = None
        n_batches = 0
        for frames, labels in frames_iter:
            record = forward_collect(self.net, frames, mode="eval")
            correct += int((record.logits.argmax(axis=1) == labels).sum())
            total += labels.shape[0]
            r = np.asarray(record.firing_rates)
            rates = r if rates is None else rates + r
            n_batches += 1
        if total == 0:
            raise ParameterError("empty evaluation set")
        return correct / total, (rates / n_batches).tolist()
