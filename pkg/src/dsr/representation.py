"""Spike representations, surrogate clamp mappings, and error decomposition.

The representation of a spike train is the scaled firing rate (IF) or the
scaled exponentially weighted firing rate (LIF); both live in [0, b] with
b = V_th for IF and b = V_th/dt for LIF, and approximate the output of a
clamped linear map of the previous layer's representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .neuron import IF, LIF, NeuronParams, NeuronState, SpikeTrain, simulate_layer
from .tensor import ParameterError, Tensor


@dataclass
class Representation:
    o: np.ndarray
    model: str
    bound: float


@dataclass
class ErrorDecomposition:
    """e_r = e_q + e_d holds exactly by construction."""

    e_r: np.ndarray
    e_q: np.ndarray
    e_d: np.ndarray


def _lif_weights(n: int, lam: float) -> np.ndarray:
    if not 0.0 < lam < 1.0:
        raise ParameterError("lambda must be in (0,1)")
    return lam ** np.arange(n - 1, -1, -1, dtype=np.float64)


def rep_if(train: SpikeTrain, v_th: float) -> Representation:
    o = (v_th / train.n_steps) * train.s.sum(axis=0)
    return Representation(o=o, model=IF, bound=v_th)


def rep_lif(train: SpikeTrain, v_th: float, lam: float, dt: float) -> Representation:
    if dt <= 0:
        raise ParameterError("dt must be positive")
    w = _lif_weights(train.n_steps, lam)
    num = v_th * np.tensordot(w, train.s, axes=(0, 0))
    o = num / (w.sum() * dt)
    return Representation(o=o, model=LIF, bound=v_th / dt)


def represent(train: SpikeTrain, p: NeuronParams) -> Representation:
    if p.model == IF:
        return rep_if(train, p.v_th)
    return rep_lif(train, p.v_th, p.lam, p.dt)


def rep_input(frames: np.ndarray, model: str, lam: float = None, dt: float = None) -> Representation:
    """Representation of the input layer; the input threshold factor is 1.

    IF: time-mean of the frames. LIF: exponentially weighted time-mean
    divided by dt.
    """
    if model == IF:
        return Representation(o=frames.mean(axis=0), model=IF, bound=1.0)
    w = _lif_weights(frames.shape[0], lam)
    o = np.tensordot(w, frames, axes=(0, 0)) / (w.sum() * dt)
    return Representation(o=o, model=LIF, bound=1.0 / dt)


def surrogate_map_if(z_prev: Tensor, w: Tensor, v_th) -> Tensor:
    """clamp(W z, 0, V_th); differentiable wrt W, z and the threshold."""
    return T.clamp(T.matmul(z_prev, w), 0.0, v_th)


def surrogate_map_lif(z_prev: Tensor, w: Tensor, tau: float, v_th, dt: float) -> Tensor:
    """clamp((1/tau) W z, 0, V_th/dt); differentiable wrt W, z, V_th."""
    if dt >= tau:
        raise ParameterError("LIF surrogate requires dt < tau")
    hi = v_th * (1.0 / dt) if isinstance(v_th, Tensor) else v_th / dt
    return T.clamp(T.mul(T.matmul(z_prev, w), 1.0 / tau), 0.0, hi)


def closed_form_rate_if(i_star: float, v_th: float, n: int, alpha: float) -> float:
    """Constant-current IF firing rate: the staircase under the clamp curve.

    alpha=1 uses the floor form, alpha=0.5 the rounding form (half-integers
    round up, matching fire-at-equality); other alpha values are simulated.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    x = n * i_star / v_th
    if alpha == 1.0:
        k = math.floor(x)
    elif alpha == 0.5:
        k = math.floor(x + 0.5)
    else:
        return simulate_constant_rate(i_star, NeuronParams(IF, v_th, alpha=alpha), n)
    return (v_th / n) * min(max(k, 0), n)


def simulate_constant_rate(i_star: float, p: NeuronParams, n: int) -> float:
    """Representation of a single neuron driven by a constant current."""
    currents = np.full((n, 1), i_star, dtype=np.float64)
    train, _ = simulate_layer(NeuronState.zeros((1,)), currents, p)
    return float(represent(train, p).o[0])


def clamp_map_value(mean_current: np.ndarray, p: NeuronParams) -> np.ndarray:
    """The limiting clamp mapping the representation approximates."""
    if p.model == IF:
        return np.clip(mean_current, 0.0, p.v_th)
    return np.clip(mean_current / p.tau, 0.0, p.v_th / p.dt)


def _mean_current(currents: np.ndarray, p: NeuronParams) -> np.ndarray:
    if p.model == IF:
        return currents.mean(axis=0)
    w = _lif_weights(currents.shape[0], p.lam)
    return np.tensordot(w, currents, axes=(0, 0)) / w.sum()


def decompose_error(train: SpikeTrain, currents: np.ndarray, p: NeuronParams) -> ErrorDecomposition:
    """Split the representation error into quantization + deviation parts.

    e_r is measured against the clamp map at the (weighted) mean current;
    e_q is the constant-current error at that same mean current (closed form
    for IF, simulated for LIF); e_d is the remainder.
    """
    if train.s.shape != currents.shape:
        raise T.DimensionError("spike train / currents shape mismatch")
    mean_i = _mean_current(currents, p)
    target = clamp_map_value(mean_i, p)
    e_r = represent(train, p).o - target

    flat = mean_i.reshape(-1)
    if p.model == IF:
        const_rate = np.array(
            [closed_form_rate_if(v, p.v_th, train.n_steps, p.alpha) for v in flat]
        )
    else:
        const_rate = np.array(
            [simulate_constant_rate(v, p, train.n_steps) for v in flat]
        )
    e_q = const_rate.reshape(mean_i.shape) - target
    return ErrorDecomposition(e_r=e_r, e_q=e_q, e_d=e_r - e_q)
