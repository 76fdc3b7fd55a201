"""Discretized IF and LIF neuron simulation with subtraction reset.

The firing test uses the modified threshold ``U >= alpha * V_th`` (firing at
exact equality), and the membrane potential is reset by subtracting ``V_th``
after each spike. Membrane potentials may go negative for alpha < 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, ParameterError

IF = "if"
LIF = "lif"


@dataclass(frozen=True)
class NeuronParams:
    """Per-layer spiking parameters.

    ``lam = exp(-dt/tau)`` is the LIF decay factor per discrete step; the
    discretization is only valid for dt < tau.
    """

    model: str = IF
    v_th: float = 1.0
    tau: float = 1.0
    dt: float = 0.05
    alpha: float = 0.5

    def __post_init__(self):
        if self.model not in (IF, LIF):
            raise ParameterError(f"unknown neuron model {self.model!r}")
        if self.v_th <= 0:
            raise ParameterError("v_th must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError("alpha must be in [0,1]")
        if self.model == LIF:
            if self.tau <= 0 or self.dt <= 0:
                raise ParameterError("tau and dt must be positive")
            if self.dt >= self.tau:
                raise ParameterError("LIF discretization requires dt < tau")

    @property
    def lam(self) -> float:
        return math.exp(-self.dt / self.tau)

    @property
    def bound(self) -> float:
        """Upper end of the representation range: V_th (IF) or V_th/dt (LIF)."""
        return self.v_th if self.model == IF else self.v_th / self.dt

    def with_threshold(self, v_th: float) -> "NeuronParams":
        return NeuronParams(self.model, v_th, self.tau, self.dt, self.alpha)


# Best alpha for the LIF model depends on the latency; IF always uses 0.5.
LIF_ALPHA_BY_STEPS = {20: 0.3, 15: 0.4, 10: 0.4, 5: 0.5}


def default_alpha(model: str, n_steps: int) -> float:
    if model == IF:
        return 0.5
    if n_steps in LIF_ALPHA_BY_STEPS:
        return LIF_ALPHA_BY_STEPS[n_steps]
    # closest tabulated latency
    key = min(LIF_ALPHA_BY_STEPS, key=lambda k: abs(k - n_steps))
    return LIF_ALPHA_BY_STEPS[key]


@dataclass
class NeuronState:
    """Membrane potentials: v after reset, u pre-reset (transient)."""

    v: np.ndarray
    u: np.ndarray | None = None

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "NeuronState":
        return cls(v=np.zeros(shape, dtype=dtype))


@dataclass
class SpikeTrain:
    """Binary tensor with leading time extent."""

    s: np.ndarray

    def __post_init__(self):
        if self.s.ndim < 1 or self.s.shape[0] < 1:
            raise ParameterError("spike train needs a leading time extent >= 1")

    @property
    def n_steps(self) -> int:
        return self.s.shape[0]

    def rate(self) -> float:
        return float(self.s.mean())


def _fire(u: np.ndarray, p: NeuronParams):
    s = (u >= p.alpha * p.v_th).astype(u.dtype)
    return s, u - p.v_th * s


def if_step(state: NeuronState, current: np.ndarray, p: NeuronParams):
    if state.v.shape != current.shape:
        raise DimensionError("membrane/current shape mismatch")
    u = state.v + current
    s, v = _fire(u, p)
    return NeuronState(v=v, u=u), s


def lif_step(state: NeuronState, current: np.ndarray, p: NeuronParams):
    if p.model != LIF:
        raise ParameterError("lif_step requires LIF params")
    if state.v.shape != current.shape:
        raise DimensionError("membrane/current shape mismatch")
    lam = p.lam
    u = lam * state.v + (1.0 - lam) * current
    s, v = _fire(u, p)
    return NeuronState(v=v, u=u), s


def simulate_layer(initial: NeuronState, currents: np.ndarray, p: NeuronParams):
    """Run one spiking layer over the leading time extent of ``currents``."""
    n = currents.shape[0]
    if n < 1:
        raise ParameterError("need at least one time step")
    step = if_step if p.model == IF else lif_step
    state = initial
    spikes = np.empty_like(currents)
    for i in range(n):
        state, spikes[i] = step(state, currents[i], p)
    return SpikeTrain(s=spikes), state
