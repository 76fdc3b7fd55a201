"""Post-training weight quantization, firing-rate reporting, and the
staircase / convergence sweep experiments."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, batches, encode_static
from .engine import forward_collect
from .layers import FcSpec, NetworkSpec, SpikingSpec, build_network
from .neuron import IF, NeuronParams
from .representation import closed_form_rate_if, simulate_constant_rate
from .tensor import ParameterError, Tensor


@dataclass
class QuantSpec:
    bits: int = 8
    scheme: str = "symmetric-per-tensor"

    def __post_init__(self):
        if self.bits < 2:
            raise ParameterError("quantization needs at least 2 bits")
        if self.scheme != "symmetric-per-tensor":
            raise ParameterError(f"unknown quantization scheme {self.scheme!r}")


@dataclass
class SweepResult:
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ParameterError("row width does not match columns")
        for v in values:
            if isinstance(v, float) and not np.isfinite(v):
                raise ParameterError("sweep values must be finite")
        self.rows.append(list(values))

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())


def quantize_tensor(w: np.ndarray, bits: int) -> np.ndarray:
    """Symmetric per-tensor quantization: round(w/s)*s, s = max|w|/(2^(b-1)-1)."""
    levels = 2 ** (bits - 1) - 1
    s = np.abs(w).max() / levels
    if s == 0.0:
        return w.copy()
    return np.rint(w / s) * s


def quantize_weights(net, spec: QuantSpec):
    """Replace every weight tensor in place by its quantized value.

    Thresholds and BN parameters are untouched. Idempotent: re-quantizing
    an already quantized network is bit-exact. Returns the network.
    """
    for name, t in net.weight_tensors().items():
        t.data = quantize_tensor(t.data, spec.bits)
    return net


def firing_rate_report(net, dataset: Dataset, n_steps: int, batch_size: int = 256):
    """Mean spike rate per spiking layer over neurons, steps, and samples."""
    if len(dataset) == 0:
        raise ParameterError("empty dataset")
    totals = None
    n = 0
    for samples, _labels in batches(dataset, batch_size, shuffle=False):
        frames = encode_static(samples, n_steps)
        record = forward_collect(net, frames, mode="eval")
        r = np.asarray(record.firing_rates) * samples.shape[0]
        totals = r if totals is None else totals + r
        n += samples.shape[0]
    return (totals / n).tolist()


def sweep_staircase(v_th: float, n_steps: int, alpha: float, i_grid) -> SweepResult:
    """Constant-current IF firing rate: simulated vs closed form vs the clamp
    reference curve, per grid point."""
    i_grid = np.asarray(i_grid, dtype=np.float64)
    if i_grid.size == 0:
        raise ParameterError("empty current grid")
    p = NeuronParams(IF, v_th, alpha=alpha)
    res = SweepResult(["i_star", "simulated", "closed_form", "clamp_ref"])
    for i_star in i_grid:
        sim = simulate_constant_rate(float(i_star), p, n_steps)
        cf = closed_form_rate_if(float(i_star), v_th, n_steps, alpha)
        ref = float(np.clip(i_star, 0.0, v_th))
        res.add(float(i_star), sim, cf, ref)
    return res


def staircase_grid(v_th: float, n_steps: int, n_points: int = 200) -> np.ndarray:
    """Grid over [-0.5, 1.5]*V_th avoiding integer and half-integer
    breakpoints of N*I/V_th.

    Points sit at fractional offsets within each unit staircase cell; the
    offset set always contains 0.45 and 0.9 and otherwise stays below 0.45,
    so that the worst-case floor error (0.9 cells) is exactly twice the
    worst-case rounding error (0.45 cells) on the grid itself.
    """
    ks = np.arange(int(np.floor(-0.5 * n_steps)), int(np.ceil(1.5 * n_steps)))
    per_cell = max(2, int(np.ceil(n_points / ks.size)))
    offsets = [0.45, 0.9]
    if per_cell > 2:
        offsets = list(np.linspace(0.025, 0.425, per_cell - 2)) + offsets
    pts = (ks[:, None] + np.asarray(offsets)[None, :]).ravel() * v_th / n_steps
    pts = pts[(pts >= -0.5 * v_th) & (pts <= 1.5 * v_th)]
    pts.sort()
    return pts[:n_points]


def two_layer_if_spec(widths=(16, 16, 8), v_th: float = 1.0) -> NetworkSpec:
    layers = []
    for i in range(len(widths) - 1):
        layers += [FcSpec(widths[i], widths[i + 1]), SpikingSpec(v_th=v_th)]
    return NetworkSpec(input_shape=(widths[0],), layers=layers, model=IF,
                       alpha=1.0, v_th_init=v_th)


def chain_values(net, o0: np.ndarray) -> list[np.ndarray]:
    """Surrogate activations z^i per spiking layer (no simulation)."""
    frames = encode_static(o0, 1)
    # run a throwaway temporal pass to populate the record stream layout
    record = forward_collect(net, frames, mode="eval")
    ctx = record.ctx
    # replace substitution values with the chain's own outputs
    zs = []
    ctx.cursor = 0
    z = Tensor(o0)
    for layer in net.layers:
        z = _chain_no_subst(layer, z, ctx, zs)
    return zs


def _chain_no_subst(layer, z, ctx, zs):
    from .layers import ResidualLayer, SpikingLayer
    from . import tensor as T

    if isinstance(layer, SpikingLayer):
        tag, _rep, _rate = ctx.pop()
        assert tag == "spiking"
        s = layer.net.spec
        if s.model == IF:
            out = T.clamp(z, 0.0, layer.threshold)
        else:
            out = T.clamp(T.mul(z, 1.0 / s.tau), 0.0,
                          T.mul(layer.threshold, 1.0 / s.dt))
        zs.append(out.data.copy())
        return out
    if isinstance(layer, ResidualLayer):
        y = z
        for l in layer.body:
            y = _chain_no_subst(l, y, ctx, zs)
        short = z if layer.projection is None else _chain_no_subst(layer.projection, z, ctx, zs)
        return T.add(y, short)
    return layer.chain_forward(z, ctx)


def sweep_convergence(net_spec: NetworkSpec, n_list, seed: int = 0,
                      batch: int = 32) -> SweepResult:
    """Per latency N, the layerwise max |representation - surrogate activation|
    for constant random inputs in [0,1]."""
    if len(list(n_list)) == 0:
        raise ParameterError("empty N list")
    net = build_network(net_spec, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(batch,) + tuple(net_spec.input_shape))
    zs = chain_values(net, x)
    res = SweepResult(["n_steps"] + [f"layer{i}_err" for i in range(len(zs))] + ["max_err"])
    for n in n_list:
        frames = encode_static(x, int(n))
        record = forward_collect(net, frames, mode="eval")
        reps = record.representations()
        errs = [float(np.max(np.abs(r - z))) for r, z in zip(reps, zs)]
        res.add(int(n), *errs, max(errs))
    return res


def sweep_error_decomposition(v_th: float, n_steps: int, alpha: float, i_grid) -> SweepResult:
    """Quantization error of the constant-current staircase per grid point."""
    i_grid = np.asarray(i_grid, dtype=np.float64)
    if i_grid.size == 0:
        raise ParameterError("empty current grid")
    res = SweepResult(["i_star", "e_q"])
    for i_star in i_grid:
        cf = closed_form_rate_if(float(i_star), v_th, n_steps, alpha)
        ref = float(np.clip(i_star, 0.0, v_th))
        res.add(float(i_star), cf - ref)
    return res
