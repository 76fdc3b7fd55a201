"""Network construction and the temporal / surrogate-chain forward passes.

A network is an ordered list of layers built from a declarative spec.
Non-spiking layers transform the instantaneous signal (time and batch axes
folded together); spiking layers integrate currents sequentially over time
and emit scaled spikes. Batch norm is computed over the folded time*batch
axis. The surrogate chain replays the same layer sequence on per-layer
representations, with clamps standing in for the spiking dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .neuron import IF, LIF, NeuronParams, NeuronState, simulate_layer
from .representation import represent
from .tensor import DimensionError, ParameterError, Tensor


class SpecError(ValueError):
    """Raised when an architecture spec is inconsistent."""


# ---------------------------------------------------------------------------
# layer specs
# ---------------------------------------------------------------------------

@dataclass
class FcSpec:
    in_features: int
    out_features: int
    kind: str = "fc"


@dataclass
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    kind: str = "conv"


@dataclass
class AvgPoolSpec:
    k: int = 2
    kind: str = "avgpool"


@dataclass
class BNSpec:
    features: int
    kind: str = "bn"


@dataclass
class SpikingSpec:
    v_th: float | None = None  # None -> network default initial threshold
    kind: str = "spiking"


@dataclass
class DropoutSpec:
    p: float = 0.1
    kind: str = "dropout"


@dataclass
class FlattenSpec:
    kind: str = "flatten"


@dataclass
class ResidualSpec:
    body: list = field(default_factory=list)
    projection: object | None = None  # ConvSpec/FcSpec or None for identity
    kind: str = "residual-block"


@dataclass
class NetworkSpec:
    input_shape: tuple
    layers: list
    model: str = IF
    alpha: float = 0.5
    tau: float = 1.0
    dt: float = 0.05
    v_th_init: float = 6.0


_SPEC_KINDS = {
    "fc": FcSpec,
    "conv": ConvSpec,
    "avgpool": AvgPoolSpec,
    "bn": BNSpec,
    "spiking": SpikingSpec,
    "dropout": DropoutSpec,
    "flatten": FlattenSpec,
    "residual-block": ResidualSpec,
}


def layer_spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _SPEC_KINDS:
        raise SpecError(f"unknown layer kind {kind!r}")
    if kind == "residual-block":
        body = [layer_spec_from_dict(b) for b in d.pop("body", [])]
        proj = d.pop("projection", None)
        proj = layer_spec_from_dict(proj) if proj is not None else None
        if d:
            raise SpecError(f"unknown keys in residual-block: {sorted(d)}")
        return ResidualSpec(body=body, projection=proj)
    cls = _SPEC_KINDS[kind]
    try:
        return cls(**d)
    except TypeError as e:
        raise SpecError(f"bad {kind} layer spec: {e}") from None


def layer_spec_to_dict(s) -> dict:
    if isinstance(s, ResidualSpec):
        d = {"kind": "residual-block", "body": [layer_spec_to_dict(b) for b in s.body]}
        if s.projection is not None:
            d["projection"] = layer_spec_to_dict(s.projection)
        return d
    d = {k: v for k, v in s.__dict__.items()}
    d["kind"] = d.pop("kind")
    return d


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

@dataclass
class BNParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, features: int, dtype=np.float64) -> "BNParams":
        return cls(
            gamma=np.ones(features, dtype=dtype),
            beta=np.zeros(features, dtype=dtype),
            running_mean=np.zeros(features, dtype=dtype),
            running_var=np.ones(features, dtype=dtype),
        )


def _bn_axes(x: np.ndarray):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise DimensionError("batch norm expects 2-D or 4-D folded input")


def bn_timefold(x: np.ndarray, params: BNParams, mode: str = "train"):
    """Batch norm over the pre-folded time*batch axis.

    In train mode statistics are computed over the folded axis (and spatial
    axes for conv inputs) and the running statistics are updated in place;
    in eval mode the running statistics are used. Returns the normalized
    output and the (mean, var) actually applied.
    """
    if x.shape[0] == 0:
        raise ParameterError("empty folded batch")
    axes, bshape = _bn_axes(x)
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = params.momentum
        params.running_mean += m * (mean - params.running_mean)
        params.running_var += m * (var - params.running_var)
    elif mode == "eval":
        mean, var = params.running_mean, params.running_var
    else:
        raise ParameterError(f"unknown BN mode {mode!r}")
    inv = 1.0 / np.sqrt(var + params.eps)
    out = params.gamma.reshape(bshape) * (x - mean.reshape(bshape)) * inv.reshape(
        bshape
    ) + params.beta.reshape(bshape)
    return out, (mean, var)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class ForwardContext:
    """Per-pass state: mode, rng for dropout, and the record stream that the
    surrogate chain later consumes in the same traversal order."""

    def __init__(self, mode: str = "train", rng: np.random.Generator | None = None):
        self.mode = mode
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.records: list = []
        self.cursor = 0

    def push(self, item):
        self.records.append(item)

    def pop(self):
        item = self.records[self.cursor]
        self.cursor += 1
        return item


def _fold(x):
    n, b = x.shape[0], x.shape[1]
    return x.reshape((n * b,) + x.shape[2:]), n, b


def _unfold(x, n, b):
    return x.reshape((n, b) + x.shape[1:])


class FcLayer:
    def __init__(self, spec: FcSpec, rng, dtype):
        std = np.sqrt(1.0 / spec.in_features)
        self.weight = Tensor(
            rng.normal(0.0, std, size=(spec.in_features, spec.out_features)),
            requires_grad=True,
            dtype=dtype,
        )
        self.spec = spec

    def time_forward(self, x, ctx):
        f, n, b = _fold(x)
        return _unfold(f @ self.weight.data, n, b)

    def chain_forward(self, z, ctx):
        return T.matmul(z, self.weight)


class ConvLayer:
    def __init__(self, spec: ConvSpec, rng, dtype):
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        std = np.sqrt(1.0 / fan_in)
        self.weight = Tensor(
            rng.normal(
                0.0,
                std,
                size=(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel),
            ),
            requires_grad=True,
            dtype=dtype,
        )
        self.spec = spec

    def _apply(self, f):
        t = T.conv2d(
            Tensor(f), Tensor(self.weight.data), self.spec.stride, self.spec.padding
        )
        return t.data

    def time_forward(self, x, ctx):
        f, n, b = _fold(x)
        return _unfold(self._apply(f), n, b)

    def chain_forward(self, z, ctx):
        return T.conv2d(z, self.weight, self.spec.stride, self.spec.padding)


class AvgPoolLayer:
    def __init__(self, spec: AvgPoolSpec):
        self.spec = spec

    def time_forward(self, x, ctx):
        f, n, b = _fold(x)
        return _unfold(T.avg_pool2d(Tensor(f), self.spec.k).data, n, b)

    def chain_forward(self, z, ctx):
        return T.avg_pool2d(z, self.spec.k)


class BatchNormLayer:
    def __init__(self, spec: BNSpec, dtype):
        self.params = BNParams.create(spec.features, dtype)
        self.gamma = Tensor(self.params.gamma, requires_grad=True, dtype=dtype)
        self.beta = Tensor(self.params.beta, requires_grad=True, dtype=dtype)
        # the Tensors own the arrays; keep BNParams views in sync
        self.params.gamma = self.gamma.data
        self.params.beta = self.beta.data
        self.spec = spec
        self.name = "bn"

    def time_forward(self, x, ctx):
        # optimizer steps may rebind the tensors' arrays
        self.params.gamma = self.gamma.data
        self.params.beta = self.beta.data
        f, n, b = _fold(x)
        out, stats = bn_timefold(f, self.params, ctx.mode)
        ctx.push(("bn", stats))
        return _unfold(out, n, b)

    def chain_forward(self, z, ctx):
        tag, (mean, var) = ctx.pop()
        assert tag == "bn"
        return T.channel_affine(z, self.gamma, self.beta, mean, var, self.params.eps)


class DropoutLayer:
    def __init__(self, spec: DropoutSpec):
        if not 0.0 <= spec.p < 1.0:
            raise SpecError("dropout probability must be in [0,1)")
        self.spec = spec

    def time_forward(self, x, ctx):
        if ctx.mode != "train" or self.spec.p == 0.0:
            ctx.push(("dropout", None))
            return x
        # one mask per forward pass, shared across all time steps
        keep = 1.0 - self.spec.p
        mask = (ctx.rng.random(x.shape[1:]) < keep).astype(x.dtype) / keep
        ctx.push(("dropout", mask))
        return x * mask[None]

    def chain_forward(self, z, ctx):
        tag, mask = ctx.pop()
        assert tag == "dropout"
        if mask is None:
            return z
        return T.mul(z, Tensor(mask))


class FlattenLayer:
    def time_forward(self, x, ctx):
        n, b = x.shape[0], x.shape[1]
        return x.reshape(n, b, -1)

    def chain_forward(self, z, ctx):
        return T.reshape(z, (z.shape[0], -1))


class SpikingLayer:
    """Integrate-and-fire over time; emits b*s so downstream weights see the
    scaled spike currents of the network dynamics."""

    def __init__(self, spec: SpikingSpec, net: "Network", dtype):
        init = spec.v_th if spec.v_th is not None else net.spec.v_th_init
        self.threshold = Tensor(np.asarray(init, dtype=dtype), requires_grad=True)
        self.net = net
        self.spec = spec

    def neuron_params(self) -> NeuronParams:
        s = self.net.spec
        return NeuronParams(s.model, float(self.threshold.data), s.tau, s.dt, s.alpha)

    def time_forward(self, x, ctx):
        p = self.neuron_params()
        train, _ = simulate_layer(
            NeuronState.zeros(x.shape[1:], dtype=x.dtype), x, p
        )
        rep = represent(train, p)
        ctx.push(("spiking", rep.o, float(train.s.mean())))
        scale = p.v_th if p.model == IF else p.v_th / p.dt
        return scale * train.s

    def chain_forward(self, z, ctx):
        tag, rep_value, _rate = ctx.pop()
        assert tag == "spiking"
        s = self.net.spec
        if s.model == IF:
            zc = T.clamp(z, 0.0, self.threshold)
        else:
            hi = T.mul(self.threshold, 1.0 / s.dt)
            zc = T.clamp(T.mul(z, 1.0 / s.tau), 0.0, hi)
        return T.with_value(zc, rep_value)


class ResidualLayer:
    """Pre-activation style block: instantaneous currents of the body and the
    shortcut are added; any spiking layer follows outside or inside the body."""

    def __init__(self, body: list, projection):
        self.body = body
        self.projection = projection

    def time_forward(self, x, ctx):
        y = x
        for layer in self.body:
            y = layer.time_forward(y, ctx)
        shortcut = x if self.projection is None else self.projection.time_forward(x, ctx)
        if y.shape != shortcut.shape:
            raise DimensionError("residual join shape mismatch")
        return y + shortcut

    def chain_forward(self, z, ctx):
        y = z
        for layer in self.body:
            y = layer.chain_forward(y, ctx)
        shortcut = z if self.projection is None else self.projection.chain_forward(z, ctx)
        return T.add(y, shortcut)


# ---------------------------------------------------------------------------
# shape validation
# ---------------------------------------------------------------------------

def _propagate_shape(spec, shape):
    if isinstance(spec, FcSpec):
        if shape != (spec.in_features,):
            raise SpecError(f"fc expects ({spec.in_features},), got {shape}")
        return (spec.out_features,)
    if isinstance(spec, ConvSpec):
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise SpecError(f"conv expects (C={spec.in_channels},H,W), got {shape}")
        c, h, w = shape
        hp, wp = h + 2 * spec.padding, w + 2 * spec.padding
        if spec.kernel > hp or spec.kernel > wp:
            raise SpecError("conv kernel larger than padded input")
        ho = (hp - spec.kernel) // spec.stride + 1
        wo = (wp - spec.kernel) // spec.stride + 1
        return (spec.out_channels, ho, wo)
    if isinstance(spec, AvgPoolSpec):
        if len(shape) != 3:
            raise SpecError("avgpool expects a (C,H,W) shape")
        c, h, w = shape
        if h % spec.k or w % spec.k:
            raise SpecError(f"avgpool k={spec.k} does not divide {h}x{w}")
        return (c, h // spec.k, w // spec.k)
    if isinstance(spec, BNSpec):
        feat = shape[0] if len(shape) == 3 else shape[0]
        if feat != spec.features:
            raise SpecError(f"bn expects {spec.features} features, got {feat}")
        return shape
    if isinstance(spec, FlattenSpec):
        return (int(np.prod(shape)),)
    if isinstance(spec, (SpikingSpec, DropoutSpec)):
        return shape
    if isinstance(spec, ResidualSpec):
        out = shape
        for s in spec.body:
            out = _propagate_shape(s, out)
        short = shape
        if spec.projection is not None:
            short = _propagate_shape(spec.projection, shape)
        if out != short:
            raise SpecError(f"residual shapes differ: body {out} vs shortcut {short}")
        return out
    raise SpecError(f"unknown spec {spec!r}")


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

class Network:
    def __init__(self, spec: NetworkSpec, layers: list, registry: dict):
        self.spec = spec
        self.layers = layers
        self.registry = registry  # name -> Tensor, each parameter exactly once

    def parameters(self):
        return self.registry

    def weight_tensors(self):
        return {k: v for k, v in self.registry.items() if k.endswith(".weight")}

    def threshold_tensors(self):
        return {k: v for k, v in self.registry.items() if k.endswith(".threshold")}

    def spiking_layers(self):
        out = []

        def walk(layers):
            for l in layers:
                if isinstance(l, SpikingLayer):
                    out.append(l)
                elif isinstance(l, ResidualLayer):
                    walk(l.body)
                    if l.projection is not None:
                        walk([l.projection])

        walk(self.layers)
        return out

    def extra_state(self) -> dict:
        """Non-trainable arrays (BN running statistics), by name."""
        out = {}
        for bn in self.bn_layers():
            out[f"{bn.name}.running_mean"] = bn.params.running_mean
            out[f"{bn.name}.running_var"] = bn.params.running_var
        return out

    def bn_layers(self):
        out = []

        def walk(layers):
            for l in layers:
                if isinstance(l, BatchNormLayer):
                    out.append(l)
                elif isinstance(l, ResidualLayer):
                    walk(l.body)
                    if l.projection is not None:
                        walk([l.projection])

        walk(self.layers)
        return out


def _build_layer(spec, net, rng, dtype, registry, prefix):
    if isinstance(spec, FcSpec):
        l = FcLayer(spec, rng, dtype)
        registry[f"{prefix}.weight"] = l.weight
        return l
    if isinstance(spec, ConvSpec):
        l = ConvLayer(spec, rng, dtype)
        registry[f"{prefix}.weight"] = l.weight
        return l
    if isinstance(spec, AvgPoolSpec):
        return AvgPoolLayer(spec)
    if isinstance(spec, BNSpec):
        l = BatchNormLayer(spec, dtype)
        l.name = prefix
        registry[f"{prefix}.gamma"] = l.gamma
        registry[f"{prefix}.beta"] = l.beta
        return l
    if isinstance(spec, SpikingSpec):
        l = SpikingLayer(spec, net, dtype)
        registry[f"{prefix}.threshold"] = l.threshold
        return l
    if isinstance(spec, DropoutSpec):
        return DropoutLayer(spec)
    if isinstance(spec, FlattenSpec):
        return FlattenLayer()
    if isinstance(spec, ResidualSpec):
        body = [
            _build_layer(s, net, rng, dtype, registry, f"{prefix}.body{i}")
            for i, s in enumerate(spec.body)
        ]
        proj = None
        if spec.projection is not None:
            proj = _build_layer(spec.projection, net, rng, dtype, registry, f"{prefix}.proj")
        return ResidualLayer(body, proj)
    raise SpecError(f"unknown spec {spec!r}")


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float64) -> Network:
    """Validate shapes and construct the network with fresh parameters."""
    shape = tuple(spec.input_shape)
    for s in spec.layers:
        shape = _propagate_shape(s, shape)
    if spec.model == LIF and spec.dt >= spec.tau:
        raise SpecError("LIF network requires dt < tau")
    rng = np.random.default_rng(seed)
    registry: dict = {}
    net = Network(spec, [], registry)
    net.layers = [
        _build_layer(s, net, rng, dtype, registry, f"layer{i}")
        for i, s in enumerate(spec.layers)
    ]
    return net


def network_time_forward(net: Network, frames: np.ndarray, ctx: ForwardContext | None = None):
    """Simulate all layers over the leading time extent of ``frames``.

    Membrane state is created fresh per call (V[0] = 0). Returns the output
    signal [N,B,...] and the context holding per-layer records.
    """
    if frames.shape[0] < 1:
        raise ParameterError("need at least one time step")
    if ctx is None:
        ctx = ForwardContext(mode="eval")
    x = frames if net.spec.model == IF else frames / net.spec.dt
    for layer in net.layers:
        x = layer.time_forward(x, ctx)
    return x, ctx


def network_chain_forward(net: Network, o0: np.ndarray, ctx: ForwardContext) -> Tensor:
    """Rebuild the differentiable surrogate chain from recorded per-layer
    values; must be called with the context of a prior time forward."""
    ctx.cursor = 0
    z = Tensor(o0)
    for layer in net.layers:
        z = layer.chain_forward(z, ctx)
    return z


# ---------------------------------------------------------------------------
# architecture presets
# ---------------------------------------------------------------------------

def _basic_block(in_ch, out_ch, stride):
    body = [
        BNSpec(in_ch),
        SpikingSpec(),
        ConvSpec(in_ch, out_ch, 3, stride, 1),
        BNSpec(out_ch),
        SpikingSpec(),
        ConvSpec(out_ch, out_ch, 3, 1, 1),
    ]
    proj = None
    if stride != 1 or in_ch != out_ch:
        proj = ConvSpec(in_ch, out_ch, 1, stride, 0)
    return ResidualSpec(body=body, projection=proj)


def preact_resnet_spec(depth: int, in_shape=(3, 32, 32), n_classes=10, **neuron) -> NetworkSpec:
    """Narrow pre-activation ResNet: 3 groups with channels 16/32/64 and
    (depth-2)/6 blocks per group; spiking neurons follow pooling and the
    final classifier, with an extra BN before the last spiking layer."""
    if (depth - 2) % 6:
        raise SpecError("preact resnet depth must be 6n+2")
    n_blocks = (depth - 2) // 6
    layers: list = [ConvSpec(in_shape[0], 16, 3, 1, 1)]
    ch = 16
    shape_hw = in_shape[1]
    for g, out_ch in enumerate((16, 32, 64)):
        for b in range(n_blocks):
            stride = 2 if (g > 0 and b == 0) else 1
            layers.append(_basic_block(ch, out_ch, stride))
            ch = out_ch
            if stride == 2:
                shape_hw //= 2
    layers += [
        BNSpec(ch),
        SpikingSpec(),
        AvgPoolSpec(shape_hw),
        SpikingSpec(),
        FlattenSpec(),
        FcSpec(ch, n_classes),
        BNSpec(n_classes),
        SpikingSpec(),
    ]
    return NetworkSpec(input_shape=in_shape, layers=layers, **neuron)


def small_conv_spec(in_shape=(1, 16, 16), n_classes=10, ch=(16, 32), hidden=128, **neuron) -> NetworkSpec:
    """Desk-scale net: 2 conv + 2 fc, spiking once per stage.

    Average pooling acts on the spike currents directly; adding another
    spiking layer behind each pool costs several accuracy points at low
    latency because every extra spiking stage adds quantization noise.
    """
    c, h, w = in_shape
    layers = [
        ConvSpec(c, ch[0], 3, 1, 1),
        BNSpec(ch[0]),
        SpikingSpec(),
        AvgPoolSpec(2),
        ConvSpec(ch[0], ch[1], 3, 1, 1),
        BNSpec(ch[1]),
        SpikingSpec(),
        AvgPoolSpec(2),
        FlattenSpec(),
        FcSpec(ch[1] * (h // 4) * (w // 4), hidden),
        BNSpec(hidden),
        SpikingSpec(),
        FcSpec(hidden, n_classes),
        BNSpec(n_classes),
        SpikingSpec(),
    ]
    return NetworkSpec(input_shape=in_shape, layers=layers, **neuron)
