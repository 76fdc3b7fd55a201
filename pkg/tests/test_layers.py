"""Network construction, BN time-fold equivalence, temporal forward."""

import numpy as np
import pytest

from dsr.layers import (
    AvgPoolSpec,
    BNParams,
    BNSpec,
    ConvSpec,
    DropoutSpec,
    FcSpec,
    FlattenSpec,
    ForwardContext,
    NetworkSpec,
    ResidualSpec,
    SpecError,
    SpikingSpec,
    bn_timefold,
    build_network,
    layer_spec_from_dict,
    layer_spec_to_dict,
    network_chain_forward,
    network_time_forward,
    preact_resnet_spec,
    small_conv_spec,
)
from dsr.neuron import IF, LIF, NeuronParams, NeuronState, simulate_layer
from dsr.tensor import ParameterError


class TestBuild:
    def test_minimal_counts(self):
        spec = NetworkSpec(input_shape=(784,),
                           layers=[FcSpec(784, 10), BNSpec(10), SpikingSpec()])
        net = build_network(spec)
        assert len(net.weight_tensors()) == 1
        assert len(net.threshold_tensors()) == 1
        assert len(net.bn_layers()) == 1

    def test_shape_mismatch_rejected(self):
        spec = NetworkSpec(input_shape=(10,),
                           layers=[FcSpec(10, 20), FcSpec(30, 5)])
        with pytest.raises(SpecError):
            build_network(spec)

    def test_preact_resnet20_structure(self):
        spec = preact_resnet_spec(20)
        net = build_network(spec)
        res = [l for l in spec.layers if isinstance(l, ResidualSpec)]
        assert len(res) == 9  # 3 groups x 3 blocks
        convs = [s for s in net.weight_tensors().values() if s.ndim == 4]
        chans = sorted({w.shape[0] for w in convs})
        assert chans == [16, 32, 64]

    def test_bad_depth(self):
        with pytest.raises(SpecError):
            preact_resnet_spec(21)

    def test_conv_kernel_too_large(self):
        spec = NetworkSpec(input_shape=(1, 2, 2),
                           layers=[ConvSpec(1, 4, kernel=7, padding=0)])
        with pytest.raises(SpecError):
            build_network(spec)

    def test_avgpool_divisibility(self):
        spec = NetworkSpec(input_shape=(1, 5, 5), layers=[AvgPoolSpec(2)])
        with pytest.raises(SpecError):
            build_network(spec)

    def test_lif_requires_dt_below_tau(self):
        spec = NetworkSpec(input_shape=(4,), layers=[FcSpec(4, 2), SpikingSpec()],
                           model=LIF, tau=0.05, dt=0.05)
        with pytest.raises(SpecError):
            build_network(spec)

    def test_parameters_registered_once(self):
        net = build_network(small_conv_spec())
        names = list(net.parameters())
        assert len(names) == len(set(names))
        assert len(net.spiking_layers()) == 4

    def test_spec_dict_roundtrip(self):
        spec = ResidualSpec(body=[ConvSpec(4, 8, 3, 2, 1), BNSpec(8)],
                            projection=ConvSpec(4, 8, 1, 2, 0))
        d = layer_spec_to_dict(spec)
        back = layer_spec_from_dict(d)
        assert layer_spec_to_dict(back) == d

    def test_unknown_layer_kind(self):
        with pytest.raises(SpecError):
            layer_spec_from_dict({"kind": "maxpool"})


class TestBnTimefold:
    def oracle(self, x, n, b, params, mode):
        """Explicit reshape [N,B,...] -> [N*B,...] -> textbook BN -> back."""
        folded = x.reshape((n * b,) + x.shape[2:])
        axes = (0, 2, 3) if folded.ndim == 4 else (0,)
        if mode == "train":
            mean = folded.mean(axis=axes)
            var = folded.var(axis=axes)
        else:
            mean, var = params.running_mean, params.running_var
        shape = (1, -1, 1, 1) if folded.ndim == 4 else (1, -1)
        xhat = (folded - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + params.eps)
        out = params.gamma.reshape(shape) * xhat + params.beta.reshape(shape)
        return out.reshape(x.shape)

    def test_matches_reshape_oracle(self):
        rng = np.random.default_rng(0)
        n, b, c = 4, 8, 3
        x = rng.normal(size=(n, b, c, 8, 8))
        params = BNParams.create(c)
        params.gamma = rng.normal(1.0, 0.2, size=c)
        params.beta = rng.normal(size=c)
        expected = self.oracle(x, n, b, params, "train")
        folded = x.reshape((n * b, c, 8, 8))
        out, _ = bn_timefold(folded, params, "train")
        assert np.max(np.abs(out.reshape(x.shape) - expected)) < 1e-6

    def test_constant_input_gives_beta(self):
        params = BNParams.create(2)
        params.beta = np.array([3.0, -1.0])
        x = np.full((8, 2), 5.0)
        out, _ = bn_timefold(x, params, "train")
        assert np.allclose(out, params.beta, atol=1e-2)

    def test_unit_variance_preserved(self):
        params = BNParams.create(1)
        x = np.array([[-1.0], [1.0], [-1.0], [1.0]])
        out, _ = bn_timefold(x, params, "train")
        assert np.allclose(np.sort(np.unique(np.round(out, 2))), [-1.0, 1.0],
                           atol=1e-2)

    def test_eval_identity_stats(self):
        params = BNParams.create(3)
        params.eps = 1e-12
        x = np.random.default_rng(1).normal(size=(5, 3))
        out, _ = bn_timefold(x, params, "eval")
        assert np.allclose(out, x, atol=1e-9)

    def test_train_normalizes(self):
        rng = np.random.default_rng(2)
        x = rng.normal(3.0, 2.0, size=(64, 4))
        out, _ = bn_timefold(x, BNParams.create(4), "train")
        assert np.allclose(out.mean(axis=0), 0.0, atol=1e-10)
        assert np.allclose(out.var(axis=0), 1.0, atol=1e-3)

    def test_running_stats_updated(self):
        params = BNParams.create(1)
        x = np.full((10, 1), 4.0)
        bn_timefold(x, params, "train")
        assert params.running_mean[0] == pytest.approx(0.4)  # 0 + 0.1*(4-0)

    def test_empty_batch(self):
        with pytest.raises(ParameterError):
            bn_timefold(np.zeros((0, 3)), BNParams.create(3), "train")


class TestTimeForward:
    def one_layer_net(self, **kw):
        spec = NetworkSpec(input_shape=(1,), layers=[FcSpec(1, 1), SpikingSpec()],
                           model=IF, alpha=kw.get("alpha", 1.0),
                           v_th_init=kw.get("v_th", 1.0))
        net = build_network(spec)
        net.weight_tensors()["layer0.weight"].data[:] = 1.0
        return net

    def test_matches_simulate_layer_oracle(self):
        net = self.one_layer_net(alpha=1.0, v_th=1.0)
        frames = np.full((5, 1, 1), 0.5)
        out, ctx = network_time_forward(net, frames)
        train = out / 1.0  # scale V_th = 1
        p = NeuronParams(IF, 1.0, alpha=1.0)
        ref, _ = simulate_layer(NeuronState.zeros((1, 1)), frames, p)
        assert np.array_equal(train, ref.s)
        assert train.sum() == 2

    def test_saturation_all_ones(self):
        net = self.one_layer_net(alpha=1.0, v_th=1.0)
        frames = np.full((4, 1, 1), 3.0)
        out, _ = network_time_forward(net, frames)
        assert np.all(out == 1.0)  # V_th * s with s = 1

    def test_zero_input_zero_spikes(self):
        net = build_network(small_conv_spec())
        frames = np.zeros((2, 1, 1, 16, 16))
        for bn in net.bn_layers():
            bn.beta.data[:] = 0.0
        out, ctx = network_time_forward(net, frames, ForwardContext(mode="eval"))
        # beta=0 BN on zero input keeps the signal at zero through every stage
        assert np.all(out == 0.0)

    def test_state_reset_between_passes(self):
        net = self.one_layer_net()
        frames = np.full((3, 1, 1), 0.5)
        a, _ = network_time_forward(net, frames)
        b, _ = network_time_forward(net, frames)
        assert np.array_equal(a, b)

    def test_n1_equals_single_joint_step(self):
        net = self.one_layer_net(alpha=0.5, v_th=1.0)
        frames = np.full((1, 1, 1), 0.7)
        out, _ = network_time_forward(net, frames)
        p = NeuronParams(IF, 1.0, alpha=0.5)
        ref, _ = simulate_layer(NeuronState.zeros((1, 1)), frames, p)
        assert np.array_equal(out, ref.s)

    def test_empty_frames_rejected(self):
        net = self.one_layer_net()
        with pytest.raises(ParameterError):
            network_time_forward(net, np.zeros((0, 1, 1)))


class TestChainForward:
    def test_chain_replays_record_stream(self):
        net = build_network(small_conv_spec(), seed=3)
        frames = np.broadcast_to(
            np.random.default_rng(3).random((2, 1, 16, 16)), (4, 2, 1, 16, 16)
        ).copy()
        ctx = ForwardContext(mode="train")
        network_time_forward(net, frames, ctx)
        from dsr.representation import rep_input

        o0 = rep_input(frames, IF).o
        z = network_chain_forward(net, o0, ctx)
        reps = [r[1] for r in ctx.records if r[0] == "spiking"]
        # value substitution: chain output equals the last simulated rep
        assert np.array_equal(z.data, reps[-1])

    def test_dropout_one_mask_per_pass(self):
        spec = NetworkSpec(input_shape=(4,),
                           layers=[DropoutSpec(0.5), FcSpec(4, 2), SpikingSpec()],
                           v_th_init=1.0)
        net = build_network(spec)
        frames = np.ones((6, 1, 4))
        ctx = ForwardContext(mode="train", rng=np.random.default_rng(0))
        net.layers[0].time_forward(frames, ctx)
        tag, mask = ctx.records[0]
        assert tag == "dropout" and mask.shape == (1, 4)

    def test_dropout_eval_identity(self):
        spec = NetworkSpec(input_shape=(4,), layers=[DropoutSpec(0.5)])
        net = build_network(spec)
        x = np.ones((2, 1, 4))
        ctx = ForwardContext(mode="eval")
        assert np.array_equal(net.layers[0].time_forward(x, ctx), x)

    def test_residual_current_addition(self):
        spec = NetworkSpec(
            input_shape=(3,),
            layers=[ResidualSpec(body=[FcSpec(3, 3)]), SpikingSpec()],
            v_th_init=1.0,
        )
        net = build_network(spec)
        w = net.weight_tensors()["layer0.body0.weight"]
        w.data[:] = np.eye(3)
        x = np.full((1, 1, 3), 0.2)
        y = net.layers[0].time_forward(x, ForwardContext())
        assert np.allclose(y, 0.4)  # body + identity shortcut

    def test_flatten(self):
        spec = NetworkSpec(input_shape=(2, 4, 4),
                           layers=[FlattenSpec(), FcSpec(32, 5), SpikingSpec()])
        net = build_network(spec)
        out, _ = network_time_forward(net, np.zeros((2, 3, 2, 4, 4)))
        assert out.shape == (2, 3, 5)
