"""Low-latency spiking neural network training by differentiation on
spike representations: temporal simulation forward, surrogate clamp-chain
backward, trainable firing thresholds, and post-training quantization."""

from .analysis import (
    QuantSpec,
    SweepResult,
    quantize_tensor,
    quantize_weights,
    sweep_convergence,
    sweep_error_decomposition,
    sweep_staircase,
    staircase_grid,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, load_datasets
from .data import Dataset, FormatError, encode_static, make_digits
from .engine import (
    Adam,
    SgdMomentum,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    cosine_lr,
    forward_collect,
    surrogate_backward,
)
from .layers import (
    Network,
    NetworkSpec,
    SpecError,
    build_network,
    network_chain_forward,
    network_time_forward,
    preact_resnet_spec,
    small_conv_spec,
)
from .neuron import IF, LIF, NeuronParams, NeuronState, SpikeTrain, simulate_layer
from .representation import (
    ErrorDecomposition,
    Representation,
    closed_form_rate_if,
    decompose_error,
    represent,
    rep_input,
    simulate_constant_rate,
    surrogate_map_if,
    surrogate_map_lif,
)
from .tensor import DimensionError, ParameterError, Tensor, UsageError

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
