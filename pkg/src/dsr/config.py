"""Run configuration: YAML schema, validation, neuron presets, resolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from . import data as D
from .engine import TrainConfig
from .layers import (
    NetworkSpec,
    SpecError,
    layer_spec_from_dict,
    layer_spec_to_dict,
    preact_resnet_spec,
    small_conv_spec,
)
from .neuron import IF, LIF


class ConfigError(ValueError):
    """Raised on unknown keys or invalid values in a run config."""


# Appendix hyperparameter tables as named presets.
NEURON_PRESETS = {
    "if-default": dict(model=IF, alpha=0.5, v_th_init=6.0, threshold_floor=0.01,
                       tau=1.0, dt=0.05),
    "lif-n20": dict(model=LIF, alpha=0.3, v_th_init=0.3, threshold_floor=0.0005,
                    tau=1.0, dt=0.05),
    "lif-n15": dict(model=LIF, alpha=0.4, v_th_init=0.3, threshold_floor=0.0005,
                    tau=1.0, dt=0.05),
    "lif-n10": dict(model=LIF, alpha=0.4, v_th_init=0.3, threshold_floor=0.0005,
                    tau=1.0, dt=0.05),
    "lif-n5": dict(model=LIF, alpha=0.5, v_th_init=0.6, threshold_floor=0.001,
                   tau=1.0, dt=0.1),
}

_DATASET_KEYS = {
    "kind", "images", "labels", "test_images", "test_labels", "path", "test_path",
    "n_per_class", "test_n_per_class", "noise", "seed", "n_classes",
    "crop_pad", "hflip_prob", "normalize_mean", "normalize_std",
}
_NETWORK_KEYS = {
    "preset", "input_shape", "layers", "model", "alpha", "tau", "dt",
    "v_th_init", "neuron_preset", "n_classes", "channels", "hidden", "depth",
}
_TRAIN_KEYS = {
    "n_steps", "epochs", "batch_size", "optimizer", "lr", "momentum",
    "weight_decay", "cosine_horizon", "threshold_l2", "threshold_floor",
    "threshold_grad_rule", "train_thresholds", "seed", "deterministic",
    "save_interval", "precision",
}
_TOP_KEYS = {"dataset", "network", "train"}


@dataclass
class RunConfig:
    dataset: dict
    network: dict
    train: dict
    resolved_network: NetworkSpec = None
    resolved_train: TrainConfig = None
    threshold_floor: float = 0.01
    save_interval: int = 0
    precision: str = "f64"

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _resolve_network(section: dict) -> tuple[NetworkSpec, float | None]:
    _reject_unknown(section, _NETWORK_KEYS, "network")
    neuron = {}
    floor = None
    if "neuron_preset" in section:
        name = section["neuron_preset"]
        if name not in NEURON_PRESETS:
            raise ConfigError(f"unknown neuron preset {name!r}; "
                              f"known: {sorted(NEURON_PRESETS)}")
        preset = dict(NEURON_PRESETS[name])
        floor = preset.pop("threshold_floor")
        neuron.update(preset)
    for key in ("model", "alpha", "tau", "dt", "v_th_init"):
        if key in section:
            neuron[key] = section[key]

    if "preset" in section:
        name = section["preset"]
        if name == "small-conv":
            kwargs = {}
            if "input_shape" in section:
                kwargs["in_shape"] = tuple(section["input_shape"])
            if "n_classes" in section:
                kwargs["n_classes"] = section["n_classes"]
            if "channels" in section:
                kwargs["ch"] = tuple(section["channels"])
            if "hidden" in section:
                kwargs["hidden"] = section["hidden"]
            return small_conv_spec(**kwargs, **neuron), floor
        if name.startswith("preact-resnet-"):
            depth = int(name.rsplit("-", 1)[1])
            kwargs = {}
            if "input_shape" in section:
                kwargs["in_shape"] = tuple(section["input_shape"])
            if "n_classes" in section:
                kwargs["n_classes"] = section["n_classes"]
            return preact_resnet_spec(depth, **kwargs, **neuron), floor
        raise ConfigError(f"unknown network preset {name!r}")

    if "input_shape" not in section or "layers" not in section:
        raise ConfigError("network needs input_shape and layers (or a preset)")
    layers = [layer_spec_from_dict(d) for d in section["layers"]]
    return NetworkSpec(input_shape=tuple(section["input_shape"]), layers=layers,
                       **neuron), floor


def load_config(path=None, text=None) -> RunConfig:
    if text is None:
        with open(path) as f:
            text = f.read()
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    _reject_unknown(doc, _TOP_KEYS, "config")
    for key in _TOP_KEYS:
        if key not in doc:
            raise ConfigError(f"missing config section {key!r}")
    _reject_unknown(doc["dataset"], _DATASET_KEYS, "dataset")
    _reject_unknown(doc["train"], _TRAIN_KEYS, "train")

    try:
        spec, preset_floor = _resolve_network(doc["network"])
    except SpecError as e:
        raise ConfigError(str(e)) from None

    train = dict(doc["train"])
    save_interval = train.pop("save_interval", 0)
    precision = train.pop("precision", "f64")
    if precision not in ("f32", "f64"):
        raise ConfigError("precision must be f32 or f64")
    if preset_floor is not None:
        train.setdefault("threshold_floor", preset_floor)
    try:
        tc = TrainConfig(**train)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad train section: {e}") from None

    cfg = RunConfig(dataset=dict(doc["dataset"]), network=dict(doc["network"]),
                    train=dict(doc["train"]), resolved_network=spec,
                    resolved_train=tc, threshold_floor=tc.threshold_floor,
                    save_interval=save_interval, precision=precision)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Serialize the resolved config so the run is reproducible from it."""
    doc = {
        "dataset": cfg.dataset,
        "network": {
            "input_shape": list(cfg.resolved_network.input_shape),
            "layers": [layer_spec_to_dict(s) for s in cfg.resolved_network.layers],
            "model": cfg.resolved_network.model,
            "alpha": cfg.resolved_network.alpha,
            "tau": cfg.resolved_network.tau,
            "dt": cfg.resolved_network.dt,
            "v_th_init": cfg.resolved_network.v_th_init,
        },
        "train": {
            "n_steps": cfg.resolved_train.n_steps,
            "epochs": cfg.resolved_train.epochs,
            "batch_size": cfg.resolved_train.batch_size,
            "optimizer": cfg.resolved_train.optimizer,
            "lr": cfg.resolved_train.lr,
            "momentum": cfg.resolved_train.momentum,
            "weight_decay": cfg.resolved_train.weight_decay,
            "cosine_horizon": cfg.resolved_train.horizon,
            "threshold_l2": cfg.resolved_train.threshold_l2,
            "threshold_floor": cfg.resolved_train.threshold_floor,
            "threshold_grad_rule": cfg.resolved_train.threshold_grad_rule,
            "train_thresholds": cfg.resolved_train.train_thresholds,
            "seed": cfg.resolved_train.seed,
            "deterministic": cfg.resolved_train.deterministic,
            "save_interval": cfg.save_interval,
            "precision": cfg.precision,
        },
    }
    return yaml.safe_dump(doc, sort_keys=True)


def load_datasets(section: dict):
    """Build (train, test) datasets from the dataset section."""
    kind = section.get("kind")
    if kind == "synthetic-digits":
        n = section.get("n_per_class", 300)
        nt = section.get("test_n_per_class", 100)
        noise = section.get("noise", 0.25)
        seed = section.get("seed", 0)
        train = D.make_digits(n, seed=seed, noise=noise)
        test = D.make_digits(nt, seed=seed + 10_000, noise=noise)
        test.split = "test"
        return train, test
    if kind == "idx":
        train = D.load_idx(section["images"], section["labels"],
                           section.get("n_classes", 10), "train")
        test = D.load_idx(section["test_images"], section["test_labels"],
                          section.get("n_classes", 10), "test")
        return train, test
    if kind == "cifar-binary":
        train = D.load_cifar_binary(section["path"], section.get("n_classes", 10))
        test = D.load_cifar_binary(section["test_path"], section.get("n_classes", 10),
                                   "test")
        return train, test
    raise ConfigError(f"unknown dataset kind {kind!r}")
