"""Flat run configuration: defaults, YAML file, then ``--set key=value`` overrides.

Keys (all optional in a file):

    seed, data_seed            training/eval seed; synthetic-data seed
    train_pool, support_pool, test_pool
                               pool CSV paths; when unset, a synthetic family
                               is generated and partitioned in memory
    latent_dim, ambient_dim, noise_sigma, num_classes, samples_per_class,
    partition                  synthetic family and partition fractions
    ways, shots, num_tasks     training stream
    extractor, hidden, output_dim, nonlinearity
    n, K, gamma, minibatch     trainer (n / minibatch null -> automatic)
    head_iterations, head_step, head_l2, head_tol
    checkpoint_every           periodic checkpoints during train (0 = off)
    checkpoint                 extractor file for eval (default <out>/checkpoint.bin)
    num_test_tasks, support_sizes, repeats, workers
    gradcheck_instances, gradcheck_tolerance, corrupt
    verify                     simulate: re-check the written partitions
"""

import json
from pathlib import Path

import yaml

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "data_seed": 0,
    "train_pool": None,
    "support_pool": None,
    "test_pool": None,
    "latent_dim": 5,
    "ambient_dim": 50,
    "noise_sigma": 0.3,
    "num_classes": 20,
    "samples_per_class": 90,
    "partition": [1 / 3, 1 / 3, 1 / 3],
    "ways": 5,
    "shots": 10,
    "num_tasks": 1000,
    "extractor": "mlp2",
    "hidden": 64,
    "output_dim": 16,
    "nonlinearity": "tanh",
    "n": None,
    "K": 10,
    "gamma": 0.01,
    "minibatch": None,
    "head_iterations": 500,
    "head_step": 0.1,
    "head_l2": 1e-4,
    "head_tol": 1e-8,
    "checkpoint_every": 100,
    "checkpoint": None,
    "num_test_tasks": 100,
    "support_sizes": [1, 2, 3, 5, 10],
    "repeats": 10,
    "workers": 1,
    "gradcheck_instances": 50,
    "gradcheck_tolerance": 1e-5,
    "corrupt": False,
    "verify": False,
}


def _parse_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def load_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
    if data is None:
        return {}
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ConfigError(f"{path}: config must be a flat key/value mapping")
    return data


def resolve(path=None, overrides=(), **flags):
    """Merge defaults, the file at ``path``, ``key=value`` overrides, then non-None flags."""
    cfg = dict(DEFAULTS)
    layers = [load_file(path) if path else {}]
    extra = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        extra[k.strip()] = _parse_value(v)
    layers.append(extra)
    layers.append({k: v for k, v in flags.items() if v is not None})
    for layer in layers:
        unknown = sorted(set(layer) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg.update(layer)
    return cfg


def dump(cfg, path):
    Path(path).write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8")
