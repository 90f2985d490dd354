"""Shared feature extractors: identity, affine map, and a two-layer perceptron.

Parameters live in one flat float64 vector so the trainer can treat every
kind uniformly. Layouts (row-major blocks, in order):

* identity: empty
* linear:   W (d x p), b (p)
* mlp2:     W1 (d x h), b1 (h), W2 (h x p), b2 (p)

``features = act(x @ W1 + b1) @ W2 + b2`` for mlp2 and ``x @ W + b`` for
linear. The output layer of mlp2 is affine so features are not squashed
before the task head sees them.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ShapeError, TraceError
from .numkit import Rng, as_matrix

KINDS = ("identity", "linear", "mlp2")
NONLINEARITIES = ("tanh", "relu")

CHECKPOINT_MAGIC = b"LEADRCKPT\n"
CHECKPOINT_VERSION = 1


def param_count(kind, input_dim, output_dim, hidden=0):
    if kind == "identity":
        return 0
    if kind == "linear":
        return input_dim * output_dim + output_dim
    if kind == "mlp2":
        return input_dim * hidden + hidden + hidden * output_dim + output_dim
    raise ConfigError(f"unknown extractor kind {kind!r}; expected one of {KINDS}")


@dataclass(eq=False)
class FeatureExtractor:
    kind: str
    input_dim: int
    output_dim: int
    params: np.ndarray = None
    hidden: int = 0
    nonlinearity: str = "tanh"
    # bumped on every mutation; traces remember the value they were made at
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown extractor kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ConfigError("extractor dimensions must be positive")
        if self.kind == "identity" and self.output_dim != self.input_dim:
            raise ConfigError(
                f"identity extractor needs output_dim == input_dim, got {self.output_dim} != {self.input_dim}"
            )
        if self.kind == "mlp2":
            if self.hidden <= 0:
                raise ConfigError("mlp2 extractor needs a positive hidden width")
            if self.nonlinearity not in NONLINEARITIES:
                raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")
        n = param_count(self.kind, self.input_dim, self.output_dim, self.hidden)
        if self.params is None:
            self.params = np.zeros(n)
        self.params = np.ascontiguousarray(self.params, dtype=np.float64).reshape(-1)
        if self.params.size != n:
            raise ShapeError(f"{self.kind} extractor expects {n} parameters, got {self.params.size}")

    @property
    def num_params(self):
        return self.params.size

    def copy(self):
        return FeatureExtractor(
            self.kind, self.input_dim, self.output_dim, self.params.copy(), self.hidden, self.nonlinearity
        )

    def unpack(self):
        """Views of the parameter blocks, in layout order."""
        d, p, h = self.input_dim, self.output_dim, self.hidden
        v = self.params
        if self.kind == "identity":
            return ()
        if self.kind == "linear":
            return v[: d * p].reshape(d, p), v[d * p :]
        o = 0
        w1 = v[o : o + d * h].reshape(d, h); o += d * h
        b1 = v[o : o + h]; o += h
        w2 = v[o : o + h * p].reshape(h, p); o += h * p
        b2 = v[o : o + p]
        return w1, b1, w2, b2

    def config(self):
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": self.hidden,
            "nonlinearity": self.nonlinearity,
        }


@dataclass(frozen=True)
class ForwardTrace:
    extractor_id: int
    version: int
    x: np.ndarray
    pre: np.ndarray = None
    hidden: np.ndarray = None


def identity(dim):
    return FeatureExtractor("identity", dim, dim)


def init_params(kind, input_dim, output_dim=None, rng=None, hidden=64, nonlinearity="tanh"):
    """Fan-balanced uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    if output_dim is None:
        output_dim = input_dim
    if input_dim <= 0 or output_dim <= 0 or (kind == "mlp2" and hidden <= 0):
        raise ConfigError("extractor dimensions must be positive")
    f = FeatureExtractor(kind, input_dim, output_dim, None, hidden if kind == "mlp2" else 0, nonlinearity)
    if kind == "identity":
        return f
    rng = rng if rng is not None else Rng(0)
    if kind == "linear":
        shapes = [(input_dim, output_dim)]
    else:
        shapes = [(input_dim, hidden), (hidden, output_dim)]
    blocks = f.unpack()
    for w, (fan_in, fan_out) in zip(blocks[::2], shapes):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-a, a, (fan_in, fan_out))
    return f


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z, a, kind):
    return 1.0 - a * a if kind == "tanh" else (z > 0.0).astype(np.float64)


def forward(f, x):
    x = as_matrix(x, "input")
    if x.shape[1] != f.input_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, extractor expects {f.input_dim}")
    if f.kind == "identity":
        return x.copy(), ForwardTrace(id(f), f.version, x)
    if f.kind == "linear":
        w, b = f.unpack()
        return x @ w + b, ForwardTrace(id(f), f.version, x)
    w1, b1, w2, b2 = f.unpack()
    pre = x @ w1 + b1
    hid = _act(pre, f.nonlinearity)
    return hid @ w2 + b2, ForwardTrace(id(f), f.version, x, pre, hid)


def backward(f, trace, grad_out):
    """Gradients of ``sum(grad_out * features)`` w.r.t. the flat params and the input."""
    if trace.extractor_id != id(f) or trace.version != f.version:
        raise TraceError("trace does not match the extractor's current parameters; rerun forward")
    g = as_matrix(grad_out, "grad_out")
    if g.shape != (trace.x.shape[0], f.output_dim):
        raise ShapeError(f"grad_out shape {g.shape} does not match features {(trace.x.shape[0], f.output_dim)}")
    x = trace.x
    if f.kind == "identity":
        return np.zeros(0), g.copy()
    if f.kind == "linear":
        w, _ = f.unpack()
        return np.concatenate([(x.T @ g).ravel(), g.sum(axis=0)]), g @ w.T
    w1, _, w2, _ = f.unpack()
    gw2 = trace.hidden.T @ g
    gb2 = g.sum(axis=0)
    gpre = (g @ w2.T) * _act_grad(trace.pre, trace.hidden, f.nonlinearity)
    gw1 = x.T @ gpre
    gb1 = gpre.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2]), gpre @ w1.T


def apply_step(f, grad_theta, gamma):
    """In-place SGD step ``params -= gamma * grad``; returns ``f``."""
    g = np.asarray(grad_theta, dtype=np.float64).reshape(-1)
    if g.size != f.params.size:
        raise ShapeError(f"gradient has {g.size} entries, extractor has {f.params.size} parameters")
    if f.params.size:
        f.params -= gamma * g
    f.version += 1
    return f


def save_checkpoint(f, path):
    """Magic line, one JSON header line, then the raw little-endian doubles."""
    header = dict(f.config(), format_version=CHECKPOINT_VERSION, num_params=int(f.num_params))
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    data = f.params.astype("<f8").tobytes()
    Path(path).write_bytes(CHECKPOINT_MAGIC + blob + data)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    rest = raw[len(CHECKPOINT_MAGIC) :]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    data = rest[nl + 1 :]
    n = header["num_params"]
    if len(data) != 8 * n:
        raise CheckpointError(f"checkpoint holds {len(data)} bytes, expected {8 * n}")
    params = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return FeatureExtractor(
        header["kind"], header["input_dim"], header["output_dim"], params, header["hidden"], header["nonlinearity"]
    )
