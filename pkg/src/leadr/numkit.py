"""Dense kernels, losses and the project's deterministic random generator.

Matrices are plain float64 numpy arrays, samples as rows.
"""

import math

import numpy as np

from .errors import LabelError, ShapeError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_TWO_NEG53 = 2.0 ** -53


def as_matrix(x, name="matrix"):
    """Coerce to a 2-D float64 array; 1-D input becomes a single column."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def softmax_rows(logits):
    z = as_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(logits):
    z = as_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def check_labels(labels, num_classes, rows):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != rows:
        raise ShapeError(f"expected {rows} labels, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise LabelError("class labels must be integers")
        y = y.astype(np.int64)
    y = y.astype(np.int64, copy=False)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        bad = int(y[(y < 0) | (y >= num_classes)][0])
        raise LabelError(f"label {bad} outside [0, {num_classes})")
    return y


def cross_entropy(probs, labels):
    """Mean negative log-probability of the true class."""
    p = as_matrix(probs, "probs")
    y = check_labels(labels, p.shape[1], p.shape[0])
    if p.shape[0] == 0:
        return 0.0
    picked = p[np.arange(p.shape[0]), y]
    # -log of a probability is >= 0; the clamp only removes the sign of -0.0
    return max(float(-np.mean(np.log(picked))), 0.0)


def cross_entropy_rows(logits, y):
    """Per-row ``-log softmax(z)[y]`` for validated integer labels ``y``.

    Rows whose true logit is the largest use ``log1p(sum_{k != y} exp(z_k - z_y))``,
    which keeps full relative precision as the loss approaches zero.
    """
    z = as_matrix(logits, "logits")
    rows = np.arange(z.shape[0])
    zy = z[rows, y]
    top = z.max(axis=1)
    lead = zy >= top
    shifted = np.exp(z - np.where(lead, zy, top)[:, None])
    shifted[rows, y] = 0.0
    rest = shifted.sum(axis=1)
    out = np.empty(z.shape[0])
    out[lead] = np.log1p(rest[lead])
    trail = ~lead
    # here exp(z_y - top) < 1 and some other term equals 1
    out[trail] = (top[trail] - zy[trail]) + np.log(rest[trail] + np.exp(zy[trail] - top[trail]))
    return out


def cross_entropy_logits(logits, labels):
    """Same loss evaluated from logits, stable when probabilities underflow."""
    z = as_matrix(logits, "logits")
    y = check_labels(labels, z.shape[1], z.shape[0])
    if z.shape[0] == 0:
        return 0.0
    return float(np.mean(cross_entropy_rows(z, y)))


def squared_error(pred, target):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} does not match target shape {t.shape}")
    if p.size == 0:
        return 0.0
    return float(np.mean((p - t) ** 2))


def _mix64(z):
    # SplitMix64 finaliser over uint64 arrays (wrapping arithmetic)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def _mix64_int(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based SplitMix64 generator.

    Draw ``i`` is ``mix64(seed + (i + 1) * GAMMA)``, i.e. exactly the classic
    SplitMix64 sequence started from ``seed``. Because each draw depends only
    on (seed, counter), blocks are generated vectorised and the output is
    bit-identical on every platform with IEEE doubles. Uniform doubles use the
    top 53 bits; normals use Box-Muller.

    ``fork(*keys)`` derives an independent generator from the seed alone (not
    the counter), so substreams like (seed, task ordinal) are stable no matter
    how much the parent has been used.
    """

    def __init__(self, seed=0):
        seed = int(seed)
        if seed < 0 or seed > _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def fork(self, *keys):
        h = self.seed
        for k in keys:
            h = _mix64_int(h ^ _mix64_int((int(k) + _GAMMA) & _MASK64))
            h = (h + _GAMMA) & _MASK64
        return Rng(h)

    def next_u64(self, size):
        idx = np.arange(self.counter + 1, self.counter + 1 + size, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
            return _mix64(z)

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low, high, size):
        return low + (high - low) * self.random(size)

    def normal(self, size):
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        bits = self.next_u64(2 * pairs) >> np.uint64(11)
        u1 = (bits[:pairs].astype(np.float64) + 1.0) * _TWO_NEG53  # (0, 1]
        u2 = bits[pairs:].astype(np.float64) * _TWO_NEG53
        r = np.sqrt(-2.0 * np.log(u1))
        t = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(t), r * np.sin(t)])[:n]
        return z.reshape(size)

    def integers(self, high, size=None):
        """Uniform integers in [0, high). Bias is below high / 2**53."""
        if high <= 0:
            raise ValueError("high must be positive")
        u = self.random(1 if size is None else size)
        k = np.minimum(np.floor(u * high).astype(np.int64), high - 1)
        return int(k.reshape(-1)[0]) if size is None else k

    def permutation(self, n):
        # stable argsort of uniform keys; ties need two equal 53-bit draws
        return np.argsort(self.random(n), kind="stable")

    def choice(self, n, k, replace=False):
        """``k`` indices from range(n); without replacement keeps draw order."""
        if replace:
            return self.integers(n, k)
        if k > n:
            raise ValueError(f"cannot choose {k} of {n} without replacement")
        return self.permutation(n)[:k]
