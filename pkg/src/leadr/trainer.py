"""Streaming representation training.

For every task that arrives, the sample is split into a pseudo-train part and
a pseudo-validation part. A head is fitted on the pseudo-train features and
then frozen; the extractor takes ``K`` SGD steps on the loss that frozen head
incurs on minibatches drawn from the pseudo-validation part. Only the
extractor survives from one task to the next.
"""

import itertools
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import representation as rep
from .errors import ConfigError, LeadrError, NumericError, ShapeError, TaskError
from .heads import HeadFitConfig, fit_head, head_loss, head_loss_and_input_grad
from .numkit import Rng

MAX_ENUMERATED_SPLITS = 1000


@dataclass(frozen=True)
class LeadrConfig:
    n: int = None  # pseudo-train size; None -> ceil(m / 2)
    K: int = 10
    gamma: float = 0.01
    minibatch: int = None  # None -> min(32, m - n)
    head_cfg: HeadFitConfig = field(default_factory=HeadFitConfig)
    seed: int = 0

    def __post_init__(self):
        if self.K < 0:
            raise ConfigError("K must be >= 0")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.minibatch is not None and self.minibatch < 1:
            raise ConfigError("minibatch must be >= 1")

    def resolve(self, m):
        """(n, minibatch) for an episode with ``m`` samples."""
        n = self.n if self.n is not None else math.ceil(m / 2)
        if not 0 < n < m:
            raise ConfigError(f"pseudo-train size n={n} must satisfy 0 < n < m={m}")
        mb = self.minibatch if self.minibatch is not None else min(32, m - n)
        if mb > m - n:
            raise ConfigError(f"minibatch {mb} exceeds validation size {m - n}")
        return n, mb


class SplitPair(NamedTuple):
    tr: np.ndarray
    va: np.ndarray


class TaskRecord(NamedTuple):
    ordinal: int
    head_loss: float
    va_loss_pre: float
    va_loss_post: float
    millis: float

    def line(self):
        return f"{self.ordinal},{self.head_loss!r},{self.va_loss_pre!r},{self.va_loss_post!r},{self.millis:.3f}"


LOG_HEADER = "ordinal,head_loss,va_loss_pre,va_loss_post,millis"


class TrainLog:
    """Per-task records in stream order.

    ``maxlen`` bounds the in-memory buffer; ``sink`` (a text file object)
    receives every record as one delimited line, so nothing is lost when the
    buffer is bounded.
    """

    def __init__(self, maxlen=None, sink=None):
        self.records = deque(maxlen=maxlen)
        self.sink = sink
        self.count = 0
        if sink is not None and sink.tell() == 0:
            sink.write(LOG_HEADER + "\n")

    def append(self, record):
        self.records.append(record)
        self.count += 1
        if self.sink is not None:
            self.sink.write(record.line() + "\n")

    def __len__(self):
        return self.count

    def __iter__(self):
        return iter(self.records)

    @staticmethod
    def read(path):
        out = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != LOG_HEADER:
                raise ConfigError(f"{path}: not a training log")
            for line in fh:
                o, hl, pre, post, ms = line.strip().split(",")
                out.append(TaskRecord(int(o), float(hl), float(pre), float(post), float(ms)))
        return out


def split_pseudo(m, n, rng):
    """Uniformly random ``n``-subset of ``range(m)`` and its complement, both sorted."""
    if not 0 < n < m:
        raise ConfigError(f"pseudo-train size n={n} must satisfy 0 < n < m={m}")
    perm = rng.permutation(m)
    return SplitPair(np.sort(perm[:n]), np.sort(perm[n:]))


def _check_episode(f, episode):
    x = episode.inputs
    if x.ndim != 2 or x.shape[1] != f.input_dim:
        raise ShapeError(f"episode inputs have shape {x.shape}, extractor expects {f.input_dim} columns")
    return x, np.asarray(episode.labels)


def process_task(f, episode, cfg, rng, ordinal=0):
    """One iteration of the streaming loop; mutates and returns ``f``.

    Returns ``(f, head, record)``.
    """
    start = time.perf_counter()
    x, y = _check_episode(f, episode)
    m = x.shape[0]
    n, mb = cfg.resolve(m)
    split = split_pseudo(m, n, rng)

    feats_tr, _ = rep.forward(f, x[split.tr])
    head = fit_head(episode.kind, feats_tr, y[split.tr], cfg.head_cfg, rng)
    # the head stays fixed while the representation moves
    head.weights.flags.writeable = False
    head.bias.flags.writeable = False
    tr_loss = head_loss(head, feats_tr, y[split.tr])

    x_va, y_va = x[split.va], y[split.va]
    va_pre = head_loss(head, rep.forward(f, x_va)[0], y_va)
    if f.num_params:
        for _ in range(cfg.K):
            pick = split.va[rng.integers(len(split.va), mb)]
            feats, trace = rep.forward(f, x[pick])
            _, g_feats = head_loss_and_input_grad(head, feats, y[pick])
            g_theta, _ = rep.backward(f, trace, g_feats)
            rep.apply_step(f, g_theta, cfg.gamma)
        va_post = head_loss(head, rep.forward(f, x_va)[0], y_va)
    else:
        va_post = va_pre
    millis = (time.perf_counter() - start) * 1000.0
    return f, head, TaskRecord(ordinal, tr_loss, va_pre, va_post, millis)


def train_stream(f0, stream, cfg, log=None, checkpoint_every=0, checkpoint_dir=None):
    """Fold ``process_task`` over ``stream`` in order, starting from a copy of ``f0``.

    Task ``i`` uses the random substream ``Rng(cfg.seed).fork(i)``. Heads are
    dropped as soon as their record is logged.
    """
    f = f0.copy()
    log = log if log is not None else TrainLog()
    root = Rng(cfg.seed)
    for ordinal, episode in enumerate(stream):
        try:
            f, _, record = process_task(f, episode, cfg, root.fork(ordinal), ordinal)
        except LeadrError as exc:
            raise TaskError(ordinal, exc) from exc
        if not np.all(np.isfinite(f.params)):
            raise TaskError(ordinal, NumericError("extractor parameters became non-finite; lower gamma"))
        log.append(record)
        if checkpoint_every and checkpoint_dir is not None and (ordinal + 1) % checkpoint_every == 0:
            rep.save_checkpoint(f, f"{checkpoint_dir}/checkpoint_{ordinal + 1:06d}.bin")
    return f, log


def _iter_splits(m, n, num_splits, rng, mode):
    if mode == "enumerate":
        total = math.comb(m, n)
        if total > MAX_ENUMERATED_SPLITS:
            raise ConfigError(f"C({m},{n}) = {total} splits exceeds the enumeration limit {MAX_ENUMERATED_SPLITS}")
        full = np.arange(m)
        for tr in itertools.combinations(range(m), n):
            tr = np.array(tr)
            yield SplitPair(tr, np.setdiff1d(full, tr))
    elif mode == "sample":
        if num_splits < 1:
            raise ConfigError("num_splits must be >= 1")
        for _ in range(num_splits):
            yield split_pseudo(m, n, rng)
    else:
        raise ConfigError(f"unknown split mode {mode!r}")


def split_losses(f, episode, n, num_splits=10, head_cfg=None, rng=None, mode="sample"):
    """Validation loss of the head fitted on each pseudo-train split. ``f`` is read only."""
    head_cfg = head_cfg or HeadFitConfig()
    rng = rng if rng is not None else Rng(0)
    x, y = _check_episode(f, episode)
    m = x.shape[0]
    if not 0 < n < m:
        raise ConfigError(f"pseudo-train size n={n} must satisfy 0 < n < m={m}")
    feats, _ = rep.forward(f, x)
    out = []
    for split in _iter_splits(m, n, num_splits, rng, mode):
        head = fit_head(episode.kind, feats[split.tr], y[split.tr], head_cfg, rng)
        out.append(head_loss(head, feats[split.va], y[split.va]))
    return np.array(out)


def estimate_generalization(f, episode, n, num_splits=10, head_cfg=None, rng=None, mode="sample"):
    """Average over pseudo-train/validation splits of the mean validation loss.

    ``mode="sample"`` draws ``num_splits`` random splits; ``mode="enumerate"``
    visits every one of the C(m, n) splits once (limited to 1000).
    """
    return float(np.mean(split_losses(f, episode, n, num_splits, head_cfg, rng, mode)))
