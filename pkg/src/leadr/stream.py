"""Labeled pools, episodic task sampling and synthetic task families.

Every pool row carries a ``sample_id`` that survives partitioning, so any
episode can be traced back to the rows (and the partition) it came from.
"""

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, LeadrError, ParseError, TaskError
from .heads import TaskKind
from .numkit import Rng

PARTITION_NAMES = ("repr_train", "task_support", "task_test")


@dataclass(eq=False)
class LabeledPool:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int  # 0 for a regression pool
    sample_ids: np.ndarray = None
    name: str = "full"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise DataError(f"pool inputs must be 2-D, got shape {self.inputs.shape}")
        n = self.inputs.shape[0]
        if self.sample_ids is None:
            self.sample_ids = np.arange(n)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.num_classes:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.shape != (n,) or self.sample_ids.shape != (n,):
            raise DataError(f"pool has {n} rows but {self.labels.shape[0]} labels / {self.sample_ids.shape[0]} ids")
        if self.num_classes:
            if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise DataError(f"pool labels must lie in [0, {self.num_classes})")
            counts = np.bincount(self.labels, minlength=self.num_classes)
            if np.any(counts == 0):
                missing = int(np.flatnonzero(counts == 0)[0])
                raise DataError(f"class {missing} has no samples (labels must be contiguous from 0)")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def is_regression(self):
        return self.num_classes == 0

    @cached_property
    def class_rows(self):
        """Row indices of each class, ascending."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.num_classes + 1))
        return [order[bounds[c] : bounds[c + 1]] for c in range(self.num_classes)]

    def subset(self, rows, name=None):
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledPool(
            self.inputs[rows], self.labels[rows], self.num_classes, self.sample_ids[rows], name or self.name
        )


@dataclass(eq=False)
class TaskEpisode:
    inputs: np.ndarray
    labels: np.ndarray  # local class indices, or real targets for regression
    kind: TaskKind
    classes: tuple = ()  # global class ids; position = local label
    partition: str = ""
    sample_ids: np.ndarray = field(default=None)

    @property
    def m(self):
        return self.inputs.shape[0]


def save_pool_csv(pool, path):
    """Header ``label,f0,f1,...``; floats written with shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(pool.dim)])
        for lab, row in zip(pool.labels.tolist(), pool.inputs.tolist()):
            w.writerow([repr(lab)] + [repr(v) for v in row])


def load_pool_csv(path, regression=False):
    path = Path(path)
    labels, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise ParseError(f"{path}: header must start with 'label'", 1)
        d = len(header) - 1
        if d < 1:
            raise ParseError(f"{path}: no feature columns", 1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != d + 1:
                raise ParseError(f"{path}: expected {d + 1} fields, got {len(rec)}", lineno)
            try:
                if regression:
                    lab = float(rec[0])
                else:
                    lab = int(rec[0])
                    if lab < 0:
                        raise ValueError("negative label")
                vals = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}: non-finite feature value", lineno)
            labels.append(lab)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no samples")
    inputs = np.array(rows, dtype=np.float64)
    if regression:
        return LabeledPool(inputs, np.array(labels, dtype=np.float64), 0)
    labels = np.array(labels, dtype=np.int64)
    num_classes = int(labels.max()) + 1
    present = np.unique(labels)
    if present.size != num_classes:
        gap = int(np.setdiff1d(np.arange(num_classes), present)[0])
        raise DataError(f"{path}: class {gap} has no samples but higher labels exist")
    return LabeledPool(inputs, labels, num_classes)


def partition_pool(pool, fractions=(1 / 3, 1 / 3, 1 / 3), rng=None):
    """Stratified split into (repr_train, task_support, task_test) pools."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"need three positive fractions summing to 1, got {tuple(fractions)}")
    if pool.is_regression:
        raise ConfigError("stratified partitioning needs a classification pool")
    rng = rng if rng is not None else Rng(0)
    cum = np.cumsum(fr)
    parts = [[], [], []]
    for c, rows in enumerate(pool.class_rows):
        k = len(rows)
        cuts = [0] + [int(round(v * k)) for v in cum[:2]] + [k]
        if any(cuts[i + 1] <= cuts[i] for i in range(3)):
            raise DataError(f"class {c} has {k} samples, too few to place one in each partition")
        shuffled = rows[rng.permutation(k)]
        for i in range(3):
            parts[i].append(shuffled[cuts[i] : cuts[i + 1]])
    return tuple(pool.subset(np.sort(np.concatenate(p)), name) for p, name in zip(parts, PARTITION_NAMES))


def draw_episode(pool, classes, shots, rng):
    """Episode over the given global classes, ``shots`` rows each, drawn without replacement."""
    rows = []
    for c in classes:
        avail = pool.class_rows[c]
        if len(avail) < shots:
            raise DataError(f"class {c} has {len(avail)} samples in pool {pool.name!r}, need {shots}")
        rows.append(avail[rng.choice(len(avail), shots)])
    return _episode(pool, classes, np.concatenate(rows))


def class_episode(pool, classes):
    """Every row of ``pool`` belonging to ``classes``, relabelled locally."""
    return _episode(pool, classes, np.concatenate([pool.class_rows[c] for c in classes]))


def _episode(pool, classes, rows):
    local = np.empty(pool.num_classes, dtype=np.int64)
    local[list(classes)] = np.arange(len(classes))
    return TaskEpisode(
        inputs=pool.inputs[rows],
        labels=local[pool.labels[rows]],
        kind=TaskKind.classification(len(classes)),
        classes=tuple(int(c) for c in classes),
        partition=pool.name,
        sample_ids=pool.sample_ids[rows],
    )


def choose_classes(pool, ways, rng):
    if ways > pool.num_classes:
        raise DataError(f"cannot draw {ways} classes from a pool with {pool.num_classes}")
    return tuple(int(c) for c in rng.choice(pool.num_classes, ways))


def sample_episode(pool, ways, shots, rng):
    """A ``ways``-way task: distinct classes in draw order, locally labelled 0..ways-1."""
    return draw_episode(pool, choose_classes(pool, ways, rng), shots, rng)


@dataclass(frozen=True)
class StreamSpec:
    source: LabeledPool
    ways: int = 5
    shots: int = 10
    num_tasks: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.ways < 2:
            raise ConfigError("ways must be >= 2")
        if self.ways > self.source.num_classes:
            raise ConfigError(f"ways={self.ways} exceeds the {self.source.num_classes} classes in the source pool")
        if self.shots < 1 or self.shots * self.ways < 2:
            raise ConfigError("need shots >= 1 and at least 2 samples per episode")
        if self.num_tasks < 0:
            raise ConfigError("num_tasks must be >= 0")


def make_stream(spec):
    """Lazily yield ``spec.num_tasks`` episodes; task ``t`` uses ``Rng(seed).fork(t)``."""
    root = Rng(spec.seed)
    for t in range(spec.num_tasks):
        try:
            yield sample_episode(spec.source, spec.ways, spec.shots, root.fork(t))
        except LeadrError as exc:
            raise TaskError(t, exc) from exc


@dataclass(frozen=True)
class SyntheticFamilySpec:
    latent_dim: int = 5
    ambient_dim: int = 50
    noise_sigma: float = 0.3
    num_global_classes: int = 20
    samples_per_class: int = 90
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.latent_dim <= self.ambient_dim:
            raise ConfigError("need 1 <= latent_dim <= ambient_dim")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.num_global_classes < 2 or self.samples_per_class < 1:
            raise ConfigError("need >= 2 classes and >= 1 sample per class")


@dataclass(eq=False)
class SyntheticFamily:
    spec: SyntheticFamilySpec
    embedding: np.ndarray  # (ambient, latent), orthonormal columns
    centers: np.ndarray  # (classes, latent)
    latent: np.ndarray  # (N, latent) noiseless class codes per row
    pool: LabeledPool


def orthonormal_embedding(d, r, rng):
    q, rmat = np.linalg.qr(rng.normal((d, r)))
    # fix column signs so the factorisation is unique
    return q * np.where(np.diag(rmat) < 0, -1.0, 1.0)


def synth_family(spec):
    """Classes are Gaussian centres in an r-dim latent space, embedded in d dims.

    Rows are ``G c_k + sigma * eps`` with ``eps`` isotropic in the ambient
    space, so a rank-r linear map recovers the class structure up to the
    in-subspace part of the noise.
    """
    rng = Rng(spec.seed)
    g = orthonormal_embedding(spec.ambient_dim, spec.latent_dim, rng)
    centers = rng.normal((spec.num_global_classes, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    labels = np.repeat(np.arange(spec.num_global_classes), spec.samples_per_class)
    latent = centers[labels]
    noise = rng.normal((labels.size, spec.ambient_dim))
    inputs = latent @ g.T + spec.noise_sigma * noise
    pool = LabeledPool(inputs, labels, spec.num_global_classes)
    return SyntheticFamily(spec, g, centers, latent, pool)


def synth_pool(spec):
    return synth_family(spec).pool


@dataclass(frozen=True)
class RegressionFamilySpec:
    latent_dim: int = 5
    ambient_dim: int = 50
    noise_sigma: float = 0.1
    target_noise: float = 0.1
    samples_per_task: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.latent_dim <= self.ambient_dim:
            raise ConfigError("need 1 <= latent_dim <= ambient_dim")
        if self.noise_sigma < 0 or self.target_noise < 0:
            raise ConfigError("noise levels must be >= 0")
        if self.samples_per_task < 2:
            raise ConfigError("need at least 2 samples per task")


def regression_stream(spec, num_tasks):
    """Tasks whose targets are random linear functionals of a shared latent code.

    Inputs are ``G z + sigma * eps``; targets ``w_t . z + tau * eta`` with a fresh
    ``w_t`` per task, so the latent subspace is the transferable structure.
    """
    root = Rng(spec.seed)
    g = orthonormal_embedding(spec.ambient_dim, spec.latent_dim, Rng(spec.seed))
    for t in range(num_tasks):
        rng = root.fork(t)
        w = rng.normal(spec.latent_dim)
        z = rng.normal((spec.samples_per_task, spec.latent_dim))
        x = z @ g.T + spec.noise_sigma * rng.normal((spec.samples_per_task, spec.ambient_dim))
        y = z @ w + spec.target_noise * rng.normal(spec.samples_per_task)
        yield TaskEpisode(x, y, TaskKind.regression(), (), "synthetic_regression", np.arange(spec.samples_per_task))
