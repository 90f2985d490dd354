"""Transfer evaluation with a frozen extractor, plus metrics and report files.

Test tasks draw their classes once; support sets come from one pool and the
accuracy is measured on every sample of those classes in a second, disjoint
pool. Each (task, support size, repeat) uses its own random substream, so
results do not depend on evaluation order or parallelism.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import representation as rep
from .errors import ConfigError, DataError, MetricError
from .heads import HeadFitConfig, TaskKind, decision_scores, fit_head, predict
from .numkit import Rng
from .stream import LabeledPool, TaskEpisode, choose_classes, class_episode, draw_episode, load_pool_csv
from .trainer import train_stream

METRICS = ("accuracy", "auc", "rmse")


@dataclass(frozen=True)
class EvalProtocol:
    num_test_tasks: int = 100
    support_sizes: tuple = (1, 2, 3, 5, 10)
    repeats: int = 10
    ways: int = 5
    metric: str = "accuracy"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.support_sizes)
        object.__setattr__(self, "support_sizes", sizes)
        if self.num_test_tasks < 0:
            raise ConfigError("num_test_tasks must be >= 0")
        if not sizes or sizes[0] < 1 or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError(f"support sizes must be positive and strictly ascending, got {sizes}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.ways < 2:
            raise ConfigError("ways must be >= 2")


@dataclass
class EvalReport:
    method: str
    metric: str
    support_sizes: list
    means: list  # None where no task contributed
    stds: list
    per_task: list  # per_task[i][t]: task t's value at support_sizes[i], averaged over repeats
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in self.means:
            if v is None:
                continue
            if self.metric in ("accuracy", "auc") and not 0.0 <= v <= 1.0:
                raise MetricError(f"{self.metric} mean {v} outside [0, 1]")
            if self.metric == "rmse" and v < 0.0:
                raise MetricError(f"rmse mean {v} is negative")

    def curve(self):
        return [(s, m, sd) for s, m, sd in zip(self.support_sizes, self.means, self.stds) if m is not None]

    def mean_at(self, size):
        return self.means[self.support_sizes.index(size)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def auc_binary(scores, labels):
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counted one half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores but {y.size} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise MetricError("labels must be binary 0/1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    # average 1-based rank over runs of tied scores
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(pred, target):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise MetricError(f"{p.size} predictions but {t.size} targets")
    if p.size == 0:
        raise MetricError("rmse of an empty set")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def score_head(head, features, labels, metric):
    if metric == "accuracy":
        return float(np.mean(predict(head, features) == np.asarray(labels)))
    if metric == "auc":
        return auc_binary(decision_scores(head, features), labels)
    return rmse(predict(head, features), labels)


def _check_disjoint(support, test):
    if np.intersect1d(support.sample_ids, test.sample_ids).size:
        raise DataError("a support sample also appears in the measurement set")


def _evaluate_task(f, support_pool, test_pool, protocol, head_cfg, rng):
    classes = choose_classes(support_pool, protocol.ways, rng)
    test = class_episode(test_pool, classes)
    test_feats = rep.forward(f, test.inputs)[0]
    out = []
    for size in protocol.support_sizes:
        vals = []
        for r in range(protocol.repeats):
            sub = rng.fork(size, r)
            support = draw_episode(support_pool, classes, size, sub)
            _check_disjoint(support, test)
            head = fit_head(support.kind, rep.forward(f, support.inputs)[0], support.labels, head_cfg, sub)
            vals.append(score_head(head, test_feats, test.labels, protocol.metric))
        out.append(float(np.mean(vals)))
    return out


def evaluate_representation(
    f, support_pool, test_pool, protocol=None, head_cfg=None, rng=None, method="leadr", workers=1
):
    """Fit per-task heads on ``f(support)`` and score them on the task's test rows.

    ``f`` is treated as frozen. With ``workers > 1`` tasks run on a thread
    pool; the report is identical either way.
    """
    protocol = protocol or EvalProtocol()
    head_cfg = head_cfg or HeadFitConfig()
    rng = rng if rng is not None else Rng(0)
    if protocol.metric == "rmse":
        raise ConfigError("task-stream evaluation scores classification tasks; use accuracy or auc")
    if protocol.metric == "auc" and protocol.ways != 2:
        raise ConfigError("auc needs 2-way test tasks")
    if np.intersect1d(support_pool.sample_ids, test_pool.sample_ids).size:
        raise DataError("support and test pools share samples")
    for pool in (support_pool, test_pool):
        if pool.dim != f.input_dim:
            raise ConfigError(f"pool {pool.name!r} has {pool.dim} features, extractor expects {f.input_dim}")

    def run(t):
        return _evaluate_task(f, support_pool, test_pool, protocol, head_cfg, rng.fork(t))

    tasks = range(protocol.num_test_tasks)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(run, tasks))
    else:
        rows = [run(t) for t in tasks]

    per_task = [[row[i] for row in rows] for i in range(len(protocol.support_sizes))]
    means = [float(np.mean(v)) if v else None for v in per_task]
    stds = [float(np.std(v)) if v else None for v in per_task]
    config = {
        "protocol": asdict(protocol),
        "head": asdict(head_cfg),
        "extractor": f.config(),
        "seed": rng.seed,
    }
    config["protocol"]["support_sizes"] = list(protocol.support_sizes)
    return EvalReport(method, protocol.metric, list(protocol.support_sizes), means, stds, per_task, config)


def baseline_stl(support_pool, test_pool, protocol=None, head_cfg=None, rng=None, workers=1):
    """Single-task baseline: the same protocol with heads on raw inputs."""
    return evaluate_representation(
        rep.identity(support_pool.dim), support_pool, test_pool, protocol, head_cfg, rng, "stl", workers
    )


def curve_path(path):
    path = Path(path)
    return path.with_name(path.stem + "_curve.csv")


def emit_report(report, path):
    """Write the report as sorted-key JSON and its ``support_size,mean,std`` curve beside it."""
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    with open(curve_path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["support_size", "mean", "std"])
        for s, m, sd in report.curve():
            w.writerow([s, repr(m), repr(sd)])


def read_report(path):
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_combined_curve(reports, path):
    """One row per support size with ``<method>_mean`` / ``<method>_std`` columns."""
    sizes = reports[0].support_sizes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["support_size"] + [f"{r.method}_{k}" for r in reports for k in ("mean", "std")])
        for i, s in enumerate(sizes):
            if reports[0].means[i] is None:
                continue
            w.writerow([s] + [repr(v) for r in reports for v in (r.means[i], r.stds[i])])


@dataclass
class MultitaskResult:
    metric: str
    per_task: list
    mean: float


def _half_split(pool, fraction, rng):
    """Train/test row indices; stratified by class for classification pools."""
    if pool.is_regression:
        groups = [np.arange(len(pool))]
    else:
        groups = pool.class_rows
    tr, te = [], []
    for rows in groups:
        perm = rows[rng.permutation(len(rows))]
        k = int(round(fraction * len(rows)))
        tr.append(perm[:k])
        te.append(perm[k:])
    tr, te = np.sort(np.concatenate(tr)), np.sort(np.concatenate(te))
    if tr.size == 0 or te.size == 0:
        raise DataError(f"pool {pool.name!r} is too small for a {fraction:g} split")
    return tr, te


def _as_episode(pool, rows, kind):
    return TaskEpisode(pool.inputs[rows], pool.labels[rows], kind, (), pool.name, pool.sample_ids[rows])


def multitask_protocol_run(
    tasks,
    kind="classification",
    split_fraction=0.5,
    head_cfg=None,
    f=None,
    rng=None,
    train_cfg=None,
    passes=1,
):
    """Per-task train/test split, head on the train part, metric on the rest.

    ``tasks`` are pools or CSV paths (one per task). Binary classification is
    scored by AUC and regression by RMSE, macro-averaged over tasks. When
    ``train_cfg`` is given, ``f`` (required) is first trained by streaming the
    training parts as episodes, ``passes`` times in shuffled order.
    """
    head_cfg = head_cfg or HeadFitConfig()
    rng = rng if rng is not None else Rng(0)
    regression = kind == "regression"
    pools = [t if isinstance(t, LabeledPool) else load_pool_csv(t, regression=regression) for t in tasks]
    if not pools:
        raise DataError("no tasks given")
    if regression:
        task_kind, metric = TaskKind.regression(), "rmse"
    else:
        for p in pools:
            if p.is_regression or p.num_classes != 2:
                raise DataError(f"pool {p.name!r} is not a binary classification task")
        task_kind, metric = TaskKind.classification(2), "auc"
    splits = [_half_split(p, split_fraction, rng.fork(i)) for i, p in enumerate(pools)]

    if f is None:
        f = rep.identity(pools[0].dim)
    if train_cfg is not None:
        order_rng = rng.fork(len(pools))
        order = np.concatenate([order_rng.permutation(len(pools)) for _ in range(passes)])
        episodes = (_as_episode(pools[i], splits[i][0], task_kind) for i in order)
        f, _ = train_stream(f, episodes, train_cfg)

    per_task = []
    for i, (pool, (tr, te)) in enumerate(zip(pools, splits)):
        head = fit_head(task_kind, rep.forward(f, pool.inputs[tr])[0], pool.labels[tr], head_cfg, rng.fork(i, 1))
        per_task.append(score_head(head, rep.forward(f, pool.inputs[te])[0], pool.labels[te], metric))
    return MultitaskResult(metric, per_task, float(np.mean(per_task)))

