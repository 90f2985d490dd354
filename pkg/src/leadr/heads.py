"""Per-task linear heads fitted on extracted features.

Classification heads are multinomial logistic regression fitted by full-batch
gradient descent on ``mean CE + l2 * ||W||^2``; regression heads are ridge
regression solved in closed form with the same objective scaling. The bias is
never penalised.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError
from .numkit import as_matrix, check_labels, cross_entropy_rows, log_softmax_rows, softmax_rows


@dataclass(frozen=True)
class TaskKind:
    name: str = "classification"
    num_classes: int = 2

    def __post_init__(self):
        if self.name not in ("classification", "regression"):
            raise ConfigError(f"unknown task kind {self.name!r}")
        if self.name == "classification" and self.num_classes < 2:
            raise ConfigError(f"classification needs at least 2 classes, got {self.num_classes}")

    @classmethod
    def classification(cls, num_classes):
        return cls("classification", int(num_classes))

    @classmethod
    def regression(cls):
        return cls("regression", 1)

    @property
    def is_classification(self):
        return self.name == "classification"


@dataclass(frozen=True)
class HeadFitConfig:
    iterations: int = 500
    step_size: float = 0.1
    l2: float = 1e-4
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("head iterations must be >= 1")
        if not self.step_size > 0:
            raise ConfigError("head step_size must be positive")
        if self.l2 < 0:
            raise ConfigError("head l2 must be non-negative")
        if self.tolerance < 0:
            raise ConfigError("head tolerance must be non-negative")


@dataclass(eq=False)
class TaskHead:
    kind: TaskKind
    weights: np.ndarray  # (C, p) or (1, p)
    bias: np.ndarray  # (C,) or (1,)
    l2: float = 0.0
    train_loss: float = float("nan")  # regularised fitting objective at the returned parameters

    @property
    def feature_dim(self):
        return self.weights.shape[1]

    def logits(self, features):
        x = as_matrix(features, "features")
        if x.shape[1] != self.feature_dim:
            raise ShapeError(f"features have {x.shape[1]} columns, head was fitted on {self.feature_dim}")
        return x @ self.weights.T + self.bias

    def checksum(self):
        return hash((self.weights.tobytes(), self.bias.tobytes()))


def _targets(kind, labels, rows):
    if kind.is_classification:
        return check_labels(labels, kind.num_classes, rows)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != rows:
        raise ShapeError(f"expected {rows} targets, got {y.shape[0]}")
    return y


def _softmax_objective(x, onehot, w, b, l2):
    lp = log_softmax_rows(x @ w.T + b)
    return -np.sum(onehot * lp) / x.shape[0] + l2 * np.sum(w * w), lp


def fit_head(kind, features, labels, cfg=None, rng=None, history=None):
    """Fit a head on ``features``. ``rng`` is accepted for interface symmetry;
    both fits are deterministic from zero initialisation.

    If ``history`` is a list, the objective after each accepted step is appended.
    """
    cfg = cfg or HeadFitConfig()
    x = as_matrix(features, "features")
    n, p = x.shape
    if n == 0:
        raise DataError("cannot fit a head on an empty training set")
    if not np.all(np.isfinite(x)):
        raise NumericError("features contain non-finite values")
    y = _targets(kind, labels, n)
    if not kind.is_classification:
        return _fit_ridge(kind, x, y, cfg.l2)

    c = kind.num_classes
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    w = np.zeros((c, p))
    b = np.zeros(c)
    step = cfg.step_size
    loss, lp = _softmax_objective(x, onehot, w, b, cfg.l2)
    if history is not None:
        history.append(loss)
    for _ in range(cfg.iterations):
        resid = (np.exp(lp) - onehot) / n
        gw = resid.T @ x + 2.0 * cfg.l2 * w
        gb = resid.sum(axis=0)
        w_new = w - step * gw
        b_new = b - step * gb
        new_loss, new_lp = _softmax_objective(x, onehot, w_new, b_new, cfg.l2)
        if not new_loss <= loss:
            # reject and backtrack
            step *= 0.5
            if step < 1e-12:
                break
            continue
        improvement = loss - new_loss
        w, b, loss, lp = w_new, b_new, new_loss, new_lp
        if history is not None:
            history.append(loss)
        if improvement < cfg.tolerance:
            break
    return TaskHead(kind, w, b, cfg.l2, float(loss))


def _fit_ridge(kind, x, y, l2):
    # minimise mean((x w + b - y)^2) + l2 ||w||^2 via the stacked least-squares system
    n, p = x.shape
    a = np.hstack([x, np.ones((n, 1))])
    if l2 > 0:
        reg = np.zeros((p, p + 1))
        reg[:, :p] = np.sqrt(n * l2) * np.eye(p)
        a = np.vstack([a, reg])
        rhs = np.concatenate([y, np.zeros(p)])
    else:
        rhs = y
    beta = np.linalg.lstsq(a, rhs, rcond=None)[0]
    w = beta[:p].reshape(1, p)
    b = beta[p:]
    pred = x @ w[0] + b[0]
    loss = float(np.mean((pred - y) ** 2) + l2 * np.sum(w * w))
    return TaskHead(kind, w, b, l2, loss)


def ridge_normal_residual(head, features, targets):
    """Max-abs residual of ``(A^T A + n*l2*D) beta - A^T y`` with ``D`` = diag(1..1, 0)."""
    x = as_matrix(features, "features")
    n, p = x.shape
    a = np.hstack([x, np.ones((n, 1))])
    d = np.eye(p + 1)
    d[p, p] = 0.0
    beta = np.concatenate([head.weights[0], head.bias])
    lhs = (a.T @ a + n * head.l2 * d) @ beta
    return float(np.max(np.abs(lhs - a.T @ np.asarray(targets, dtype=np.float64))))


def predict(head, features):
    """Class indices (argmax, ties to the lowest index) or real-valued predictions."""
    z = head.logits(features)
    if head.kind.is_classification:
        return np.argmax(z, axis=1)
    return z[:, 0]


def decision_scores(head, features):
    """Real-valued score per sample: class-1 minus class-0 logit for binary heads."""
    z = head.logits(features)
    if not head.kind.is_classification:
        return z[:, 0]
    if head.kind.num_classes != 2:
        raise ConfigError("decision scores are defined for binary heads only")
    return z[:, 1] - z[:, 0]


def head_loss_and_input_grad(head, features, labels):
    """Unregularised surrogate loss of a fixed head and its gradient w.r.t. the features."""
    z = head.logits(features)
    m = z.shape[0]
    y = _targets(head.kind, labels, m)
    if m == 0:
        return 0.0, np.zeros((0, head.feature_dim))
    if head.kind.is_classification:
        loss = float(np.mean(cross_entropy_rows(z, y)))
        resid = softmax_rows(z)
        # p_y - 1 written as minus the other probabilities to avoid cancellation
        resid[np.arange(m), y] = 0.0
        resid[np.arange(m), y] = -resid.sum(axis=1)
        return loss, (resid / m) @ head.weights
    r = z[:, 0] - y
    loss = float(np.mean(r * r))
    return loss, np.outer(2.0 * r / m, head.weights[0])


def head_loss(head, features, labels):
    return head_loss_and_input_grad(head, features, labels)[0]
