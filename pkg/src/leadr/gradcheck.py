"""Central finite-difference checks of the representation gradient.

The checked quantity is the frozen-head loss ``L(theta) = loss(head, f_theta(x), y)``
that drives every representation update. Gradients w.r.t. theta and w.r.t.
the input are both compared.
"""

from dataclasses import dataclass

import numpy as np

from . import representation as rep
from .heads import TaskHead, TaskKind, head_loss, head_loss_and_input_grad
from .numkit import Rng

EXTRACTOR_CASES = (("identity", "tanh"), ("linear", "tanh"), ("mlp2", "tanh"), ("mlp2", "relu"))
HEAD_CASES = ("classification", "regression")


@dataclass
class CaseResult:
    extractor: str
    head: str
    instances: int
    max_rel_theta: float
    max_rel_input: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_theta <= self.tolerance and self.max_rel_input <= self.tolerance

    @property
    def name(self):
        return f"{self.extractor}/{self.head}"


def relative_error(a, b, floor=1e-8):
    """``||a - b|| / max(||a||, ||b||)``; zero when both are (numerically) zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / scale)


def central_difference(fn, x0, step=1e-5):
    x = np.array(x0, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        up = fn(x)
        flat[j] = orig - step
        down = fn(x)
        flat[j] = orig
        gflat[j] = (up - down) / (2.0 * step)
    return g


def random_instance(kind, nonlinearity, head_kind, rng, max_d=10, max_h=8, max_p=6, max_c=4, max_m=8):
    """Random (extractor, head, x, y) within the given size limits."""
    d = 1 + rng.integers(max_d if kind != "identity" else max_p)
    p = d if kind == "identity" else 1 + rng.integers(max_p)
    h = 1 + rng.integers(max_h)
    m = 1 + rng.integers(max_m)
    f = rep.init_params(kind, d, p, rng, hidden=h, nonlinearity=nonlinearity)
    if f.num_params:
        # non-zero biases too, so every block is exercised
        f.params[:] = rng.normal(f.num_params)
    x = rng.normal((m, d))
    if head_kind == "classification":
        c = 2 + rng.integers(max_c - 1)
        kind_ = TaskKind.classification(c)
        head = TaskHead(kind_, rng.normal((c, p)), rng.normal(c))
        y = rng.integers(c, m)
    else:
        kind_ = TaskKind.regression()
        head = TaskHead(kind_, rng.normal((1, p)), rng.normal(1))
        y = rng.normal(m)
    return f, head, x, y


def analytic_gradients(f, head, x, y):
    feats, trace = rep.forward(f, x)
    _, g_feats = head_loss_and_input_grad(head, feats, y)
    return rep.backward(f, trace, g_feats)


def numeric_gradients(f, head, x, y, step=1e-5):
    probe = f.copy()

    def by_theta(theta):
        probe.params[:] = theta
        return head_loss(head, rep.forward(probe, x)[0], y)

    def by_input(xx):
        return head_loss(head, rep.forward(f, xx)[0], y)

    return central_difference(by_theta, f.params, step), central_difference(by_input, x, step)


def check_case(kind, nonlinearity, head_kind, instances=50, seed=0, tolerance=1e-6, corrupt=False):
    label = kind if kind != "mlp2" else f"mlp2-{nonlinearity}"
    root = Rng(seed).fork(EXTRACTOR_CASES.index((kind, nonlinearity)), HEAD_CASES.index(head_kind))
    worst_theta = worst_x = 0.0
    for i in range(instances):
        f, head, x, y = random_instance(kind, nonlinearity, head_kind, root.fork(i))
        g_theta, g_x = analytic_gradients(f, head, x, y)
        if corrupt:
            # detector self-test: one wrong partial must be caught
            target = g_theta if g_theta.size else g_x.reshape(-1)
            target[0] += 1e-3 * (1.0 + abs(target[0]))
        n_theta, n_x = numeric_gradients(f, head, x, y)
        worst_theta = max(worst_theta, relative_error(g_theta, n_theta))
        worst_x = max(worst_x, relative_error(g_x, n_x))
    return CaseResult(label, head_kind, instances, worst_theta, worst_x, tolerance)


def run_gradcheck(instances=50, seed=0, tolerance=1e-6, corrupt=False):
    return [
        check_case(kind, nl, hk, instances, seed, tolerance, corrupt)
        for kind, nl in EXTRACTOR_CASES
        for hk in HEAD_CASES
    ]


def format_table(results):
    lines = [f"{'case':<28}{'n':>4}{'max rel err theta':>20}{'max rel err input':>20}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<28}{r.instances:>4}{r.max_rel_theta:>20.3e}{r.max_rel_input:>20.3e}  {status}")
    return "\n".join(lines)
