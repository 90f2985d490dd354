import itertools
import math
import weakref

import numpy as np
import pytest

from leadr import representation as rep
from leadr import trainer
from leadr.errors import ConfigError, ShapeError, TaskError
from leadr.heads import HeadFitConfig, TaskKind, fit_head, head_loss
from leadr.numkit import Rng
from leadr.stream import StreamSpec, SyntheticFamilySpec, TaskEpisode, make_stream, synth_pool
from leadr.trainer import (
    LeadrConfig,
    TrainLog,
    estimate_generalization,
    process_task,
    split_losses,
    split_pseudo,
    train_stream,
)

from conftest import assert_bits_equal


def class_task(rng, m=8, d=7, c=2):
    labels = np.arange(m) % c
    return TaskEpisode(rng.normal((m, d)), labels, TaskKind.classification(c))


def regression_task(rng, m=6, d=3, w=None):
    x = rng.normal((m, d))
    w = rng.normal(d) if w is None else w
    return TaskEpisode(x, x @ w + 0.5, TaskKind.regression())


@pytest.fixture(scope="module")
def small_pool():
    return synth_pool(SyntheticFamilySpec(3, 8, 0.3, 6, 12, seed=3))


class TestSplitPseudo:
    def test_two_samples(self):
        for seed in range(20):
            s = split_pseudo(2, 1, Rng(seed))
            assert sorted(s.tr.tolist() + s.va.tolist()) == [0, 1]

    def test_partition_property(self):
        for seed in range(50):
            s = split_pseudo(11, 4, Rng(seed))
            assert len(s.tr) == 4 and set(s.tr) | set(s.va) == set(range(11))
            assert not set(s.tr) & set(s.va)

    def test_deterministic(self):
        a, b = split_pseudo(10, 3, Rng(9)), split_pseudo(10, 3, Rng(9))
        assert np.array_equal(a.tr, b.tr) and np.array_equal(a.va, b.va)

    def test_uniform_over_subsets(self):
        counts = dict.fromkeys(itertools.combinations(range(6), 3), 0)
        root = Rng(42)
        for i in range(6000):
            counts[tuple(split_pseudo(6, 3, root.fork(i)).tr.tolist())] += 1
        assert len(counts) == 20
        assert all(abs(v / 6000 - 1 / 20) <= 0.02 for v in counts.values())

    @pytest.mark.parametrize("m,n", [(3, 3), (3, 0), (2, 5)])
    def test_invalid_sizes(self, m, n):
        with pytest.raises(ConfigError):
            split_pseudo(m, n, Rng(0))


class TestConfig:
    def test_defaults_resolve(self):
        assert LeadrConfig().resolve(50) == (25, 25)
        assert LeadrConfig().resolve(100) == (50, 32)
        assert LeadrConfig().resolve(5) == (3, 2)

    def test_minibatch_too_large(self):
        with pytest.raises(ConfigError):
            LeadrConfig(n=4, minibatch=5).resolve(8)

    @pytest.mark.parametrize("kw", [{"K": -1}, {"gamma": 0.0}, {"n": 0}, {"minibatch": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            LeadrConfig(**kw)


class TestProcessTask:
    def test_k_zero_keeps_params(self, rng):
        f = rep.init_params("mlp2", 7, 5, rng, hidden=6)
        before = f.params.copy()
        f2, head, _ = process_task(f, class_task(rng), LeadrConfig(K=0), Rng(1))
        assert_bits_equal(f2.params, before)
        assert head.weights.shape == (2, 5)

    def test_identity_extractor(self, rng):
        f = rep.identity(7)
        ep = class_task(rng)
        cfg = LeadrConfig(K=25, gamma=1.0)
        f2, head, _ = process_task(f, ep, cfg, Rng(5))
        assert f2.num_params == 0
        split = split_pseudo(8, 4, Rng(5))
        ref = fit_head(ep.kind, ep.inputs[split.tr], ep.labels[split.tr], cfg.head_cfg)
        assert_bits_equal(head.weights, ref.weights)
        assert_bits_equal(head.bias, ref.bias)

    def test_head_frozen_across_updates(self, rng, monkeypatch):
        seen = []
        real = trainer.head_loss_and_input_grad

        def spy(head, feats, labels):
            seen.append(head.checksum())
            return real(head, feats, labels)

        monkeypatch.setattr(trainer, "head_loss_and_input_grad", spy)
        f = rep.init_params("mlp2", 7, 5, rng, hidden=6)
        _, head, _ = process_task(f, class_task(rng), LeadrConfig(K=10, gamma=0.5), Rng(2))
        assert len(seen) == 10 and set(seen) == {head.checksum()}
        assert not head.weights.flags.writeable

    def test_minibatch_descent(self):
        r = Rng(31)
        f = rep.init_params("mlp2", 7, 5, r, hidden=6)
        ep = class_task(r, m=8, d=7, c=3)
        cfg = LeadrConfig(n=4, K=1, gamma=1e-3, minibatch=4)
        # replay the task's draws: split first, then one minibatch
        replay = Rng(77)
        split = split_pseudo(8, 4, replay)
        pick = split.va[replay.integers(4, 4)]
        before = f.copy()
        _, head, _ = process_task(f, ep, cfg, Rng(77))
        loss_pre = head_loss(head, rep.forward(before, ep.inputs[pick])[0], ep.labels[pick])
        loss_post = head_loss(head, rep.forward(f, ep.inputs[pick])[0], ep.labels[pick])
        assert loss_post <= loss_pre

    def test_one_step_regression_descent(self):
        r = Rng(8)
        f = rep.init_params("linear", 3, 3, r)
        ep = regression_task(r, m=6, d=3)
        _, _, rec = process_task(f, ep, LeadrConfig(n=5, K=1, gamma=1e-3), Rng(4))
        assert rec.va_loss_post < rec.va_loss_pre

    def test_record_fields(self, rng):
        f = rep.init_params("linear", 7, 4, rng)
        _, _, rec = process_task(f, class_task(rng), LeadrConfig(), Rng(0), ordinal=12)
        assert rec.ordinal == 12 and rec.millis >= 0
        assert all(math.isfinite(v) for v in rec[1:4])

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            process_task(rep.identity(3), class_task(rng, d=4), LeadrConfig(), Rng(0))

    def test_n_too_large(self, rng):
        with pytest.raises(ConfigError):
            process_task(rep.identity(7), class_task(rng), LeadrConfig(n=8), Rng(0))


class TestTrainStream:
    def test_empty_stream(self, rng):
        f0 = rep.init_params("mlp2", 4, 3, rng, hidden=5)
        f, log = train_stream(f0, iter(()), LeadrConfig())
        assert_bits_equal(f.params, f0.params) and len(log) == 0

    def test_does_not_mutate_f0(self, small_pool, rng):
        f0 = rep.init_params("linear", 8, 4, rng)
        before = f0.params.copy()
        train_stream(f0, make_stream(StreamSpec(small_pool, 3, 4, 5)), LeadrConfig())
        assert_bits_equal(f0.params, before)

    def test_single_task_equals_process_task(self, small_pool, rng):
        f0 = rep.init_params("mlp2", 8, 4, rng, hidden=5)
        cfg = LeadrConfig(seed=17)
        ep = next(make_stream(StreamSpec(small_pool, 3, 4, 1)))
        f, log = train_stream(f0, [ep], cfg)
        ref, _, rec = process_task(f0.copy(), ep, cfg, Rng(17).fork(0))
        assert_bits_equal(f.params, ref.params)
        assert list(log)[0][:4] == rec[:4]

    def test_deterministic(self, small_pool):
        def run():
            f0 = rep.init_params("mlp2", 8, 4, Rng(1), hidden=5)
            return train_stream(f0, make_stream(StreamSpec(small_pool, 3, 4, 30, seed=2)), LeadrConfig(seed=5))

        (fa, la), (fb, lb) = run(), run()
        assert_bits_equal(fa.params, fb.params)
        # wall time is the only field allowed to differ
        assert [r[:4] for r in la] == [r[:4] for r in lb]

    def test_heads_are_not_retained(self, small_pool, monkeypatch):
        refs = []
        real = trainer.fit_head

        def tracking(*args, **kwargs):
            head = real(*args, **kwargs)
            refs.append(weakref.ref(head))
            return head

        monkeypatch.setattr(trainer, "fit_head", tracking)
        log = TrainLog(maxlen=5)
        f0 = rep.init_params("linear", 8, 4, Rng(0))
        train_stream(f0, make_stream(StreamSpec(small_pool, 3, 4, 40)), LeadrConfig(), log)
        assert len(refs) == 40
        assert sum(r() is not None for r in refs) == 0
        assert len(log.records) == 5 and len(log) == 40

    def test_log_sink_and_read(self, small_pool, tmp_path):
        path = tmp_path / "log.csv"
        with open(path, "w") as sink:
            _, log = train_stream(
                rep.identity(8), make_stream(StreamSpec(small_pool, 3, 4, 7)), LeadrConfig(), TrainLog(3, sink)
            )
        back = TrainLog.read(path)
        assert [r.ordinal for r in back] == list(range(7))
        assert [r[:4] for r in back[-3:]] == [r[:4] for r in log]

    def test_checkpoints(self, small_pool, tmp_path):
        f0 = rep.init_params("linear", 8, 4, Rng(0))
        f, _ = train_stream(f0, make_stream(StreamSpec(small_pool, 3, 4, 6)), LeadrConfig(), None, 3, tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["checkpoint_000003.bin", "checkpoint_000006.bin"]
        assert_bits_equal(rep.load_checkpoint(tmp_path / "checkpoint_000006.bin").params, f.params)

    def test_error_carries_ordinal(self, small_pool, rng):
        eps = list(make_stream(StreamSpec(small_pool, 3, 4, 3)))
        eps[2] = class_task(rng, d=5)
        with pytest.raises(TaskError) as info:
            train_stream(rep.identity(8), eps, LeadrConfig())
        assert info.value.ordinal == 2 and info.value.exit_code == ShapeError.exit_code

    def test_overflowing_features_reported(self, rng):
        ep = class_task(rng, d=3)
        ep.inputs[0, 0] = 1e308
        f0 = rep.init_params("linear", 3, 3, Rng(0))
        f0.params[:] = 10.0
        with pytest.raises(TaskError) as info, np.errstate(over="ignore", invalid="ignore"):
            train_stream(f0, [ep], LeadrConfig())
        assert info.value.exit_code == 4


def brute_force(f, ep, n, head_cfg):
    feats = rep.forward(f, ep.inputs)[0]
    m = ep.m
    vals = []
    for tr in itertools.combinations(range(m), n):
        va = [i for i in range(m) if i not in tr]
        head = fit_head(ep.kind, feats[list(tr)], ep.labels[list(tr)], head_cfg)
        vals.append(head_loss(head, feats[va], ep.labels[va]))
    return vals


class TestEstimateGeneralization:
    def test_realizable_regression_is_zero(self, rng):
        ep = regression_task(rng, m=8, d=2)
        cfg = HeadFitConfig(l2=0.0)
        g = estimate_generalization(rep.identity(2), ep, 4, 10, cfg, Rng(3))
        assert abs(g) <= 1e-8

    def test_enumeration_matches_brute_force(self, rng):
        f = rep.init_params("mlp2", 3, 2, rng, hidden=4)
        ep = class_task(rng, m=4, d=3)
        hc = HeadFitConfig()
        ref = float(np.mean(brute_force(f, ep, 2, hc)))
        assert abs(estimate_generalization(f, ep, 2, head_cfg=hc, mode="enumerate") - ref) <= 1e-12

    def test_monte_carlo_within_three_se(self, rng):
        f = rep.init_params("linear", 3, 2, rng)
        ep = class_task(rng, m=4, d=3)
        hc = HeadFitConfig(iterations=50)
        exact = split_losses(f, ep, 2, head_cfg=hc, mode="enumerate")
        mc = estimate_generalization(f, ep, 2, 600, hc, Rng(99))
        se = np.std(exact) / math.sqrt(600)
        assert abs(mc - exact.mean()) <= 3 * se

    def test_f_is_not_mutated(self, rng):
        f = rep.init_params("mlp2", 3, 2, rng, hidden=4)
        before = f.params.copy()
        estimate_generalization(f, class_task(rng, m=6, d=3), 3, 5)
        assert_bits_equal(f.params, before)

    def test_enumeration_limit(self, rng):
        ep = class_task(rng, m=16, d=2)
        with pytest.raises(ConfigError):
            estimate_generalization(rep.identity(2), ep, 8, mode="enumerate")

    def test_bad_mode_and_splits(self, rng):
        ep = class_task(rng, m=4, d=2)
        with pytest.raises(ConfigError):
            estimate_generalization(rep.identity(2), ep, 2, mode="bogus")
        with pytest.raises(ConfigError):
            estimate_generalization(rep.identity(2), ep, 2, num_splits=0)
        with pytest.raises(ConfigError):
            estimate_generalization(rep.identity(2), ep, 4)
