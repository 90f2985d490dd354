"""Command-line entry point: ``leadr {simulate,train,eval,gradcheck}``.

Exit status: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 missing/corrupt checkpoint.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import representation as rep
from .errors import ConfigError, DataError, LeadrError, NumericError
from .evaluation import EvalProtocol, baseline_stl, emit_report, evaluate_representation, write_combined_curve
from .gradcheck import format_table, run_gradcheck
from .heads import HeadFitConfig, TaskKind, fit_head, predict
from .numkit import Rng
from .stream import (
    StreamSpec,
    SyntheticFamilySpec,
    load_pool_csv,
    make_stream,
    partition_pool,
    save_pool_csv,
    synth_family,
)
from .trainer import LeadrConfig, TrainLog, train_stream

# substream keys off the run seed
_INIT, _STREAM, _TRAIN, _EVAL, _PARTITION = range(5)


def _typed(cfg, key, kind):
    value = cfg[key]
    if value is None:
        return None
    try:
        if kind is int and (isinstance(value, bool) or float(value) != int(value)):
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} must be {kind.__name__}, got {value!r}") from None


def head_config(cfg):
    return HeadFitConfig(
        _typed(cfg, "head_iterations", int),
        _typed(cfg, "head_step", float),
        _typed(cfg, "head_l2", float),
        _typed(cfg, "head_tol", float),
    )


def leadr_config(cfg):
    return LeadrConfig(
        n=_typed(cfg, "n", int),
        K=_typed(cfg, "K", int),
        gamma=_typed(cfg, "gamma", float),
        minibatch=_typed(cfg, "minibatch", int),
        head_cfg=head_config(cfg),
        seed=Rng(_typed(cfg, "seed", int)).fork(_TRAIN).seed,
    )


def family_spec(cfg):
    return SyntheticFamilySpec(
        _typed(cfg, "latent_dim", int),
        _typed(cfg, "ambient_dim", int),
        _typed(cfg, "noise_sigma", float),
        _typed(cfg, "num_classes", int),
        _typed(cfg, "samples_per_class", int),
        _typed(cfg, "data_seed", int),
    )


def synthetic_partitions(cfg):
    pool = synth_family(family_spec(cfg)).pool
    return partition_pool(pool, cfg["partition"], Rng(_typed(cfg, "data_seed", int)).fork(_PARTITION))


def load_pools(cfg, names):
    """Pools for the requested partitions, from CSV paths or the synthetic family."""
    paths = {name: cfg[name] for name in names}
    if all(paths.values()):
        resolved = [Path(paths[name]).resolve() for name in names]
        if len(set(resolved)) != len(resolved):
            raise DataError(f"{names} must be distinct files")
        pools, offset = [], 0
        for name in names:
            pool = load_pool_csv(paths[name])
            # files are separate sources: keep sample ids unique across them
            pool.sample_ids = pool.sample_ids + offset
            offset += len(pool)
            pools.append(pool)
        return pools
    if any(paths.values()):
        missing = [n for n, p in paths.items() if not p]
        raise ConfigError(f"give all of {names} or none; missing {missing}")
    parts = dict(zip(("train_pool", "support_pool", "test_pool"), synthetic_partitions(cfg)))
    return [parts[name] for name in names]


def make_out_dir(out, seed):
    if out is None:
        out = Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-seed{seed}"
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg, out):
    """Write the three disjoint synthetic partitions as pool CSVs."""
    parts = synthetic_partitions(cfg)
    for pool in parts:
        save_pool_csv(pool, out / f"{pool.name}.csv")
    print(f"wrote {', '.join(f'{p.name}.csv ({len(p)} rows)' for p in parts)} to {out}")
    if cfg["verify"]:
        verify_partitions(cfg, out)
    return 0


def verify_partitions(cfg, out):
    parts = [load_pool_csv(out / f"{name}.csv") for name in ("repr_train", "task_support", "task_test")]
    full = synth_family(family_spec(cfg)).pool
    merged = np.vstack([p.inputs for p in parts])
    rows_written = {tuple(r) for r in merged.tolist()}
    if merged.shape[0] != len(full) or rows_written != {tuple(r) for r in full.inputs.tolist()}:
        raise DataError("written partitions do not cover the pool exactly once")
    if cfg["noise_sigma"] == 0:
        hc = head_config(cfg)
        for a in range(full.num_classes):
            for b in range(a + 1, full.num_classes):
                rows = np.concatenate([full.class_rows[a], full.class_rows[b]])
                y = (full.labels[rows] == b).astype(np.int64)
                head = fit_head(TaskKind.classification(2), full.inputs[rows], y, hc)
                if not np.all(predict(head, full.inputs[rows]) == y):
                    raise DataError(f"classes {a} and {b} are not separated by a linear head")
    print("verify: partitions disjoint and exhaustive" + (", pairwise separable" if cfg["noise_sigma"] == 0 else ""))


def initial_extractor(cfg, input_dim):
    kind = cfg["extractor"]
    out_dim = input_dim if kind == "identity" else _typed(cfg, "output_dim", int)
    return rep.init_params(
        kind,
        input_dim,
        out_dim,
        Rng(_typed(cfg, "seed", int)).fork(_INIT),
        hidden=_typed(cfg, "hidden", int),
        nonlinearity=cfg["nonlinearity"],
    )


def cmd_train(cfg, out):
    """Train the shared extractor on a stream of episodes."""
    (pool,) = load_pools(cfg, ["train_pool"])
    lcfg = leadr_config(cfg)
    spec = StreamSpec(
        pool,
        _typed(cfg, "ways", int),
        _typed(cfg, "shots", int),
        _typed(cfg, "num_tasks", int),
        Rng(_typed(cfg, "seed", int)).fork(_STREAM).seed,
    )
    f0 = initial_extractor(cfg, pool.dim)
    every = _typed(cfg, "checkpoint_every", int) or 0
    ckpt_dir = out / "checkpoints"
    if every:
        ckpt_dir.mkdir(exist_ok=True)
    with open(out / "train_log.csv", "w", encoding="utf-8") as sink:
        f, log = train_stream(f0, make_stream(spec), lcfg, TrainLog(maxlen=1000, sink=sink), every, ckpt_dir)
    rep.save_checkpoint(f, out / "checkpoint.bin")
    print(f"trained on {len(log)} tasks; checkpoint written to {out / 'checkpoint.bin'}")
    return 0


def eval_protocol(cfg):
    return EvalProtocol(
        _typed(cfg, "num_test_tasks", int),
        tuple(cfg["support_sizes"]),
        _typed(cfg, "repeats", int),
        _typed(cfg, "ways", int),
        "accuracy",
    )


def cmd_eval(cfg, out):
    """Evaluate a checkpoint and the raw-input baseline on unseen test tasks."""
    ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "checkpoint.bin"
    f = rep.load_checkpoint(ckpt)
    support, test = load_pools(cfg, ["support_pool", "test_pool"])
    protocol = eval_protocol(cfg)
    hc = head_config(cfg)
    workers = _typed(cfg, "workers", int)
    seed = _typed(cfg, "seed", int)
    leadr_report = evaluate_representation(f, support, test, protocol, hc, Rng(seed).fork(_EVAL), "leadr", workers)
    stl_report = baseline_stl(support, test, protocol, hc, Rng(seed).fork(_EVAL), workers)
    emit_report(leadr_report, out / "report_leadr.json")
    emit_report(stl_report, out / "report_stl.json")
    write_combined_curve([leadr_report, stl_report], out / "curve.csv")
    print(f"{'shots':>6}{'leadr':>10}{'stl':>10}")
    for (s, a, _), (_, b, _) in zip(leadr_report.curve(), stl_report.curve()):
        print(f"{s:>6}{a:>10.4f}{b:>10.4f}")
    return 0


def cmd_gradcheck(cfg, out):
    """Finite-difference check of every extractor/head gradient path."""
    results = run_gradcheck(
        _typed(cfg, "gradcheck_instances", int),
        _typed(cfg, "seed", int),
        _typed(cfg, "gradcheck_tolerance", float),
        bool(cfg["corrupt"]),
    )
    table = format_table(results)
    print(table)
    (out / "gradcheck.txt").write_text(table + "\n", encoding="utf-8")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def build_parser():
    parser = argparse.ArgumentParser(prog="leadr", description="Lifelong representation learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="flat YAML config file")
        p.add_argument("--seed", type=int, help="run seed (default 0)")
        p.add_argument("--out", help="run directory (default runs/<timestamp>-seed<seed>)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.resolve(args.config, args.set, seed=args.seed)
        out = make_out_dir(args.out, cfg["seed"])
        config_mod.dump(cfg, out / f"{args.command}_config.json")
        return COMMANDS[args.command](cfg, out)
    except LeadrError as exc:
        print(f"leadr {args.command}: error: {exc}".replace("\n", " "), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
