"""``pmnowcast`` command line: synth | stats | train | evaluate | plots.

Exit codes: 0 ok, 2 usage, 3 configuration error, 4 data error, 5 runtime
(checkpoint/training) error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .errors import CheckpointError, ConfigError, DataError, PMNowcastError, TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 3, 4, 5

log = logging.getLogger("pmnowcast")


def _load(args) -> config_mod.ExperimentConfig:
    return config_mod.load(args.config, args.set)


def _catalog(cfg, start, end):
    from .ingest import scan_archive

    return scan_archive(cfg.paths.archive, start, end, cfg.paths.file_pattern)


def _stats(cfg):
    from .preprocess import NormalizationStats

    path = cfg.paths.stats_file
    if not path.is_file():
        raise DataError(f"stats sidecar {path} not found; run `pmnowcast stats` first")
    return NormalizationStats.load(path)


def _splits(cfg, stats):
    from .preprocess import FrameStore, SampleDataset, build_samples, split_samples, write_manifest

    s = cfg.split
    catalog = _catalog(cfg, min(s.train_start, s.test_start), max(s.train_end, s.test_end))
    samples = build_samples(catalog, cfg.species)
    train, val, test = split_samples(samples, s)
    write_manifest((train, val, test), cfg.paths.output / f"manifest_{cfg.species}.csv")
    store = FrameStore(stats, cfg.input_domain)
    return tuple(SampleDataset(part, store, cfg.output_domain) for part in (train, val, test))


def cmd_synth(args) -> int:
    from .synthetic import generate_archive

    cfg = _load(args)
    if cfg.scenario is None:
        raise ConfigError("config has no 'scenario' section")
    catalog = generate_archive(cfg.scenario, cfg.paths.archive, cfg.paths.file_pattern)
    print(f"wrote {len(catalog)} daily files to {cfg.paths.archive}")
    return EXIT_OK


def cmd_stats(args) -> int:
    from .preprocess import compute_stats

    cfg = _load(args)
    s = cfg.split
    stats = compute_stats(
        _catalog(cfg, s.train_start, s.train_end),
        s.train_start,
        s.train_end,
        cfg.input_domain,
        workers=args.workers,
    )
    path = stats.save(cfg.paths.stats_file)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .models import build_model
    from .training import deterministic_from_env, resume, set_deterministic, train

    cfg = _load(args)
    set_deterministic(deterministic_from_env())
    stats = _stats(cfg)
    train_ds, val_ds, _ = _splits(cfg, stats)
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(config_mod.dump(cfg))
    if args.resume:
        result = resume(
            run_dir / "last_state.pt", train_ds, val_ds, cfg.train, run_dir, stats, args.stop_after_epoch
        )
    else:
        result = train(
            build_model(cfg.model),
            cfg.species,
            train_ds,
            val_ds,
            cfg.loss,
            cfg.train,
            run_dir,
            stats,
            stop_after_epoch=args.stop_after_epoch,
        )
    print(f"best val loss {result.best_val_loss:.6f} at epoch {result.best_epoch}; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_model
    from .models import load_weights
    from .training import deterministic_from_env, set_deterministic

    cfg = _load(args)
    set_deterministic(deterministic_from_env())
    stats = _stats(cfg)
    _, _, test_ds = _splits(cfg, stats)
    if args.identity:
        model, meta, name = None, None, "identity"
    else:
        ckpt = Path(args.checkpoint) if args.checkpoint else cfg.run_dir / "best.safetensors"
        model, meta = load_weights(ckpt, species=cfg.species)
        name = cfg.model.name or cfg.model.family
    out = Path(args.out) if args.out else cfg.run_dir / "eval"
    result = evaluate_model(
        model,
        meta,
        test_ds,
        stats,
        model_name=name,
        out_dir=out,
        identity=args.identity,
        test_range=(cfg.split.test_start, cfg.split.test_end),
    )
    print((out / f"table_{cfg.species}.txt").read_text(), end="")
    print(f"diurnal RMSE {result.report.diurnal['rmse']:.4f} ug m-3; outputs in {out}")
    return EXIT_OK


def cmd_plots(args) -> int:
    from .evaluation import BiasMap, MetricsReport
    from .plots import plot_bias_map, plot_monthly

    reports = [MetricsReport.load(p) for p in args.reports]
    written = plot_monthly(reports, args.out)
    for p in args.bias or []:
        try:
            bm = BiasMap.from_netcdf(p)
        except (OSError, KeyError, IndexError) as exc:
            raise ConfigError(f"cannot parse bias map {p}: {exc}") from exc
        written.append(plot_bias_map(bm, Path(args.out) / (Path(p).stem + ".png")))
    for w in written:
        print(w)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser = argparse.ArgumentParser(prog="pmnowcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("-c", "--config", required=True, help="experiment YAML file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-path override, repeatable")
        return p

    with_config(sub.add_parser("synth", parents=[common], help="generate a synthetic archive")).set_defaults(func=cmd_synth)
    p = with_config(sub.add_parser("stats", parents=[common], help="compute normalization maxima"))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_stats)
    p = with_config(sub.add_parser("train", parents=[common], help="train one species model"))
    p.add_argument("--resume", action="store_true", help="continue from last_state.pt")
    p.add_argument("--stop-after-epoch", type=int, help="end this invocation after the given epoch index")
    p.set_defaults(func=cmd_train)
    p = with_config(sub.add_parser("evaluate", parents=[common], help="evaluate on the test split"))
    p.add_argument("--checkpoint")
    p.add_argument("--identity", action="store_true", help="predict the target (pipeline self-test)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("plots", parents=[common], help="render monthly charts and bias maps")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--bias", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plots)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PMNowcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
