"""``mltr`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .errors import ConfigError, DataError, NumericError
from .experiment import (
    ARMS,
    _Cells,
    load_corpus,
    model_kind,
    run_experiment,
    run_sparsity_sweep,
    write_experiment,
    write_table,
)
from .letor_io import read_dataset
from .meta import fine_tune, training_state
from .metrics import evaluate_model
from .ranker import RankerSpec, load_params, save_params

log = logging.getLogger("mltr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _load_config(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = config_mod.load(args.config)
    over = {}
    if args.seed is not None:
        over["seeds"] = (args.seed,)
    if args.arms:
        arms = tuple(a.strip() for a in args.arms.split(",") if a.strip())
        bad = [a for a in arms if a not in ARMS]
        if bad or not arms:
            raise ConfigError(f"--arms: unknown arm(s) {bad}; expected a subset of {list(ARMS)}")
        over["arms"] = arms
    if args.out:
        over["out_dir"] = args.out
    return cfg.with_(**over) if over else cfg


def cmd_train(args):
    cfg = _load_config(args)
    cells = _Cells(cfg, load_corpus(cfg))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinds = []
    for arm in ARMS:
        if arm in cfg.arms:
            kind = model_kind(arm)
            if kind not in kinds:
                kinds.append(kind)
    for seed in cfg.seeds:
        for kind in kinds:
            theta, history, _ = cells.model(kind, seed, cfg.train_profile, cfg.tuning_profile)
            stem = out / f"{kind}_{cfg.train_profile}_seed{seed}"
            spec = RankerSpec(theta.dims, bias=theta.bias)
            save_params(theta, stem.with_suffix(".ckpt"), seed=seed, spec_tag=spec.tag)
            mcfg = cells.train_config(seed, cfg.train_profile, cfg.tuning_profile)
            stem.with_suffix(".state.json").write_text(json.dumps(training_state(history, mcfg), indent=2))
            write_table(
                [{"epoch": r.epoch, "query_loss": r.query_loss, "meta_loss": r.meta_loss,
                  "val_ndcg": r.val_ndcg, "used": r.used, "skipped": r.skipped} for r in history.records],
                Path(str(stem) + "_history"), ("csv",),
            )
            print(f"{kind} seed={seed}: best epoch {history.best_epoch}, val NDCG@{mcfg.val_k} "
                  f"{history.best_val_ndcg} -> {stem.with_suffix('.ckpt')}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _load_config(args)
    if args.checkpoint:
        theta, header = load_params(args.checkpoint)
        cells = _Cells(cfg, load_corpus(cfg))
        seed = cfg.seeds[0]
        _, _, test = cells.split(seed)
        ft = cells.finetune_sets(seed, cfg.tuning_profile)
        epochs = cfg.finetune_epochs if args.finetune_epochs is None else args.finetune_epochs
        tuned = fine_tune(theta, test, ft.tuning, epochs, cfg.tune_lr, cfg.meta.loss, mode=cfg.finetune_mode)
        m = evaluate_model(tuned, test, ft.eval, ks=(1, 5, 10))
        print(json.dumps({"checkpoint": str(args.checkpoint), "seed": seed, "finetune_epochs": epochs,
                          "ndcg": {str(k): v for k, v in m.aggregate.items()},
                          "evaluated": len(m.per_query), "skipped": m.skipped + len(ft.skipped_ids)}))
        return EXIT_OK
    result = run_experiment(cfg)
    paths = write_experiment(result, cfg.out_dir, cfg.formats)
    _print_rows(result.rows)
    for s in result.significance:
        print(f"{s.arm} vs {s.baseline_arm} [{s.train_profile}/{s.tuning_profile}]: "
              f"mean diff {s.mean_diff:+.4f}, t={s.t_statistic:.3f}, p={s.p_value:.3g}, n={s.n_pairs}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    result = run_sparsity_sweep(cfg)
    paths = write_experiment(result, cfg.out_dir, cfg.formats)
    _print_rows(result.rows)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_inspect(args):
    if args.paths:
        ds = read_dataset(args.paths, args.expected_dims)
    else:
        cfg = _load_config(args)
        ds = read_dataset(list(cfg.data_paths), cfg.expected_dims, cfg.data_name)
    st = ds.stats()
    if args.json:
        print(json.dumps(st))
    else:
        print(f"{'dataset':<12}{'queries':>9}{'items':>10}{'pairs':>10}{'positives':>11}{'features':>10}  ratings")
        print(f"{st['name'][:11]:<12}{st['queries']:>9,}{st['items']:>10,}{st['query_item_pairs']:>10,}"
              f"{st['positives_pct']:>10.2f}%{st['features']:>10}  {st['min_rating']}~{st['max_rating']}")
    return EXIT_OK


def _print_rows(rows):
    print(f"{'arm':<18}{'train':>8}{'tune':>8}{'seed':>6}{'NDCG@1':>9}{'NDCG@5':>9}{'NDCG@10':>9}{'skip':>6}")
    for r in rows:
        print(f"{r.arm:<18}{r.train_profile:>8}{r.tuning_profile:>8}{r.seed:>6}"
              f"{r.ndcg1:>9.4f}{r.ndcg5:>9.4f}{r.ndcg10:>9.4f}{r.skipped:>6}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (TOML)")
    common.add_argument("--out", help="output directory (overrides [experiment] out)")
    common.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    common.add_argument("--arms", help="comma-separated arms, e.g. LTR,MLTR_finetune")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="mltr", description="Meta learning to rank experiments on LETOR data")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the configured arms and save checkpoints")
    ev = sub.add_parser("evaluate", parents=[common], help="train, fine-tune and evaluate; write reports")
    ev.add_argument("--checkpoint", help="evaluate a saved model on the test split instead of training")
    ev.add_argument("--finetune-epochs", type=int, help="with --checkpoint: override fine-tune epochs")
    sub.add_parser("sweep", parents=[common], help="sparsity-profile grid with relative improvements")
    ins = sub.add_parser("inspect-data", parents=[common], help="corpus statistics")
    ins.add_argument("paths", nargs="*", help="LETOR files or corpus directories (default: config data)")
    ins.add_argument("--expected-dims", type=int)
    ins.add_argument("--json", action="store_true")
    return p


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "inspect-data": cmd_inspect}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
