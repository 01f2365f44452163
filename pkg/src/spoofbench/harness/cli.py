"""spoofbench command line: synth-data, extract, train, eval, grid, aggregate, report, stats."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..dataio import (
    AudioCache,
    corpus_stats,
    format_asvspoof_protocol,
    generate_synthetic_corpus,
    manifest_durations,
)
from ..errors import (
    DataMissing,
    EmptyGrid,
    EmptyStore,
    IncompatibleConfig,
    InvalidConfig,
    MissingAudio,
    MissingFile,
    SpoofBenchError,
    UnknownModelId,
)
from ..features import FeatureCache, FeatureConfig, LengthPolicy
from ..metrics import write_cm_scores
from ..models import ModelConfig
from ..training import evaluate, load_checkpoint, save_checkpoint, train
from .config import RunConfig, load_config
from .grid import GridCell, _Paths, expand_grid, run_grid, score_eval_result
from .report import report
from .store import ResultsStore

log = logging.getLogger("spoofbench")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_DATA = 0, 1, 2, 3
SYNTH_SPLITS = (("train", 0.6), ("dev", 0.2), ("eval", 0.2))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> RunConfig:
    if not args.config:
        raise UsageError("--config is required for this command")
    root = Path(args.data_root).resolve() if args.data_root else None
    cfg = load_config(args.config, root)
    if args.seed is not None:
        cfg.experiment.seeds = [args.seed]
    return cfg


def _check_data(cfg: RunConfig, names) -> None:
    for name in names:
        ds = cfg.datasets[name]
        ds.load()
        if not Path(ds.audio_root).is_dir():
            raise DataMissing(f"dataset {name}: audio directory {ds.audio_root} not found")


def _needed_datasets(cfg: RunConfig) -> list[str]:
    exp = cfg.experiment
    train = [n for n, d in cfg.datasets.items()
             if d.format == "asvspoof" and (d.split or n) in exp.train_splits]
    return list(dict.fromkeys([*train, exp.dev_dataset, *exp.eval_datasets]))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    out = Path(args.out)
    total = args.n_clips
    counts = [int(round(total * frac)) for _, frac in SYNTH_SPLITS]
    counts[0] += total - sum(counts)
    (out / "protocols").mkdir(parents=True, exist_ok=True)
    for (split, _), n in zip(SYNTH_SPLITS, counts):
        manifest = generate_synthetic_corpus(n, args.balance, args.seed, out / "audio" / split,
                                             split=split, name=f"synthetic_{split}")
        (out / "protocols" / f"{split}.txt").write_text(format_asvspoof_protocol(manifest))
        log.info("wrote %d %s clips", n, split)
    print(f"synthetic corpus: {dict(zip([s for s, _ in SYNTH_SPLITS], counts))} clips in {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _config(args)
    names = _needed_datasets(cfg)
    _check_data(cfg, names)
    fcache = FeatureCache(_Paths(Path(args.out)).features)
    loader = AudioCache()
    n = 0
    for name in names:
        manifest = cfg.datasets[name].load()
        for feature in cfg.experiment.features:
            for length in cfg.experiment.lengths:
                for seed in cfg.experiment.seeds:
                    feat_cfg = FeatureConfig(kind=feature)
                    policy = LengthPolicy(length, rng_seed=seed)
                    for entry in manifest.entries:
                        fcache.get_or_compute(loader.get(entry), feat_cfg, policy)
                        n += 1
    print(f"cached {n} feature matrices under {fcache.root}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if not (args.model and args.feature):
        raise UsageError("train needs --model and --feature")
    _check_data(cfg, _needed_datasets(cfg))
    seed = cfg.experiment.seeds[0]
    cell = GridCell(args.model, args.feature, args.length)
    paths = _Paths(Path(args.out))
    ckpt, history = train(ModelConfig(cell.model, init_seed=seed), FeatureConfig(kind=cell.feature),
                          LengthPolicy(cell.length, rng_seed=seed),
                          cfg.manifests_for_splits(cfg.experiment.train_splits),
                          cfg.datasets[cfg.experiment.dev_dataset].load(),
                          replace(cfg.training, seed=seed),
                          feature_cache=FeatureCache(paths.features),
                          log_path=paths.train_log(cell, seed))
    path = paths.checkpoint(cell, seed)
    save_checkpoint(path, ckpt)
    print(f"best epoch {history.best_epoch} of {history.stopped_epoch}, "
          f"dev loss {ckpt.best_dev_loss:.4f}; checkpoint {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    if not (args.checkpoint and args.dataset):
        raise UsageError("eval needs --checkpoint and --dataset")
    if args.dataset not in cfg.datasets:
        raise UsageError(f"unknown dataset {args.dataset!r}")
    _check_data(cfg, [args.dataset])
    ds = cfg.datasets[args.dataset]
    manifest = ds.load()
    ckpt = load_checkpoint(args.checkpoint)
    scores = evaluate(ckpt, manifest, global_seed=args.seed,
                      feature_cache=FeatureCache(_Paths(Path(args.out)).features))
    path = Path(args.out) / "scores" / f"{Path(args.checkpoint).stem}__{args.dataset}.txt"
    write_cm_scores(path, ((r.utt_id, r.score) for r in scores))
    res = score_eval_result(path, manifest, ds.asv_scores if manifest.split != "itw" else None)
    line = f"EER {100 * res.eer:.3f}%"
    if res.min_tdcf is not None:
        line += f"  min t-DCF {res.min_tdcf:.4f}"
    print(f"{line}  ({len(scores)} utterances, scores in {path})")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _config(args)
    cells = expand_grid(cfg.experiment)
    _check_data(cfg, _needed_datasets(cfg))
    out = Path(args.out)
    (out / "config.yaml").parent.mkdir(parents=True, exist_ok=True)
    if args.config:
        (out / "config.yaml").write_text(Path(args.config).read_text())
    store, summary = run_grid(cfg, out, jobs=args.jobs)
    print(f"{len(cells)} configurations x {len(cfg.experiment.seeds)} seeds: "
          f"{summary.done} done, {summary.failed} failed, {summary.skipped} already complete")
    failed = store.failures()
    store.close()
    return EXIT_PARTIAL if failed else EXIT_OK


def _open_store(args) -> ResultsStore:
    path = Path(args.out) / "results.sqlite"
    if not path.is_file():
        raise EmptyStore(f"no results store at {path}")
    return ResultsStore(path)


def cmd_aggregate(args) -> int:
    with _open_store(args) as store:
        names = store.eval_manifests()
        if not names:
            raise EmptyStore("results store holds no completed records")
        out = Path(args.out) / "aggregate.csv"
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eval", "model", "feature", "length", "eer_mean", "eer_std",
                        "tdcf_mean", "tdcf_std", "n_runs"])
            for name in names:
                for r in store.aggregate(name):
                    w.writerow([name, r.model, r.feature, r.length, r.eer_mean, r.eer_std,
                                r.tdcf_mean, r.tdcf_std, r.n_runs])
    print(out.read_text(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    with _open_store(args) as store:
        text = report(store, args.format)
    suffix = "md" if args.format == "markdown" else "csv"
    (Path(args.out) / f"report.{suffix}").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _config(args)
    names = [args.dataset] if args.dataset else list(cfg.datasets)
    for name in names:
        if name not in cfg.datasets:
            raise UsageError(f"unknown dataset {name!r}")
        manifest = cfg.datasets[name].load()
        s = corpus_stats(manifest, manifest_durations(manifest))
        print(f"{name}: {s.n_bonafide} bonafide / {s.n_spoof} spoof utterances, "
              f"{s.hours_bonafide:.2f} h / {s.hours_spoof:.2f} h, {s.n_speakers} speakers")
        for attack, n in sorted(s.per_attack.items()):
            print(f"  {attack}: {n}")
    return EXIT_OK


COMMANDS = {
    "synth-data": cmd_synth_data,
    "extract": cmd_extract,
    "train": cmd_train,
    "eval": cmd_eval,
    "grid": cmd_grid,
    "aggregate": cmd_aggregate,
    "report": cmd_report,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--data-root", help="overrides data_root and $SPOOFBENCH_DATA_ROOT")
    common.add_argument("--jobs", type=int, default=1, help="parallel grid jobs")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default="runs/default", help="output directory")
    common.add_argument("--log-level", default="INFO")

    parser = _Parser(prog="spoofbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("synth-data", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--n-clips", type=int, default=200)
    p.add_argument("--balance", type=float, default=0.5)
    sub.add_parser("extract", parents=[common], help="pre-cache evaluation features")
    p = sub.add_parser("train", parents=[common], help="train one configuration")
    p.add_argument("--model")
    p.add_argument("--feature")
    p.add_argument("--length", default="fixed4s", choices=["fixed4s", "full"])
    p = sub.add_parser("eval", parents=[common], help="score a dataset with a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    sub.add_parser("grid", parents=[common], help="run the experiment grid (resumable)")
    sub.add_parser("aggregate", parents=[common], help="mean/std over seeds as CSV")
    p = sub.add_parser("report", parents=[common], help="render the result tables")
    p.add_argument("--format", default="markdown", choices=["markdown", "csv"])
    p = sub.add_parser("stats", parents=[common], help="corpus statistics")
    p.add_argument("--dataset")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.command == "synth-data":
        args.seed = 0
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataMissing, MissingFile, MissingAudio) as exc:
        print(f"data missing: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvalidConfig, IncompatibleConfig, UnknownModelId, EmptyGrid, EmptyStore) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpoofBenchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
