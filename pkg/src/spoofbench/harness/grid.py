"""Grid expansion and the resumable train/evaluate loop over it."""
from __future__ import annotations

import logging
import multiprocessing as mp
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from ..dataio import AudioCache
from ..errors import EmptyGrid
from ..features import FeatureCache, FeatureConfig, LengthPolicy
from ..metrics import EvalResult, compute_eer, compute_tdcf, label_scores, read_asv_scores, \
    read_cm_scores, write_cm_scores
from ..models import ModelConfig, compatible
from ..training import evaluate, load_checkpoint, save_checkpoint, train
from .config import ExperimentSpec, RunConfig
from .store import ResultsStore, RunKey, RunRecord, now, revision

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridCell:
    model: str
    feature: str
    length: str

    @property
    def tag(self) -> str:
        return f"{self.model}__{self.feature}__{self.length}"


def expand_grid(spec: ExperimentSpec) -> list[GridCell]:
    """Compatible (model, feature, length) combinations in declaration order."""
    cells = []
    for model in spec.models:
        for feature in spec.features:
            if not compatible(model, feature):
                log.info("skipping incompatible pair %s x %s", model, feature)
                continue
            cells.extend(GridCell(model, feature, length) for length in spec.lengths)
    if not cells:
        raise EmptyGrid("experiment expands to no compatible configuration")
    return cells


@dataclass
class GridSummary:
    done: int = 0
    failed: int = 0
    skipped: int = 0


@dataclass
class _Paths:
    out: Path

    def checkpoint(self, cell: GridCell, seed: int) -> Path:
        return self.out / "checkpoints" / f"{cell.tag}__s{seed}.pt"

    def scores(self, cell: GridCell, seed: int, eval_name: str) -> Path:
        return self.out / "scores" / f"{cell.tag}__s{seed}__{eval_name}.txt"

    def train_log(self, cell: GridCell, seed: int) -> Path:
        return self.out / "logs" / f"{cell.tag}__s{seed}.jsonl"

    @property
    def features(self) -> Path:
        return self.out / "features"


def score_eval_result(score_path, manifest, asv_path=None) -> EvalResult:
    """EER (and t-DCF when ASV scores exist) recomputed from a score file."""
    labels = {e.utt_id: e.label for e in manifest.entries}
    records = label_scores(read_cm_scores(score_path), labels)
    eer, thr = compute_eer(records)
    tdcf = compute_tdcf(records, read_asv_scores(asv_path)) if asv_path else None
    return EvalResult(eer, thr, tdcf)


def run_job(cfg: RunConfig, cell: GridCell, seed: int, eval_names: list[str], out_dir: str):
    """Train (or reuse a stored checkpoint) and evaluate one cell for one seed.

    Returns RunRecords instead of writing them so the caller owns all store writes.
    """
    paths = _Paths(Path(out_dir))
    started = now()
    ckpt_path = paths.checkpoint(cell, seed)
    base = dict(config_hash=cfg.config_hash, revision=revision(), started_at=started)
    try:
        loader = AudioCache()
        fcache = FeatureCache(paths.features)
        feat_cfg = FeatureConfig(kind=cell.feature)
        policy = LengthPolicy(mode=cell.length, rng_seed=seed)
        if ckpt_path.is_file():
            ckpt = load_checkpoint(ckpt_path)
        else:
            train_manifests = cfg.manifests_for_splits(cfg.experiment.train_splits)
            dev = cfg.datasets[cfg.experiment.dev_dataset].load()
            tcfg = replace(cfg.training, seed=seed)
            ckpt, _ = train(ModelConfig(cell.model, init_seed=seed), feat_cfg, policy,
                            train_manifests, dev, tcfg, loader=loader, feature_cache=fcache,
                            log_path=paths.train_log(cell, seed))
            save_checkpoint(ckpt_path, ckpt)
    except Exception as exc:  # noqa: BLE001 - recorded, grid continues
        log.error("%s seed %d failed: %s", cell.tag, seed, exc)
        return [RunRecord(RunKey(cell.model, cell.feature, cell.length, seed, name), "failed",
                          error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}",
                          finished_at=now(), **base) for name in eval_names]
    records = []
    for name in eval_names:
        key = RunKey(cell.model, cell.feature, cell.length, seed, name)
        try:
            ds = cfg.datasets[name]
            manifest = ds.load()
            scores = evaluate(ckpt, manifest, loader=loader, feature_cache=fcache)
            score_path = paths.scores(cell, seed, name)
            write_cm_scores(score_path, ((r.utt_id, r.score) for r in scores))
            asv = ds.asv_scores if manifest.split != "itw" else None
            result = score_eval_result(score_path, manifest, asv)
            records.append(RunRecord(key, "done", result, str(score_path), str(ckpt_path),
                                     finished_at=now(), **base))
        except Exception as exc:  # noqa: BLE001
            log.error("%s seed %d eval %s failed: %s", cell.tag, seed, name, exc)
            records.append(RunRecord(key, "failed", error=f"{type(exc).__name__}: {exc}",
                                     checkpoint_path=str(ckpt_path), finished_at=now(), **base))
    return records


def run_grid(cfg: RunConfig, out_dir: str | Path, *, jobs: int = 1,
             store: ResultsStore | None = None) -> tuple[ResultsStore, GridSummary]:
    """Run every missing (cell, seed, eval manifest) key; completed keys are skipped."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = store or ResultsStore(out / "results.sqlite")
    done = store.completed_keys()
    summary = GridSummary()
    pending = []
    for cell in expand_grid(cfg.experiment):
        for seed in cfg.experiment.seeds:
            missing = [n for n in cfg.experiment.eval_datasets
                       if RunKey(cell.model, cell.feature, cell.length, seed, n) not in done]
            summary.skipped += len(cfg.experiment.eval_datasets) - len(missing)
            if missing:
                pending.append((cell, seed, missing))

    def collect(records):
        for r in records:
            store.put(r)
            if r.status == "done":
                summary.done += 1
            else:
                summary.failed += 1

    if jobs <= 1:
        for cell, seed, missing in pending:
            log.info("running %s seed %d", cell.tag, seed)
            collect(run_job(cfg, cell, seed, missing, str(out)))
    else:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            futures = [pool.submit(run_job, cfg, cell, seed, missing, str(out))
                       for cell, seed, missing in pending]
            for fut in futures:
                collect(fut.result())
    return store, summary
