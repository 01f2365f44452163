"""Training protocol, batching, checkpoints and evaluation scoring."""
from __future__ import annotations

import copy
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .dataio import AudioCache, DatasetManifest, ManifestEntry, concat_entries
from .errors import (
    EmptyManifest,
    IncompatibleConfig,
    NonFiniteLoss,
    SchemaMismatch,
    SingleClassInput,
)
from .features import (
    FeatureCache,
    FeatureConfig,
    LengthPolicy,
    apply_length_policy,
    extract,
    frame_count,
    repeat_to,
    utterance_rng,
)
from .metrics import ScoreRecord, eer_from_arrays
from .models import BONAFIDE, SPOOF, Batch, ModelConfig, build, compatible, forward, score

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    max_epochs: int = 100
    patience: int = 5
    batch_size: int = 32
    seed: int = 0
    scheduler: str = "plateau_halving"
    scheduler_patience: int = 2
    lr_floor: float = 1e-6
    train_splits: tuple[str, ...] = ("train", "dev")
    monitor: str = "dev_loss"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise IncompatibleConfig("learning_rate must be positive")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise IncompatibleConfig("patience, max_epochs and batch_size must be >= 1")
        if self.scheduler not in ("plateau_halving", "step_halving", "none"):
            raise IncompatibleConfig(f"unknown scheduler {self.scheduler!r}")
        if self.monitor not in ("dev_loss", "dev_eer"):
            raise IncompatibleConfig(f"unknown monitor {self.monitor!r}")
        self.train_splits = tuple(self.train_splits)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_eer: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0


@dataclass
class Checkpoint:
    model_config: ModelConfig
    feature_config: FeatureConfig
    length_policy: LengthPolicy
    state_dict: dict[str, torch.Tensor]
    best_dev_loss: float
    best_epoch: int = 0
    schema_version: int = CHECKPOINT_SCHEMA

    def model(self):
        model = build(self.model_config)
        model.load_state_dict(self.state_dict)
        return model.eval()


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a new best value."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, value: float) -> bool:
        self.epoch += 1
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, self.epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0


class PlateauHalving:
    """Halve the learning rate after ``patience`` non-improving epochs, never below ``floor``."""

    def __init__(self, lr: float, patience: int = 2, factor: float = 0.5, floor: float = 1e-6):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.floor = floor
        self.best = math.inf
        self.bad_epochs = 0

    def update(self, value: float) -> float:
        if value < self.best:
            self.best, self.bad_epochs = value, 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.floor)
                self.bad_epochs = 0
        return self.lr


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of log-softmax outputs."""
    return F.nll_loss(F.log_softmax(logits, dim=-1), labels)


def label_index(label: str) -> int:
    return BONAFIDE if label == "bonafide" else SPOOF


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _input_length(n_samples: int, feat_cfg: FeatureConfig, policy: LengthPolicy) -> int:
    n = max(n_samples, policy.target_samples)
    if policy.mode == "fixed4s":
        n = policy.target_samples
    return n if feat_cfg.is_raw else frame_count(n, feat_cfg.hop)


def pad_frames(values: np.ndarray, n_frames: int) -> np.ndarray:
    """Cyclically repeat the frame axis up to ``n_frames``."""
    if values.shape[1] == n_frames:
        return values
    idx = repeat_to(np.arange(values.shape[1]), n_frames)
    return values[:, idx]


def item_features(entry: ManifestEntry, feat_cfg: FeatureConfig, policy: LengthPolicy,
                  loader: AudioCache, *, rng: np.random.Generator | None = None,
                  feature_cache: FeatureCache | None = None) -> np.ndarray:
    clip = loader.get(entry)
    if rng is None and feature_cache is not None:
        return feature_cache.get_or_compute(clip, feat_cfg, policy).values
    if rng is None:
        rng = utterance_rng(policy.rng_seed, entry.utt_id)
    return extract(apply_length_policy(clip, policy, rng), feat_cfg).values


def make_batch(entries: Sequence[ManifestEntry], arrays: Sequence[np.ndarray]) -> Batch:
    width = max(a.shape[1] for a in arrays)
    inputs = np.stack([pad_frames(a, width) for a in arrays]).astype(np.float32)
    labels = np.array([label_index(e.label) for e in entries], dtype=np.int64)
    return Batch([e.utt_id for e in entries], inputs, [a.shape[1] for a in arrays], labels)


def batch_order(lengths: Sequence[int], batch_size: int, seed: int, epoch: int,
                *, bucket: bool, shuffle: bool = True) -> list[list[int]]:
    """Index groups for one epoch; bucketed groups hold items of similar length."""
    n = len(lengths)
    rng = np.random.default_rng([int(seed), int(epoch)])
    order = rng.permutation(n) if shuffle else np.arange(n)
    if bucket:
        order = order[np.argsort(np.asarray(lengths)[order], kind="stable")]
    groups = [order[i:i + batch_size].tolist() for i in range(0, n, batch_size)]
    if bucket and shuffle:
        groups = [groups[i] for i in rng.permutation(len(groups))]
    return groups


def batch_iterator(entries: Sequence[ManifestEntry] | DatasetManifest, feat_cfg: FeatureConfig,
                   policy: LengthPolicy, batch_size: int, seed: int, *, epoch: int = 0,
                   loader: AudioCache | None = None, train: bool = True,
                   feature_cache: FeatureCache | None = None) -> Iterator[Batch]:
    """Yield every entry exactly once per epoch.

    Training windows are drawn per (seed, epoch, utterance); evaluation uses
    the policy's per-utterance stream so scores are reproducible. In full
    mode items are bucketed by length and padded by cyclic repetition.
    """
    entries = list(entries)
    loader = loader or AudioCache()
    bucket = policy.mode == "full"
    lengths = ([_input_length(len(loader.get(e)), feat_cfg, policy) for e in entries]
               if bucket else [0] * len(entries))
    for group in batch_order(lengths, batch_size, seed, epoch, bucket=bucket, shuffle=train):
        chosen = [entries[i] for i in group]
        arrays = [item_features(e, feat_cfg, policy, loader,
                                rng=utterance_rng(seed, e.utt_id, epoch) if train else None,
                                feature_cache=feature_cache)
                  for e in chosen]
        yield make_batch(chosen, arrays)


# ---------------------------------------------------------------------------
# train / evaluate
# ---------------------------------------------------------------------------

def _as_entries(manifests) -> list[ManifestEntry]:
    if isinstance(manifests, DatasetManifest):
        return list(manifests.entries)
    return concat_entries(manifests)


def _check_compatible(model_cfg: ModelConfig, feat_cfg: FeatureConfig) -> None:
    if not compatible(model_cfg.model_id, feat_cfg.kind):
        raise IncompatibleConfig(f"{model_cfg.model_id} cannot consume {feat_cfg.kind} features")


def _score_entries(model, entries, feat_cfg, policy, loader, batch_size, feature_cache=None):
    """Eval-mode scores and mean loss; full-length items are scored one at a time."""
    model.eval()
    size = 1 if policy.mode == "full" else batch_size
    utts, scores, losses = [], [], []
    with torch.no_grad():
        for batch in batch_iterator(entries, feat_cfg, policy, size, 0, loader=loader,
                                    train=False, feature_cache=feature_cache):
            logits = forward(model, batch)
            losses.append(float(cross_entropy(logits, torch.from_numpy(batch.labels))) * len(batch))
            utts += batch.utt_ids
            scores.append(score(logits))
    return utts, np.concatenate(scores), sum(losses) / len(utts)


def _eer_or_nan(entries, utts, scores) -> float:
    labels = {e.utt_id: e.label for e in entries}
    y = np.array([labels[u] == "bonafide" for u in utts])
    if y.all() or not y.any():
        return float("nan")
    return eer_from_arrays(scores[y], scores[~y])[0]


def train(model_cfg: ModelConfig, feat_cfg: FeatureConfig, policy: LengthPolicy,
          train_manifest, dev_manifest, cfg: TrainConfig, *,
          loader: AudioCache | None = None, feature_cache: FeatureCache | None = None,
          log_path: str | os.PathLike | None = None) -> tuple[Checkpoint, TrainHistory]:
    """Adam on log-softmax cross-entropy with plateau halving and early stopping on dev loss."""
    _check_compatible(model_cfg, feat_cfg)
    train_entries = _as_entries(train_manifest)
    dev_entries = _as_entries(dev_manifest)
    if not train_entries or not dev_entries:
        raise EmptyManifest("training and dev manifests must be non-empty")
    loader = loader or AudioCache()
    model = build(model_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    scheduler = PlateauHalving(cfg.learning_rate, cfg.scheduler_patience, 0.5, cfg.lr_floor)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    log_file = None
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "a", encoding="utf-8")
    try:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            for epoch in range(1, cfg.max_epochs + 1):
                lr = optimizer.param_groups[0]["lr"]
                model.train()
                total, count = 0.0, 0
                for step, batch in enumerate(batch_iterator(
                        train_entries, feat_cfg, policy, cfg.batch_size, cfg.seed,
                        epoch=epoch, loader=loader, train=True)):
                    optimizer.zero_grad()
                    loss = cross_entropy(forward(model, batch), torch.from_numpy(batch.labels))
                    if not torch.isfinite(loss):
                        raise NonFiniteLoss(f"epoch {epoch} step {step}: loss {loss.item()} "
                                            f"on {batch.utt_ids[:4]}...")
                    loss.backward()
                    optimizer.step()
                    total += loss.item() * len(batch)
                    count += len(batch)
                utts, scores, dev_loss = _score_entries(model, dev_entries, feat_cfg, policy,
                                                        loader, cfg.batch_size, feature_cache)
                record = EpochRecord(epoch, total / count, dev_loss,
                                     _eer_or_nan(dev_entries, utts, scores), lr)
                history.epochs.append(record)
                if log_file:
                    log_file.write(json.dumps(asdict(record)) + "\n")
                    log_file.flush()
                log.info("epoch %d train %.4f dev %.4f eer %.4f lr %.2e", epoch,
                         record.train_loss, dev_loss, record.dev_eer, lr)
                watched = dev_loss if cfg.monitor == "dev_loss" else record.dev_eer
                watched = math.inf if math.isnan(watched) else watched
                stop = stopper.update(watched)
                if stopper.improved:
                    best_state = copy.deepcopy(model.state_dict())
                new_lr = lr
                if cfg.scheduler == "plateau_halving":
                    new_lr = scheduler.update(watched)
                elif cfg.scheduler == "step_halving" and epoch % cfg.scheduler_patience == 0:
                    new_lr = max(lr * 0.5, cfg.lr_floor)
                for group in optimizer.param_groups:
                    group["lr"] = new_lr
                if stop:
                    break
    finally:
        if log_file:
            log_file.close()
    history.stopped_epoch = len(history.epochs)
    history.best_epoch = stopper.best_epoch
    ckpt = Checkpoint(model_cfg, feat_cfg, policy, best_state, stopper.best, stopper.best_epoch)
    return ckpt, history


def evaluate(checkpoint: Checkpoint, manifest, *, global_seed: int | None = None,
             loader: AudioCache | None = None, feature_cache: FeatureCache | None = None,
             batch_size: int = 32) -> list[ScoreRecord]:
    """One score per manifest entry, in manifest order."""
    if checkpoint.schema_version != CHECKPOINT_SCHEMA:
        raise SchemaMismatch(f"checkpoint schema {checkpoint.schema_version}, "
                             f"expected {CHECKPOINT_SCHEMA}")
    entries = _as_entries(manifest)
    policy = checkpoint.length_policy
    if global_seed is not None:
        policy = LengthPolicy(policy.mode, policy.target_samples, global_seed)
    model = checkpoint.model()
    utts, scores, _ = _score_entries(model, entries, checkpoint.feature_config, policy,
                                     loader or AudioCache(), batch_size, feature_cache)
    by_utt = dict(zip(utts, scores))
    return [ScoreRecord(e.utt_id, float(by_utt[e.utt_id]), e.label) for e in entries]


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": ckpt.schema_version,
        "model_config": asdict(ckpt.model_config),
        "feature_config": asdict(ckpt.feature_config),
        "length_policy": asdict(ckpt.length_policy),
        "state_dict": ckpt.state_dict,
        "best_dev_loss": ckpt.best_dev_loss,
        "best_epoch": ckpt.best_epoch,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("schema_version")
    if version != CHECKPOINT_SCHEMA:
        raise SchemaMismatch(f"{path}: checkpoint schema {version}, expected {CHECKPOINT_SCHEMA}")
    return Checkpoint(
        ModelConfig(**payload["model_config"]),
        FeatureConfig(**payload["feature_config"]),
        LengthPolicy(**payload["length_policy"]),
        payload["state_dict"],
        payload["best_dev_loss"],
        payload["best_epoch"],
        version,
    )
