"""Audio decoding, dataset manifests, corpus statistics and a synthetic corpus.

Two manifest formats are supported:

* ASVspoof 2019 CM protocol files: five whitespace separated columns
  ``speaker utt_id - attack_or_dash key``.
* In-the-wild metadata: comma separated with header ``file,speaker,label``.
"""
from __future__ import annotations

import csv
import io
import math
import os
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import soundfile as sf
from scipy import signal

from . import SAMPLE_RATE
from .errors import (
    DuplicateUttId,
    EmptyManifest,
    MalformedLine,
    MissingAudio,
    MissingColumn,
    MissingDuration,
    MissingFile,
    UndecodableAudio,
    UnknownKey,
    UnknownLabel,
    UnwritableDirectory,
    ZeroLengthAudio,
)

DATA_ROOT_ENV = "SPOOFBENCH_DATA_ROOT"
SPLITS = ("train", "dev", "eval", "itw")
ACCEPTED_CONTAINERS = {"WAV", "WAVEX", "FLAC"}
ATTACK_IDS = tuple(f"A{i:02d}" for i in range(1, 20))

_LA_SPLIT_PREFIX = {"LA_T_": "train", "LA_D_": "dev", "LA_E_": "eval"}
_ITW_LABELS = {"bona-fide": "bonafide", "spoof": "spoof"}
_ITW_LABELS_OUT = {v: k for k, v in _ITW_LABELS.items()}


def default_data_root() -> Path | None:
    root = os.environ.get(DATA_ROOT_ENV)
    return Path(root) if root else None


@dataclass
class AudioClip:
    utt_id: str
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker_id: str
    attack_id: str | None
    label: str
    path: Path
    split: str

    def __post_init__(self):
        if self.label not in ("bonafide", "spoof"):
            raise UnknownLabel(self.label)
        if self.label == "bonafide" and self.attack_id is not None:
            raise ValueError(f"{self.utt_id}: bonafide entries carry no attack id")
        if self.split not in SPLITS:
            raise ValueError(f"{self.utt_id}: unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    name: str
    entries: list[ManifestEntry]

    def __post_init__(self):
        if not self.entries:
            raise EmptyManifest(f"manifest {self.name!r} has no entries")
        splits = {e.split for e in self.entries}
        if len(splits) != 1:
            raise ValueError(f"manifest {self.name!r} mixes splits {sorted(splits)}")
        seen: set[str] = set()
        for e in self.entries:
            if e.utt_id in seen:
                raise DuplicateUttId(e.utt_id)
            seen.add(e.utt_id)

    @property
    def split(self) -> str:
        return self.entries[0].split

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def labels(self) -> list[str]:
        return [e.label for e in self.entries]


@dataclass
class CorpusStats:
    n_speakers: int
    hours_bonafide: float
    hours_spoof: float
    n_bonafide: int
    n_spoof: int
    mean_clip_seconds: float
    per_attack: dict[str, int] = field(default_factory=dict)

    @property
    def hours_total(self) -> float:
        return self.hours_bonafide + self.hours_spoof


# ---------------------------------------------------------------------------
# audio
# ---------------------------------------------------------------------------

def load_audio(path: str | os.PathLike, target_rate: int = SAMPLE_RATE,
               utt_id: str | None = None) -> AudioClip:
    """Decode a WAV/FLAC file to a mono float32 clip at ``target_rate``.

    Channels are averaged; rate conversion uses a polyphase anti-aliasing
    filter. Amplitudes are clipped to [-1, 1] after resampling (overshoot of
    the band-limited interpolator).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        info = sf.info(str(path))
        if info.format not in ACCEPTED_CONTAINERS:
            raise UndecodableAudio(f"{path}: unsupported container {info.format}")
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except UndecodableAudio:
        raise
    except (RuntimeError, sf.LibsndfileError) as exc:
        raise UndecodableAudio(f"{path}: {exc}") from exc
    if data.shape[0] == 0:
        raise ZeroLengthAudio(str(path))
    mono = data.mean(axis=1)
    if rate != target_rate:
        g = math.gcd(int(rate), int(target_rate))
        mono = signal.resample_poly(mono, target_rate // g, rate // g)
        if len(mono) == 0:
            raise ZeroLengthAudio(str(path))
    mono = np.clip(mono, -1.0, 1.0).astype(np.float32)
    return AudioClip(utt_id if utt_id is not None else path.stem, mono, target_rate)


def probe_duration(path: str | os.PathLike) -> float:
    """Duration in seconds from the file header (no decoding)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    info = sf.info(str(path))
    return info.frames / info.samplerate


class AudioCache:
    """In-process decode cache keyed by utt_id; safe for concurrent use."""

    def __init__(self, target_rate: int = SAMPLE_RATE):
        self.target_rate = target_rate
        self._clips: dict[str, AudioClip] = {}
        self._lock = threading.Lock()

    def get(self, entry: ManifestEntry) -> AudioClip:
        with self._lock:
            clip = self._clips.get(entry.utt_id)
        if clip is not None:
            return clip
        clip = load_entry(entry, self.target_rate)
        with self._lock:
            return self._clips.setdefault(entry.utt_id, clip)

    def __len__(self) -> int:
        return len(self._clips)


def load_entry(entry: ManifestEntry, target_rate: int = SAMPLE_RATE) -> AudioClip:
    try:
        return load_audio(entry.path, target_rate, utt_id=entry.utt_id)
    except MissingFile as exc:
        raise MissingAudio(entry.utt_id) from exc


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _infer_split(utt_id: str) -> str | None:
    for prefix, split in _LA_SPLIT_PREFIX.items():
        if utt_id.startswith(prefix):
            return split
    return None


def parse_asvspoof_protocol(text: str, audio_root: str | os.PathLike, *,
                            extension: str = ".flac", split: str | None = None,
                            name: str = "asvspoof") -> DatasetManifest:
    """Parse an ASVspoof 2019 LA countermeasure protocol.

    The split is taken from ``split`` when given, otherwise inferred from the
    ``LA_T_``/``LA_D_``/``LA_E_`` utterance prefix.
    """
    root = Path(audio_root)
    entries = []
    seen: set[str] = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 5:
            raise MalformedLine(line_no, line, f"expected 5 fields, got {len(fields)}")
        speaker, utt_id, _, attack, key = fields
        if key == "bonafide":
            attack_id = None
        elif key == "spoof":
            if attack == "-":
                raise MalformedLine(line_no, line, "spoof entry without attack id")
            attack_id = attack
        else:
            raise UnknownKey(f"line {line_no}: {key!r}")
        entry_split = split or _infer_split(utt_id)
        if entry_split is None:
            raise MalformedLine(line_no, line, "cannot infer split from utterance id")
        if utt_id in seen:
            raise DuplicateUttId(utt_id)
        seen.add(utt_id)
        entries.append(ManifestEntry(utt_id, speaker, attack_id, key,
                                     root / f"{utt_id}{extension}", entry_split))
    return DatasetManifest(name, entries)


def format_asvspoof_protocol(manifest: DatasetManifest) -> str:
    lines = [f"{e.speaker_id} {e.utt_id} - {e.attack_id or '-'} {e.label}"
             for e in manifest.entries]
    return "\n".join(lines) + "\n"


def parse_itw_manifest(text: str, audio_root: str | os.PathLike, *,
                       name: str = "in_the_wild") -> DatasetManifest:
    """Parse the in-the-wild ``file,speaker,label`` metadata table."""
    root = Path(audio_root)
    reader = csv.DictReader(io.StringIO(text))
    columns = set(reader.fieldnames or [])
    for col in ("file", "speaker", "label"):
        if col not in columns:
            raise MissingColumn(col)
    entries = []
    seen: set[str] = set()
    for row in reader:
        raw_label = row["label"].strip()
        if raw_label not in _ITW_LABELS:
            raise UnknownLabel(raw_label)
        utt_id = row["file"].strip()
        if utt_id in seen:
            raise DuplicateUttId(utt_id)
        seen.add(utt_id)
        entries.append(ManifestEntry(utt_id, row["speaker"].strip(), None,
                                     _ITW_LABELS[raw_label], root / utt_id, "itw"))
    return DatasetManifest(name, entries)


def format_itw_manifest(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file", "speaker", "label"])
    for e in manifest.entries:
        writer.writerow([e.utt_id, e.speaker_id, _ITW_LABELS_OUT[e.label]])
    return buf.getvalue()


def read_manifest(fmt: str, path: str | os.PathLike, audio_root: str | os.PathLike, *,
                  name: str | None = None, extension: str = ".flac",
                  split: str | None = None) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    text = path.read_text(encoding="utf-8")
    if fmt == "asvspoof":
        return parse_asvspoof_protocol(text, audio_root, extension=extension,
                                       split=split, name=name or path.stem)
    if fmt == "itw":
        return parse_itw_manifest(text, audio_root, name=name or path.stem)
    raise ValueError(f"unknown manifest format {fmt!r}")


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def corpus_stats(manifest: DatasetManifest, durations: Mapping[str, float]) -> CorpusStats:
    seconds = {"bonafide": 0.0, "spoof": 0.0}
    counts = {"bonafide": 0, "spoof": 0}
    per_attack: dict[str, int] = defaultdict(int)
    for e in manifest.entries:
        if e.utt_id not in durations:
            raise MissingDuration(e.utt_id)
        seconds[e.label] += float(durations[e.utt_id])
        counts[e.label] += 1
        per_attack[e.attack_id or "-"] += 1
    n = counts["bonafide"] + counts["spoof"]
    return CorpusStats(
        n_speakers=len({e.speaker_id for e in manifest.entries}),
        hours_bonafide=seconds["bonafide"] / 3600.0,
        hours_spoof=seconds["spoof"] / 3600.0,
        n_bonafide=counts["bonafide"],
        n_spoof=counts["spoof"],
        mean_clip_seconds=(seconds["bonafide"] + seconds["spoof"]) / n,
        per_attack=dict(sorted(per_attack.items())),
    )


def speaker_stats(manifest: DatasetManifest,
                  durations: Mapping[str, float]) -> dict[str, CorpusStats]:
    by_speaker: dict[str, list[ManifestEntry]] = defaultdict(list)
    for e in manifest.entries:
        by_speaker[e.speaker_id].append(e)
    return {spk: corpus_stats(DatasetManifest(spk, ents), durations)
            for spk, ents in sorted(by_speaker.items())}


def manifest_durations(manifest: DatasetManifest) -> dict[str, float]:
    return {e.utt_id: probe_duration(e.path) for e in manifest.entries}


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_SPLIT_TAG = {"train": "T", "dev": "D", "eval": "E", "itw": "W"}
_SYNTH_ATTACKS = ("A01", "A02", "A03", "A04")


def _synth_bonafide(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    f0 = rng.uniform(90.0, 260.0)
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sr
    x = np.zeros(n)
    for k in range(1, int(3500.0 // f0) + 1):
        x += rng.uniform(0.6, 1.0) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    envelope = 1.0 - rng.uniform(0.3, 0.6) * (
        0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * t + rng.uniform(0, 2 * np.pi)))
    x *= envelope
    x += 1e-3 * rng.standard_normal(n)
    return x


def _synth_spoof(rng: np.random.Generator, n: int, sr: int, variant: int) -> np.ndarray:
    low = rng.uniform(1200.0, 2500.0)
    high = min(rng.uniform(5500.0, 7500.0), 0.49 * sr)
    sos = signal.butter(4 + variant % 2, [low, high], btype="bandpass", fs=sr, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n))
    # first-order difference tilts the spectrum upwards; strength per variant
    tilt = 0.3 + 0.2 * variant
    return x - tilt * np.concatenate([[0.0], x[:-1]])


def generate_synthetic_corpus(n_clips: int, balance: float, seed: int,
                              out_dir: str | os.PathLike, *, split: str = "train",
                              sample_rate: int = SAMPLE_RATE,
                              name: str | None = None) -> DatasetManifest:
    """Write a deterministic two-class corpus of 1-6 s 16-bit WAV clips.

    Bonafide clips are amplitude-modulated harmonic complexes; spoof clips are
    band-pass noise with an upward spectral tilt (four tilt variants, tagged
    A01-A04). Output bytes depend only on (n_clips, balance, seed, split).
    """
    if n_clips < 2:
        raise ValueError("n_clips must be at least 2")
    if not 0.0 < balance < 1.0:
        raise ValueError("balance must lie strictly between 0 and 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise UnwritableDirectory(str(out)) from exc

    n_bona = min(max(int(round(n_clips * balance)), 1), n_clips - 1)
    seed_seq = np.random.SeedSequence([int(seed), sum(map(ord, split))])
    order_rng = np.random.default_rng(seed_seq.spawn(1)[0])
    labels = np.array(["bonafide"] * n_bona + ["spoof"] * (n_clips - n_bona))
    order_rng.shuffle(labels)
    clip_seeds = seed_seq.spawn(n_clips + 1)[1:]

    entries = []
    tag = _SPLIT_TAG[split]
    for i, label in enumerate(labels):
        rng = np.random.default_rng(clip_seeds[i])
        n = int(rng.integers(1 * sample_rate, 6 * sample_rate + 1))
        if label == "bonafide":
            x, attack = _synth_bonafide(rng, n, sample_rate), None
        else:
            variant = int(rng.integers(len(_SYNTH_ATTACKS)))
            x, attack = _synth_spoof(rng, n, sample_rate, variant), _SYNTH_ATTACKS[variant]
        x = x / np.max(np.abs(x)) * rng.uniform(0.3, 0.8)
        utt_id = f"SYN_{tag}_{i:07d}"
        path = out / f"{utt_id}.wav"
        sf.write(str(path), x, sample_rate, subtype="PCM_16", format="WAV")
        entries.append(ManifestEntry(utt_id, f"SYN_{i % 10:04d}", attack, str(label),
                                     path, split))
    return DatasetManifest(name or f"synthetic_{split}", entries)


def spectral_centroid(samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> float:
    """Power-weighted mean frequency of the whole clip."""
    power = np.abs(np.fft.rfft(samples.astype(np.float64))) ** 2
    freqs = np.fft.rfftfreq(len(samples), 1.0 / sample_rate)
    return float(np.sum(freqs * power) / max(np.sum(power), 1e-30))


def concat_entries(manifests: Iterable[DatasetManifest]) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for m in manifests:
        for e in m.entries:
            if e.utt_id in seen:
                raise DuplicateUttId(e.utt_id)
            seen.add(e.utt_id)
            entries.append(e)
    if not entries:
        raise EmptyManifest("no entries in the given manifests")
    return entries
