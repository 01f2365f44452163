"""Input-length policies and spectral front ends (cqtspec, logspec, melspec, raw)."""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

from . import SAMPLE_RATE
from .dataio import AudioClip
from .errors import ClipTooShort, InvalidConfig

FOUR_SECONDS = 4 * SAMPLE_RATE
LENGTH_MODES = ("fixed4s", "full")
FEATURE_KINDS = ("cqtspec", "logspec", "melspec", "raw")
SPECTRAL_KINDS = ("cqtspec", "logspec", "melspec")


@dataclass(frozen=True)
class LengthPolicy:
    mode: str = "fixed4s"
    target_samples: int = FOUR_SECONDS
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in LENGTH_MODES:
            raise InvalidConfig(f"unknown length mode {self.mode!r}")
        if self.target_samples <= 0:
            raise InvalidConfig("target_samples must be positive")


@dataclass(frozen=True)
class FeatureConfig:
    kind: str = "logspec"
    n_bins: int = 513
    fft_size: int = 1024
    hop: int = 256
    window: str = "hann"
    cqt_fmin: float = 32.70
    cqt_bins_per_octave: int = 64
    log_floor: float = 1e-8

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise InvalidConfig(f"unknown feature kind {self.kind!r}")
        if self.hop <= 0 or self.fft_size <= 0:
            raise InvalidConfig("hop and fft_size must be positive")
        if self.log_floor <= 0:
            raise InvalidConfig("log_floor must be positive")
        if self.kind in SPECTRAL_KINDS and self.n_bins != 513:
            raise InvalidConfig(f"{self.kind} requires n_bins == 513, got {self.n_bins}")
        if self.kind == "logspec" and self.fft_size // 2 + 1 != self.n_bins:
            raise InvalidConfig("logspec needs fft_size // 2 + 1 == n_bins")

    @property
    def is_raw(self) -> bool:
        return self.kind == "raw"


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (bins, frames) float32
    kind: str
    utt_id: str

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# length policy
# ---------------------------------------------------------------------------

def utterance_rng(global_seed: int, utt_id: str, *extra: int) -> np.random.Generator:
    """Random stream derived from (seed, utt_id, ...) independently of process hash seed."""
    digest = hashlib.sha256(utt_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(global_seed), *extra, *words]))


def repeat_to(samples: np.ndarray, n: int) -> np.ndarray:
    """Cyclically repeat ``samples`` and truncate to exactly ``n`` values."""
    reps = -(-n // len(samples))
    return np.tile(samples, reps)[:n]


def apply_length_policy(clip: AudioClip, policy: LengthPolicy,
                        rng: np.random.Generator | None = None) -> AudioClip:
    x = clip.samples
    n = policy.target_samples
    if len(x) < n:
        x = repeat_to(x, n)
    elif policy.mode == "fixed4s" and len(x) > n:
        if rng is None:
            rng = utterance_rng(policy.rng_seed, clip.utt_id)
        start = int(rng.integers(0, len(x) - n + 1))
        x = x[start:start + n]
    else:
        return clip
    return AudioClip(clip.utt_id, x, clip.sample_rate)


# ---------------------------------------------------------------------------
# spectral transforms
# ---------------------------------------------------------------------------

def frame_count(n_samples: int, hop: int) -> int:
    """Frames of a centered STFT: one per hop position in [0, n_samples]."""
    return 1 + n_samples // hop


def stft(x: np.ndarray, fft_size: int, hop: int, window: str = "hann") -> np.ndarray:
    """Centered, reflection-padded STFT; returns complex (fft_size//2+1, frames)."""
    x = np.asarray(x, dtype=np.float64)
    pad = fft_size // 2
    if len(x) <= pad:
        raise ClipTooShort(f"need more than {pad} samples for reflection padding")
    padded = np.pad(x, pad, mode="reflect")
    n_frames = frame_count(len(x), hop)
    frames = np.lib.stride_tricks.sliding_window_view(padded, fft_size)[::hop][:n_frames]
    win = signal.get_window(window, fft_size, fftbins=True)
    return np.fft.rfft(frames * win, axis=1).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_filters: int, fft_size: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters (peak 1) over the rfft bins, shape (n_filters, fft_size//2+1).

    With many filters on a 1024-point spectrum the narrowest low-frequency
    triangles fall between FFT bins and come out empty.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    fft_freqs = np.fft.rfftfreq(fft_size, 1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs - lower) / (center - lower)
    falling = (upper - fft_freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def cqt_frequencies(n_bins: int, fmin: float, bins_per_octave: int, sample_rate: int) -> np.ndarray:
    """Geometric bin centres; bins past Nyquist are pinned to Nyquist."""
    freqs = fmin * 2.0 ** (np.arange(n_bins) / bins_per_octave)
    return np.minimum(freqs, sample_rate / 2.0)


_CQT_FRAME = 1024


@lru_cache(maxsize=8)
def _cqt_plan(n_bins: int, fmin: float, bins_per_octave: int, sample_rate: int, hop: int):
    """Group bins into decimation stages; each stage gets a (frame, bins) kernel matrix.

    Stage g runs at sample_rate / 2**g and holds bins in (sr_g/8, sr_g/4]
    (stage 0 also takes everything up to Nyquist), so every kernel fits a
    1024-sample frame and sits well inside the anti-aliasing passband.
    """
    freqs = cqt_frequencies(n_bins, fmin, bins_per_octave, sample_rate)
    q = 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)
    stages = []
    assigned = np.zeros(n_bins, dtype=bool)
    g = 0
    while not assigned.all():
        sr_g = sample_rate / 2 ** g
        lo = sr_g / 8.0
        hi = sample_rate / 2.0 if g == 0 else sr_g / 4.0
        idx = np.flatnonzero((freqs > lo) & (freqs <= hi) & ~assigned)
        last = hop % (2 ** (g + 1)) != 0  # cannot decimate further
        if last:
            idx = np.flatnonzero(~assigned)
        if len(idx):
            kernels = np.zeros((_CQT_FRAME, len(idx)), dtype=np.complex128)
            for col, k in enumerate(idx):
                length = min(int(np.ceil(q * sr_g / freqs[k])), _CQT_FRAME)
                win = signal.get_window("hann", length, fftbins=False)
                n = np.arange(length) - (length - 1) / 2.0
                kern = win * np.exp(2j * np.pi * freqs[k] * n / sr_g) / win.sum()
                start = _CQT_FRAME // 2 - length // 2
                kernels[start:start + length, col] = np.conj(kern)
            stages.append((g, idx, kernels))
            assigned[idx] = True
        if last:
            break
        g += 1
    return stages


def cqt_magnitude(x: np.ndarray, sample_rate: int, hop: int, n_bins: int,
                  fmin: float, bins_per_octave: int) -> np.ndarray:
    """Constant-Q magnitude, shape (n_bins, 1 + len(x)//hop).

    Each bin correlates a Hann-windowed complex exponential of length
    Q*sr/f (normalized so a unit sinusoid reads 0.5) with frames centred on
    hop positions; lower octaves run on a 2x-decimated copy of the signal.
    """
    x = np.asarray(x, dtype=np.float64)
    n_frames = frame_count(len(x), hop)
    out = np.zeros((n_bins, n_frames))
    current, level = x, 0
    half = _CQT_FRAME // 2
    for g, idx, kernels in _cqt_plan(n_bins, float(fmin), bins_per_octave, sample_rate, hop):
        while level < g:
            current = signal.resample_poly(current, 1, 2)
            level += 1
        hop_g = hop // 2 ** g
        need = (n_frames - 1) * hop_g + _CQT_FRAME
        padded = np.zeros(max(need, len(current) + 2 * half))
        padded[half:half + len(current)] = current
        frames = np.lib.stride_tricks.sliding_window_view(padded, _CQT_FRAME)[::hop_g][:n_frames]
        out[idx] = np.abs(frames @ kernels).T
    return out


def extract(clip: AudioClip, config: FeatureConfig) -> FeatureMatrix:
    """Turn a clip into a model input; spectral kinds are (513, frames) log magnitudes."""
    x = clip.samples
    if config.is_raw:
        return FeatureMatrix(np.asarray(x, dtype=np.float32)[None, :], "raw", clip.utt_id)
    if clip.sample_rate != SAMPLE_RATE:
        raise InvalidConfig(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    if len(x) < config.fft_size:
        raise ClipTooShort(f"{clip.utt_id}: {len(x)} samples < fft_size {config.fft_size}")
    if config.kind == "logspec":
        mag = np.abs(stft(x, config.fft_size, config.hop, config.window))
        values = np.log(mag + config.log_floor)
    elif config.kind == "melspec":
        power = np.abs(stft(x, config.fft_size, config.hop, config.window)) ** 2
        fb = mel_filterbank(config.n_bins, config.fft_size, clip.sample_rate)
        values = np.log(fb @ power + config.log_floor)
    else:
        mag = cqt_magnitude(x, clip.sample_rate, config.hop, config.n_bins,
                            config.cqt_fmin, config.cqt_bins_per_octave)
        values = np.log(mag + config.log_floor)
    return FeatureMatrix(values.astype(np.float32), config.kind, clip.utt_id)


# ---------------------------------------------------------------------------
# on-disk cache
# ---------------------------------------------------------------------------

_MAGIC = b"SBFM"
_HEADER = struct.Struct("<4sHHII")  # magic, version, kind code, bins, frames
_KIND_CODES = {k: i for i, k in enumerate(FEATURE_KINDS)}


def write_feature_file(path: str | os.PathLike, fm: FeatureMatrix) -> None:
    bins, frames = fm.values.shape
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, 1, _KIND_CODES[fm.kind], bins, frames))
        f.write(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())
    os.replace(tmp, path)


def read_feature_file(path: str | os.PathLike, utt_id: str) -> FeatureMatrix:
    with open(path, "rb") as f:
        magic, version, code, bins, frames = _HEADER.unpack(f.read(_HEADER.size))
        if magic != _MAGIC or version != 1:
            raise ValueError(f"{path}: not a feature cache file")
        values = np.frombuffer(f.read(), dtype="<f4").reshape(bins, frames)
    return FeatureMatrix(values.astype(np.float32), FEATURE_KINDS[code], utt_id)


class FeatureCache:
    """One file per (utt_id, feature config, length policy). Optimization only."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _tag(config: FeatureConfig, policy: LengthPolicy) -> str:
        blob = repr(sorted({**asdict(config), **{f"policy_{k}": v
                                                  for k, v in asdict(policy).items()}}.items()))
        return hashlib.sha1(blob.encode()).hexdigest()[:12]

    def path_for(self, utt_id: str, config: FeatureConfig, policy: LengthPolicy) -> Path:
        safe = utt_id.replace(os.sep, "_")
        return self.root / config.kind / self._tag(config, policy) / f"{safe}.sbfm"

    def get_or_compute(self, clip: AudioClip, config: FeatureConfig,
                       policy: LengthPolicy) -> FeatureMatrix:
        """Apply the policy with the per-utterance eval stream, then extract (cached)."""
        path = self.path_for(clip.utt_id, config, policy)
        if path.is_file():
            return read_feature_file(path, clip.utt_id)
        fm = extract(apply_length_policy(clip, policy), config)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_feature_file(path, fm)
        return fm
