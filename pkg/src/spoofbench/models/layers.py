"""Building blocks shared by several detectors."""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class MaxFeatureMap(nn.Module):
    """Split channels (dim 1) in two halves and keep the elementwise maximum."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a, b = x.chunk(2, dim=1)
        return torch.max(a, b)


class MFMConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, padding: int = 0):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, 2 * out_ch, kernel, padding=padding)
        self.mfm = MaxFeatureMap()

    def forward(self, x):
        return self.mfm(self.conv(x))


class MFMLinear(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.fc = nn.Linear(in_dim, 2 * out_dim)

    def forward(self, x):
        a, b = self.fc(x).chunk(2, dim=-1)
        return torch.max(a, b)


class TimeAveragePool(nn.Module):
    """Global average over the time axis; gives any network variable-length support."""

    def __init__(self, dim: int = 1):
        super().__init__()
        self.dim = dim

    def forward(self, x):
        return x.mean(dim=self.dim)


class AttentionPool(nn.Module):
    """Single-head attention pooling over time for (B, T, D) sequences."""

    def __init__(self, dim: int):
        super().__init__()
        self.score = nn.Linear(dim, 1)

    def forward(self, x):
        weights = torch.softmax(self.score(x), dim=1)
        return (weights * x).sum(dim=1)


class SinusoidalPositionalEncoding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, x):
        t = x.shape[1]
        pos = torch.arange(t, dtype=x.dtype, device=x.device)[:, None]
        div = torch.exp(torch.arange(0, self.dim, 2, dtype=x.dtype, device=x.device)
                        * (-math.log(10000.0) / self.dim))
        pe = torch.zeros(t, self.dim, dtype=x.dtype, device=x.device)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        return x + pe


def _mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _imel(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def sinc_bandpass_bank(n_filters: int, kernel_size: int, sample_rate: int = 16000,
                       f_low: float = 0.0, f_high: float | None = None) -> np.ndarray:
    """Hamming-windowed ideal (rectangular) band-pass filters with mel-spaced edges."""
    if kernel_size % 2 == 0:
        kernel_size += 1
    f_high = sample_rate / 2 if f_high is None else f_high
    edges = _imel(np.linspace(_mel(f_low), _mel(f_high), n_filters + 1))
    n = np.arange(kernel_size) - (kernel_size - 1) / 2
    window = np.hamming(kernel_size)
    bank = np.empty((n_filters, kernel_size))
    for i in range(n_filters):
        f1, f2 = edges[i] / sample_rate, edges[i + 1] / sample_rate
        bank[i] = (2 * f2 * np.sinc(2 * f2 * n) - 2 * f1 * np.sinc(2 * f1 * n)) * window
    return bank.astype(np.float32)


class SincFilterbank(nn.Module):
    """Fixed sinc band-pass front end: (B, T) waveform -> (B, n_filters, T')."""

    def __init__(self, n_filters: int, kernel_size: int, sample_rate: int = 16000):
        super().__init__()
        bank = torch.from_numpy(sinc_bandpass_bank(n_filters, kernel_size, sample_rate))
        self.register_buffer("filters", bank[:, None, :])
        self.kernel_size = bank.shape[-1]

    def forward(self, x):
        return F.conv1d(x[:, None, :], self.filters)


class GraphAttentionLayer(nn.Module):
    """Single-head graph attention over a fully connected node set (B, N, D)."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.proj = nn.Linear(in_dim, out_dim, bias=False)
        self.att_src = nn.Parameter(torch.empty(out_dim))
        self.att_dst = nn.Parameter(torch.empty(out_dim))
        self.skip = nn.Linear(in_dim, out_dim)
        self.norm = nn.BatchNorm1d(out_dim)
        nn.init.normal_(self.att_src, std=out_dim ** -0.5)
        nn.init.normal_(self.att_dst, std=out_dim ** -0.5)

    def forward(self, x):
        h = self.proj(x)
        logits = (h @ self.att_dst)[:, :, None] + (h @ self.att_src)[:, None, :]
        att = torch.softmax(F.leaky_relu(logits, 0.2), dim=-1)
        out = att @ h + self.skip(x)
        out = self.norm(out.transpose(1, 2)).transpose(1, 2)
        return F.selu(out)


class GraphPool(nn.Module):
    """Score nodes with a sigmoid gate and keep the top ``ratio`` fraction.

    ``mode="select"`` gathers the kept nodes. ``mode="mask"`` keeps the node
    axis and weights node i by relu(gate_i - g), g being the largest gate
    left out; dropped nodes become zero and the output is continuous in the
    parameters, since a node entering or leaving the set has weight zero.
    """

    def __init__(self, dim: int, ratio: float, mode: str = "select"):
        super().__init__()
        if mode not in ("select", "mask"):
            raise ValueError(f"unknown pooling mode {mode!r}")
        self.score = nn.Linear(dim, 1)
        self.ratio = ratio
        self.mode = mode

    def kept(self, n: int) -> int:
        return min(n, max(1, int(math.ceil(n * self.ratio))))

    def forward(self, x):
        gate = torch.sigmoid(self.score(x)).squeeze(-1)
        n = x.shape[1]
        k = self.kept(n)
        if self.mode == "mask":
            if k < n:
                gate = F.relu(gate - gate.topk(k + 1, dim=1).values[:, -1:])
            return x * gate[:, :, None]
        x = x * gate[:, :, None]
        idx = gate.topk(k, dim=1).indices.sort(dim=1).values
        return torch.gather(x, 1, idx[:, :, None].expand(-1, -1, x.shape[-1]))
