"""Detectors operating on (batch, 513, frames) spectrogram input."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import (
    AttentionPool,
    MFMConv2d,
    MFMLinear,
    SinusoidalPositionalEncoding,
    TimeAveragePool,
)


class Detector(nn.Module):
    input_kind = "spectral"
    min_frames = 1


class LSTMDetector(Detector):
    """Three stacked LSTMs, time average, one linear layer."""

    def __init__(self, n_bins=513, hidden=256, layers=3, **_):
        super().__init__()
        self.lstm = nn.LSTM(n_bins, hidden, num_layers=layers, batch_first=True)
        self.pool = TimeAveragePool(dim=1)
        self.fc = nn.Linear(hidden, 2)

    def forward(self, x):
        h, _ = self.lstm(x.transpose(1, 2))
        return self.fc(self.pool(h))


class LCNNTrunk(nn.Module):
    """Five MFM conv blocks; four 2x2 max-pools. Output (B, T/16, C * F/16)."""

    def __init__(self, n_bins=513, widths=(32, 48, 64, 32, 32), dropout=0.5):
        super().__init__()
        w0, w1, w2, w3, w4 = widths
        self.net = nn.Sequential(
            MFMConv2d(1, w0, 5, padding=2), nn.MaxPool2d(2),
            MFMConv2d(w0, w0, 1), nn.BatchNorm2d(w0),
            MFMConv2d(w0, w1, 3, padding=1), nn.MaxPool2d(2), nn.BatchNorm2d(w1),
            MFMConv2d(w1, w1, 1), nn.BatchNorm2d(w1),
            MFMConv2d(w1, w2, 3, padding=1), nn.MaxPool2d(2),
            MFMConv2d(w2, w2, 1), nn.BatchNorm2d(w2),
            MFMConv2d(w2, w3, 3, padding=1), nn.BatchNorm2d(w3),
            MFMConv2d(w3, w3, 1), nn.BatchNorm2d(w3),
            MFMConv2d(w3, w4, 3, padding=1), nn.MaxPool2d(2),
        )
        self.dropout = nn.Dropout(dropout)
        self.out_dim = w4 * (n_bins // 16)

    def forward(self, x):
        h = self.net(x[:, None])  # (B, C, F', T')
        h = h.permute(0, 3, 1, 2).flatten(2)
        return self.dropout(h)


class LCNN(Detector):
    min_frames = 16

    def __init__(self, n_bins=513, widths=(32, 48, 64, 32, 32), embed=80, dropout=0.5, **_):
        super().__init__()
        self.trunk = LCNNTrunk(n_bins, widths, dropout)
        self.embed = MFMLinear(self.trunk.out_dim, embed)
        self.pool = self._make_pool(embed)
        self.fc = nn.Linear(embed, 2)

    def _make_pool(self, dim):
        return TimeAveragePool(dim=1)

    def forward(self, x):
        return self.fc(self.pool(self.embed(self.trunk(x))))


class LCNNAttention(LCNN):
    """LCNN whose time average is replaced by single-head attention pooling."""

    def _make_pool(self, dim):
        return AttentionPool(dim)


class LCNNLSTM(Detector):
    """LCNN trunk, BiLSTM with an additive skip connection, time average."""

    min_frames = 16

    def __init__(self, n_bins=513, widths=(32, 48, 64, 32, 32), lstm_hidden=256,
                 dropout=0.5, **_):
        super().__init__()
        self.trunk = LCNNTrunk(n_bins, widths, dropout)
        self.proj = MFMLinear(self.trunk.out_dim, 2 * lstm_hidden)
        self.blstm = nn.LSTM(2 * lstm_hidden, lstm_hidden, batch_first=True, bidirectional=True)
        self.pool = TimeAveragePool(dim=1)
        self.dropout = nn.Dropout(dropout)
        self.fc = nn.Linear(2 * lstm_hidden, 2)

    def forward(self, x):
        h = self.proj(self.trunk(x))
        r, _ = self.blstm(h)
        return self.fc(self.dropout(self.pool(h + r)))


def _conv_bn_pool(in_ch, out_ch, kernel, pool):
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2, bias=False),
                         nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True), nn.MaxPool2d(pool))


class _MesoHead(nn.Module):
    def __init__(self, in_dim, hidden, dropout):
        super().__init__()
        self.pool = TimeAveragePool(dim=1)
        self.net = nn.Sequential(nn.Dropout(dropout), nn.Linear(in_dim, hidden),
                                 nn.LeakyReLU(0.1), nn.Dropout(dropout), nn.Linear(hidden, 2))

    def forward(self, h):  # (B, C, F', T')
        return self.net(self.pool(h.permute(0, 3, 1, 2).flatten(2)))


class MesoNet(Detector):
    min_frames = 32

    def __init__(self, n_bins=513, widths=(8, 8, 16, 16), kernels=(3, 5, 5, 5),
                 pools=(2, 2, 2, 4), fc_hidden=16, dropout=0.5, **_):
        super().__init__()
        chans = [1, *widths]
        self.features = nn.Sequential(*[_conv_bn_pool(chans[i], chans[i + 1], kernels[i], pools[i])
                                        for i in range(4)])
        f = n_bins
        for p in pools:
            f //= p
        self.head = _MesoHead(widths[-1] * f, fc_hidden, dropout)
        self.min_frames = int(torch.tensor(pools).prod())

    def forward(self, x):
        return self.head(self.features(x[:, None]))


class InceptionBlock(nn.Module):
    """Four parallel branches: 1x1, 3x3, 3x3 dilation 2, 3x3 dilation 3."""

    def __init__(self, in_ch, a, b, c, d, pool):
        super().__init__()
        self.b1 = nn.Conv2d(in_ch, a, 1)
        self.b2 = nn.Sequential(nn.Conv2d(in_ch, b, 1), nn.Conv2d(b, b, 3, padding=1))
        self.b3 = nn.Sequential(nn.Conv2d(in_ch, c, 1), nn.Conv2d(c, c, 3, padding=2, dilation=2))
        self.b4 = nn.Sequential(nn.Conv2d(in_ch, d, 1), nn.Conv2d(d, d, 3, padding=3, dilation=3))
        self.bn = nn.BatchNorm2d(a + b + c + d)
        self.pool = nn.MaxPool2d(pool)
        self.out_ch = a + b + c + d

    def forward(self, x):
        h = torch.cat([self.b1(x), self.b2(x), self.b3(x), self.b4(x)], dim=1)
        return self.pool(F.relu(self.bn(h)))


class MesoInception(Detector):
    min_frames = 32

    def __init__(self, n_bins=513, inception=((1, 4, 4, 2), (2, 4, 4, 2)), widths=(16, 16),
                 kernels=(5, 5), pools=(2, 2, 2, 4), fc_hidden=16, dropout=0.5, **_):
        super().__init__()
        inc1 = InceptionBlock(1, *inception[0], pools[0])
        inc2 = InceptionBlock(inc1.out_ch, *inception[1], pools[1])
        self.features = nn.Sequential(
            inc1, inc2,
            _conv_bn_pool(inc2.out_ch, widths[0], kernels[0], pools[2]),
            _conv_bn_pool(widths[0], widths[1], kernels[1], pools[3]),
        )
        f = n_bins
        for p in pools:
            f //= p
        self.head = _MesoHead(widths[-1] * f, fc_hidden, dropout)
        self.min_frames = int(torch.tensor(pools).prod())

    def forward(self, x):
        return self.head(self.features(x[:, None]))


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut = nn.Identity()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=False),
                                          nn.BatchNorm2d(out_ch))

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.shortcut(x))


class ResNet18(Detector):
    """Standard 18-layer residual network on a one-channel spectrogram."""

    def __init__(self, n_bins=513, widths=(64, 128, 256, 512), blocks=(2, 2, 2, 2), **_):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(1, widths[0], 7, 2, 3, bias=False),
                                  nn.BatchNorm2d(widths[0]), nn.ReLU(inplace=True),
                                  nn.MaxPool2d(3, 2, 1))
        layers, in_ch = [], widths[0]
        for i, (w, n) in enumerate(zip(widths, blocks)):
            for j in range(n):
                layers.append(BasicBlock(in_ch, w, 2 if (j == 0 and i > 0) else 1))
                in_ch = w
        self.layers = nn.Sequential(*layers)
        self.fc = nn.Linear(in_ch, 2)

    def forward(self, x):
        h = self.layers(self.stem(x[:, None]))
        return self.fc(h.mean(dim=(2, 3)))


class TransformerDetector(Detector):
    def __init__(self, n_bins=513, hidden_dim=256, n_attention_layers=4, n_heads=4,
                 ff_dim=1024, dropout=0.1, **_):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.n_attention_layers = n_attention_layers
        self.input_proj = nn.Linear(n_bins, hidden_dim)
        self.pos = SinusoidalPositionalEncoding(hidden_dim)
        layer = nn.TransformerEncoderLayer(hidden_dim, n_heads, ff_dim, dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, n_attention_layers, enable_nested_tensor=False)
        self.pool = TimeAveragePool(dim=1)
        self.fc = nn.Linear(hidden_dim, 2)

    def forward(self, x):
        h = self.encoder(self.pos(self.input_proj(x.transpose(1, 2))))
        return self.fc(self.pool(h))
