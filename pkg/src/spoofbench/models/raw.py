"""End-to-end detectors operating on (batch, samples) waveforms."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import GraphAttentionLayer, GraphPool, SincFilterbank, TimeAveragePool
from .spectral import Detector


class RawDetector(Detector):
    input_kind = "raw"


# ---------------------------------------------------------------------------
# CRNNSpoof
# ---------------------------------------------------------------------------

class CRNNSpoof(RawDetector):
    """1-D conv blocks over samples, then a BiLSTM and time average."""

    def __init__(self, conv_channels=(32, 32, 64, 64, 128), conv_kernel=3, conv_pool=3,
                 rnn_hidden=128, rnn_layers=2, dropout=0.3, **_):
        super().__init__()
        blocks, in_ch = [], 1
        for ch in conv_channels:
            blocks += [nn.Conv1d(in_ch, ch, conv_kernel, padding=conv_kernel // 2),
                       nn.BatchNorm1d(ch), nn.LeakyReLU(0.3), nn.MaxPool1d(conv_pool)]
            in_ch = ch
        self.conv = nn.Sequential(*blocks)
        self.rnn = nn.LSTM(in_ch, rnn_hidden, rnn_layers, batch_first=True, bidirectional=True)
        self.pool = TimeAveragePool(dim=1)
        self.dropout = nn.Dropout(dropout)
        self.fc = nn.Linear(2 * rnn_hidden, 2)
        self.min_frames = conv_pool ** len(conv_channels)

    def forward(self, x):
        h = self.conv(x[:, None]).transpose(1, 2)
        h, _ = self.rnn(h)
        return self.fc(self.dropout(self.pool(h)))


# ---------------------------------------------------------------------------
# RawNet2
# ---------------------------------------------------------------------------

class FMSResBlock(nn.Module):
    """Residual 1-D block with max-pool and filter-wise feature map scaling."""

    def __init__(self, in_ch, out_ch, first=False):
        super().__init__()
        self.first = first
        if not first:
            self.bn1 = nn.BatchNorm1d(in_ch)
        self.conv1 = nn.Conv1d(in_ch, out_ch, 3, padding=1)
        self.bn2 = nn.BatchNorm1d(out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 3, padding=1)
        self.downsample = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else None
        self.pool = nn.MaxPool1d(3)
        self.fms = nn.Linear(out_ch, out_ch)

    def forward(self, x):
        h = x if self.first else F.leaky_relu(self.bn1(x), 0.3)
        h = self.conv2(F.leaky_relu(self.bn2(self.conv1(h)), 0.3))
        h = self.pool(h + (x if self.downsample is None else self.downsample(x)))
        scale = torch.sigmoid(self.fms(h.mean(dim=-1)))[:, :, None]
        return h * scale + scale


class RawNet2(RawDetector):
    def __init__(self, sinc_filters=20, sinc_kernel=1024, block_widths=(20, 20, 128, 128, 128, 128),
                 gru_hidden=1024, gru_layers=3, fc_hidden=1024, **_):
        super().__init__()
        self.sinc = SincFilterbank(sinc_filters, sinc_kernel)
        self.bn0 = nn.BatchNorm1d(sinc_filters)
        blocks, in_ch = [], sinc_filters
        for i, w in enumerate(block_widths):
            blocks.append(FMSResBlock(in_ch, w, first=(i == 0)))
            in_ch = w
        self.blocks = nn.Sequential(*blocks)
        self.bn_gru = nn.BatchNorm1d(in_ch)
        self.gru = nn.GRU(in_ch, gru_hidden, gru_layers, batch_first=True)
        self.fc1 = nn.Linear(gru_hidden, fc_hidden)
        self.fc2 = nn.Linear(fc_hidden, 2)
        self.min_frames = self.sinc.kernel_size - 1 + 3 ** (len(block_widths) + 1)

    def forward(self, x):
        h = F.max_pool1d(self.sinc(x).abs(), 3)
        h = self.blocks(F.selu(self.bn0(h)))
        h = F.leaky_relu(self.bn_gru(h), 0.3).transpose(1, 2)
        h, _ = self.gru(h)
        return self.fc2(self.fc1(h[:, -1]))


# ---------------------------------------------------------------------------
# RawPC: fixed PC-DARTS-style cell graph over a sinc front end
# ---------------------------------------------------------------------------

class ReLUConvBN(nn.Sequential):
    def __init__(self, in_ch, out_ch, kernel=1, stride=1, dilation=1, separable=False):
        pad = (kernel // 2) * dilation
        if separable:
            conv = [nn.Conv1d(in_ch, in_ch, kernel, stride, pad, dilation, groups=in_ch, bias=False),
                    nn.Conv1d(in_ch, out_ch, 1, bias=False)]
        else:
            conv = [nn.Conv1d(in_ch, out_ch, kernel, stride, pad, dilation, bias=False)]
        super().__init__(nn.ReLU(), *conv, nn.BatchNorm1d(out_ch))


def make_op(name: str, ch: int, stride: int) -> nn.Module:
    if name == "skip_connect":
        return nn.Identity() if stride == 1 else ReLUConvBN(ch, ch, 1, stride)
    if name == "max_pool_3":
        return nn.MaxPool1d(3, stride, padding=1)
    if name == "avg_pool_3":
        return nn.AvgPool1d(3, stride, padding=1, count_include_pad=False)
    kind, _, k = name.rpartition("_")
    if kind == "std_conv":
        return ReLUConvBN(ch, ch, int(k), stride)
    if kind == "dil_conv":
        return ReLUConvBN(ch, ch, int(k), stride, dilation=2, separable=True)
    raise ValueError(f"unknown cell op {name!r}")


class Cell(nn.Module):
    def __init__(self, genotype, prev_prev_ch, prev_ch, ch, reduction, reduction_prev):
        super().__init__()
        self.pre0 = (ReLUConvBN(prev_prev_ch, ch, 1, stride=2) if reduction_prev
                     else ReLUConvBN(prev_prev_ch, ch, 1))
        self.pre1 = ReLUConvBN(prev_ch, ch, 1)
        self.inputs = [int(i) for _, i in genotype]
        self.ops = nn.ModuleList(
            make_op(op, ch, 2 if reduction and int(i) < 2 else 1) for op, i in genotype)
        self.n_nodes = len(genotype) // 2

    def forward(self, s0, s1):
        states = [self.pre0(s0), self.pre1(s1)]
        for n in range(self.n_nodes):
            a, b = 2 * n, 2 * n + 1
            states.append(self.ops[a](states[self.inputs[a]]) + self.ops[b](states[self.inputs[b]]))
        return torch.cat(states[2:], dim=1)


class RawPC(RawDetector):
    def __init__(self, sinc_filters=64, sinc_kernel=128, stem_pool=3, channels=16, n_cells=8,
                 gru_hidden=256, normal=(), reduce=(), **_):
        super().__init__()
        self.sinc = SincFilterbank(sinc_filters, sinc_kernel)
        self.stem_pool = stem_pool
        self.stem_bn = nn.BatchNorm1d(sinc_filters)
        cells, pp, p, ch, reduction_prev = [], sinc_filters, sinc_filters, channels, False
        reduce_at = {n_cells // 3, 2 * n_cells // 3}
        for i in range(n_cells):
            reduction = i in reduce_at
            if reduction:
                ch *= 2
            cell = Cell(reduce if reduction else normal, pp, p, ch, reduction, reduction_prev)
            cells.append(cell)
            pp, p, reduction_prev = p, cell.n_nodes * ch, reduction
        self.cells = nn.ModuleList(cells)
        self.bn_out = nn.BatchNorm1d(p)
        self.gru = nn.GRU(p, gru_hidden, batch_first=True)
        self.fc = nn.Linear(gru_hidden, 2)
        self.min_frames = self.sinc.kernel_size - 1 + stem_pool

    def forward(self, x):
        h = F.max_pool1d(self.sinc(x).abs(), self.stem_pool)
        s0 = s1 = F.leaky_relu(self.stem_bn(h), 0.3)
        for cell in self.cells:
            s0, s1 = s1, cell(s0, s1)
        h = F.leaky_relu(self.bn_out(s1), 0.3).transpose(1, 2)
        h, _ = self.gru(h)
        return self.fc(h[:, -1])


# ---------------------------------------------------------------------------
# RawGAT-ST
# ---------------------------------------------------------------------------

class Res2DBlock(nn.Module):
    def __init__(self, in_ch, out_ch, first=False):
        super().__init__()
        self.first = first
        if not first:
            self.bn1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, (2, 3), padding=(1, 1))
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, (2, 3), padding=(0, 1))
        self.downsample = (nn.Conv2d(in_ch, out_ch, (1, 3), padding=(0, 1))
                           if in_ch != out_ch else None)
        self.pool = nn.MaxPool2d((1, 3))

    def forward(self, x):
        h = x if self.first else F.selu(self.bn1(x))
        h = self.conv2(F.selu(self.bn2(self.conv1(h))))
        return self.pool(h + (x if self.downsample is None else self.downsample(x)))


class RawGATST(RawDetector):
    """Sinc front end, 2-D residual encoder, spectral and temporal graph attention.

    The spectral graph has one node per frequency band, the temporal graph
    one node per frame. Both are gated/pooled, resampled to a common node
    count, fused by elementwise product and passed through a third GAT.
    """

    def __init__(self, sinc_filters=70, sinc_kernel=128, encoder=((1, 32), (32, 32), (32, 64), (64, 64)),
                 gat_dims=(64, 32, 16), pool_ratios=(0.64, 0.81, 0.64), fused_nodes=12,
                 readout="flatten", pool_mode="mask", **_):
        super().__init__()
        self.sinc = SincFilterbank(sinc_filters, sinc_kernel)
        self.bn0 = nn.BatchNorm2d(1)
        self.encoder = nn.Sequential(*[Res2DBlock(i, o, first=(n == 0))
                                       for n, (i, o) in enumerate(encoder)])
        enc_out, g1, g2 = encoder[-1][1], gat_dims[1], gat_dims[2]
        self.gat_s = GraphAttentionLayer(enc_out, g1)
        self.pool_s = GraphPool(g1, pool_ratios[0], pool_mode)
        self.gat_t = GraphAttentionLayer(enc_out, g1)
        self.pool_t = GraphPool(g1, pool_ratios[1], pool_mode)
        self.proj_s = nn.Linear(g1, g1)
        self.proj_t = nn.Linear(g1, g1)
        self.fused_nodes = fused_nodes
        self.gat_st = GraphAttentionLayer(g1, g2)
        self.pool_st = GraphPool(g2, pool_ratios[2], pool_mode)
        self.readout = readout
        kept = fused_nodes if pool_mode == "mask" else self.pool_st.kept(fused_nodes)
        self.fc = nn.Linear({"mean": g2, "maxmean": 2 * g2, "flatten": kept * g2}[readout], 2)
        self.min_frames = self.sinc.kernel_size - 1 + 3 ** (len(encoder) + 1)

    def _to_nodes(self, x):
        return F.adaptive_avg_pool1d(x.transpose(1, 2), self.fused_nodes).transpose(1, 2)

    def forward(self, x):
        h = self.sinc(x)[:, None]  # (B, 1, filters, T)
        h = F.selu(self.bn0(F.max_pool2d(h.abs(), 3)))
        h = self.encoder(h).abs()  # (B, C, F, T)
        spectral = h.amax(dim=3).transpose(1, 2)  # (B, F, C)
        temporal = h.amax(dim=2).transpose(1, 2)  # (B, T, C)
        s = self.pool_s(self.gat_s(spectral))
        t = self.pool_t(self.gat_t(temporal))
        fused = self._to_nodes(self.proj_s(s)) * self._to_nodes(self.proj_t(t))
        g = self.pool_st(self.gat_st(fused))
        if self.readout == "maxmean":
            return self.fc(torch.cat([g.amax(dim=1), g.mean(dim=1)], dim=-1))
        if self.readout == "flatten":
            return self.fc(g.flatten(1))
        return self.fc(g.mean(dim=1))
