"""Multi-period and multi-scale discriminators and the HiFi-GAN loss terms."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from lmcodec.codec.modules import LRELU_SLOPE


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels=(8, 16, 32)):
        super().__init__()
        self.period = period
        convs = []
        c_in = 1
        for c in channels:
            convs.append(nn.Conv2d(c_in, c, (5, 1), (3, 1), padding=(2, 0)))
            c_in = c
        convs.append(nn.Conv2d(c_in, c_in, (5, 1), 1, padding=(2, 0)))
        self.convs = nn.ModuleList(convs)
        self.post = nn.Conv2d(c_in, 1, (3, 1), 1, padding=(1, 0))

    def forward(self, x):
        b, c, t = x.shape
        if t % self.period:
            pad = self.period - t % self.period
            x = F.pad(x, (0, pad), mode="reflect" if t > pad else "constant")
            t += pad
        x = x.view(b, c, t // self.period, self.period)
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmaps.append(x)
        x = self.post(x)
        fmaps.append(x)
        return torch.flatten(x, 1, -1), fmaps


class ScaleDiscriminator(nn.Module):
    def __init__(self, channels=(8, 16, 32)):
        super().__init__()
        convs = [nn.Conv1d(1, channels[0], 15, 1, padding=7)]
        c_in = channels[0]
        for c in channels[1:]:
            convs.append(nn.Conv1d(c_in, c, 41, 4, groups=min(4, c_in), padding=20))
            c_in = c
        convs.append(nn.Conv1d(c_in, c_in, 5, 1, padding=2))
        self.convs = nn.ModuleList(convs)
        self.post = nn.Conv1d(c_in, 1, 3, 1, padding=1)

    def forward(self, x):
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmaps.append(x)
        x = self.post(x)
        fmaps.append(x)
        return torch.flatten(x, 1, -1), fmaps


class MultiPeriodDiscriminator(nn.Module):
    def __init__(self, periods=(2, 3, 5, 7, 11), channels=(8, 16, 32)):
        super().__init__()
        self.discriminators = nn.ModuleList(PeriodDiscriminator(p, channels) for p in periods)

    def forward(self, x):
        return [d(x) for d in self.discriminators]


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, scales: int = 3, channels=(8, 16, 32)):
        super().__init__()
        self.discriminators = nn.ModuleList(ScaleDiscriminator(channels) for _ in range(scales))
        self.pool = nn.AvgPool1d(4, 2, padding=2)

    def forward(self, x):
        outs = []
        for i, d in enumerate(self.discriminators):
            if i:
                x = self.pool(x)
            outs.append(d(x))
        return outs


class Discriminators(nn.Module):
    """Both discriminator banks; ``forward`` returns one (score, fmaps) per sub-discriminator."""

    def __init__(self, periods, mpd_channels, msd_scales, msd_channels):
        super().__init__()
        self.mpd = MultiPeriodDiscriminator(periods, mpd_channels)
        self.msd = MultiScaleDiscriminator(msd_scales, msd_channels)

    def forward(self, x):
        return self.mpd(x) + self.msd(x)


def generator_adversarial_loss(fake_outputs) -> torch.Tensor:
    """Least-squares generator term, summed over sub-discriminators."""
    return sum(torch.mean((1.0 - score) ** 2) for score, _ in fake_outputs)


def discriminator_loss(real_outputs, fake_outputs) -> torch.Tensor:
    return sum(
        torch.mean((1.0 - r) ** 2) + torch.mean(f**2) for (r, _), (f, _) in zip(real_outputs, fake_outputs)
    )


def feature_matching_loss(real_outputs, fake_outputs) -> torch.Tensor:
    """Mean L1 distance between real and fake feature maps, summed over layers."""
    loss = 0.0
    for (_, real_maps), (_, fake_maps) in zip(real_outputs, fake_outputs):
        for r, f in zip(real_maps, fake_maps):
            loss = loss + torch.mean(torch.abs(r.detach() - f))
    return loss
