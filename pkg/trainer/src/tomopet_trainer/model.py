"""Conditional generator (RRDB backbone with noise injection) and discriminator.

The generator pixel-unshuffles the conditioning stack, runs a trunk of
residual-in-residual dense blocks at the reduced resolution, and upsamples
back. A fresh single-channel standard-normal noise image is injected at the
start of every dense block and before every upsampling convolution, scaled by
a learned per-channel factor initialized to zero, so a freshly built
generator is a deterministic function of its conditioning input.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

_RESIDUAL_SCALE = 0.2
_GROWTH_CHANNELS = 32
_DENSE_BLOCKS_PER_RRDB = 3


class TrainerError(Exception):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    input_size: tuple[int, int] = (64, 64)
    in_channels: int = 2
    unshuffle_factor: int = 2
    base_channels: int = 64
    n_rrdb: int = 4
    out_channels: int = 1
    noise_per_block: bool = True

    def __post_init__(self):
        h, w = self.input_size
        s = self.unshuffle_factor
        if s not in (2, 4):
            raise TrainerError(f"unshuffle_factor must be 2 or 4, got {s}")
        if h % s or w % s:
            raise TrainerError(f"input size {h}x{w} not divisible by {s}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise TrainerError("channel counts must be positive")
        if self.n_rrdb < 1 or self.base_channels < 1:
            raise TrainerError("n_rrdb and base_channels must be positive")

    @property
    def unshuffled_shape(self) -> tuple[int, int, int]:
        """(height, width, channels) after pixel-unshuffle."""
        h, w = self.input_size
        s = self.unshuffle_factor
        return (h // s, w // s, self.in_channels * s * s)

    @property
    def n_upsample_stages(self) -> int:
        return self.unshuffle_factor // 2

    @property
    def n_noise_slots(self) -> int:
        """Noise images consumed per forward pass."""
        return self.n_rrdb * _DENSE_BLOCKS_PER_RRDB + self.n_upsample_stages


PAPER_SCALE = GeneratorConfig(input_size=(256, 256), in_channels=2,
                              unshuffle_factor=4, base_channels=64, n_rrdb=23)


class _NoiseInjection(nn.Module):
    """Adds a shared single-channel noise image scaled per channel."""

    def __init__(self, channels: int):
        super().__init__()
        self.scale = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        # noise is (B, 1, H, W); the learned scale broadcasts over space.
        return x + self.scale.view(1, -1, 1, 1) * noise


class _DenseBlock(nn.Module):
    """Five densely connected convolutions with residual scaling."""

    def __init__(self, channels: int, growth: int = _GROWTH_CHANNELS):
        super().__init__()
        self.noise = _NoiseInjection(channels)
        self.convs = nn.ModuleList()
        for k in range(4):
            self.convs.append(nn.Conv2d(channels + k * growth, growth, 3, 1, 1))
        self.conv_out = nn.Conv2d(channels + 4 * growth, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        h = self.noise(x, noise)
        feats = [h]
        for conv in self.convs:
            feats.append(self.act(conv(torch.cat(feats, dim=1))))
        out = self.conv_out(torch.cat(feats, dim=1))
        return x + _RESIDUAL_SCALE * out


class _RRDB(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.blocks = nn.ModuleList(
            _DenseBlock(channels) for _ in range(_DENSE_BLOCKS_PER_RRDB))

    def forward(self, x: torch.Tensor, noises: list[torch.Tensor]) -> torch.Tensor:
        h = x
        for block, z in zip(self.blocks, noises):
            h = block(h, z)
        return x + _RESIDUAL_SCALE * h


class _UpsampleStage(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.noise = _NoiseInjection(channels)
        self.conv = nn.Conv2d(channels, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.act(self.conv(self.noise(x, noise)))


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        s = cfg.unshuffle_factor
        nf = cfg.base_channels
        self.conv_first = nn.Conv2d(cfg.in_channels * s * s, nf, 3, 1, 1)
        self.body = nn.ModuleList(_RRDB(nf) for _ in range(cfg.n_rrdb))
        self.trunk_conv = nn.Conv2d(nf, nf, 3, 1, 1)
        self.upsample = nn.ModuleList(
            _UpsampleStage(nf) for _ in range(cfg.n_upsample_stages))
        self.conv_hr = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_last = nn.Conv2d(nf, cfg.out_channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def sample_noise(self, batch: int, generator: torch.Generator | None = None,
                     device=None, dtype=None) -> list[torch.Tensor]:
        """Fresh standard-normal noise images, one per injection slot.

        With ``noise_per_block`` disabled the slots are all-zero, making the
        generator a deterministic function of its conditioning input.
        """
        cfg = self.cfg

        def draw(b, h, w):
            if not cfg.noise_per_block:
                return torch.zeros(b, 1, h, w, device=device, dtype=dtype)
            return torch.randn(b, 1, h, w, generator=generator,
                               device=device, dtype=dtype)

        h, w, _ = cfg.unshuffled_shape
        slots = []
        for _ in range(cfg.n_rrdb * _DENSE_BLOCKS_PER_RRDB):
            slots.append(draw(batch, h, w))
        hh, ww = h, w
        for _ in range(cfg.n_upsample_stages):
            hh, ww = hh * 2, ww * 2
            slots.append(draw(batch, hh, ww))
        return slots

    def forward(self, y: torch.Tensor,
                z: list[torch.Tensor] | None = None) -> torch.Tensor:
        cfg = self.cfg
        if y.ndim != 4 or y.shape[1] != cfg.in_channels or \
                (y.shape[2], y.shape[3]) != cfg.input_size:
            raise TrainerError(
                f"conditioning tensor must be (B, {cfg.in_channels}, "
                f"{cfg.input_size[0]}, {cfg.input_size[1]}), got {tuple(y.shape)}")
        if z is None:
            z = self.sample_noise(y.shape[0], device=y.device, dtype=y.dtype)
        if len(z) != cfg.n_noise_slots:
            raise TrainerError(
                f"expected {cfg.n_noise_slots} noise images, got {len(z)}")

        x = F.pixel_unshuffle(y, cfg.unshuffle_factor)
        x = self.conv_first(x)
        skip = x
        cursor = 0
        for rrdb in self.body:
            x = rrdb(x, z[cursor:cursor + _DENSE_BLOCKS_PER_RRDB])
            cursor += _DENSE_BLOCKS_PER_RRDB
        x = skip + self.trunk_conv(x)
        for stage in self.upsample:
            x = stage(x, z[cursor])
            cursor += 1
        x = self.act(self.conv_hr(x))
        return self.conv_last(x)


def build_generator(cfg: GeneratorConfig) -> Generator:
    return Generator(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        return x + self.act(self.conv2(self.act(self.conv1(x))))


class SmallResNetDiscriminator(nn.Module):
    """Compact residual CNN with a scalar logit; the desk-scale default."""

    def __init__(self, in_channels: int = 1, base_channels: int = 32,
                 n_stages: int = 3):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(in_channels, base_channels, 3, 1, 1),
                                   nn.LeakyReLU(0.2, inplace=True)]
        ch = base_channels
        for _ in range(n_stages):
            layers.append(_ResidualBlock(ch))
            layers.append(nn.Conv2d(ch, ch * 2, 3, 2, 1))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            ch *= 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(ch, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)
        h = h.mean(dim=(2, 3))
        return self.head(h).squeeze(1)


def build_discriminator(input_size: tuple[int, int], in_channels: int = 1,
                        backbone: str = "small_resnet") -> nn.Module:
    """Discriminator factory.

    ``small_resnet`` is the default used everywhere in tests; ``resnet34``
    builds a torchvision ResNet-34 adapted to single-channel input (random
    init; pretrained weights are an offline-unavailable extra).
    """
    if backbone == "small_resnet":
        return SmallResNetDiscriminator(in_channels=in_channels)
    if backbone == "resnet34":
        from torchvision.models import resnet34
        net = resnet34(weights=None)
        net.conv1 = nn.Conv2d(in_channels, 64, kernel_size=7, stride=2,
                              padding=3, bias=False)
        net.fc = nn.Linear(net.fc.in_features, 1)
        original = net.forward

        def forward(x):
            return original(x).squeeze(1)

        net.forward = forward
        return net
    raise TrainerError(f"unknown discriminator backbone {backbone!r}")
