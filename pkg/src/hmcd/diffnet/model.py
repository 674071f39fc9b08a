"""Change detector: two pyramid encoders, feature differencing and a YOLO-style head.

Tensors are NCHW. Pyramids are ordered coarse to fine (strides 32, 16, 8)
and the three prediction tensors follow the same order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..boxes import NUM_CLASSES
from ..errors import ShapeError

NUM_ANCHORS = 3
STRIDES = (32, 16, 8)
PRED_CHANNELS = NUM_ANCHORS * (NUM_CLASSES + 5)

PRESETS = {
    "tiny": {
        "raster_widths": (8, 16, 16, 32, 64, 128),
        "camera_stem": 8,
        "camera_widths": (16, 16, 32, 64, 128),
        "camera_blocks": (1, 1, 1, 1, 1),
    },
    "darknet53-like": {
        "raster_widths": (32, 64, 128, 256, 512, 1024),
        "camera_stem": 32,
        "camera_widths": (64, 128, 256, 512, 1024),
        "camera_blocks": (1, 2, 8, 8, 4),
    },
}
CONF_BIAS_INIT = -4.0


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "tiny"
    input_size: int = 224
    raster_channels: int = 1
    temporal: bool = False

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.input_size % 32 != 0 or self.input_size <= 0:
            raise ValueError(f"input_size must be a positive multiple of 32, got {self.input_size}")

    @property
    def plan(self) -> dict:
        return PRESETS[self.preset]

    @property
    def grid_sizes(self) -> tuple[int, ...]:
        return tuple(self.input_size // s for s in STRIDES)

    @property
    def tap_channels(self) -> tuple[int, ...]:
        """Encoder channels at strides 32, 16, 8."""
        w = self.plan["raster_widths"]
        return (w[5], w[4], w[3])


def conv_act(c_in: int, c_out: int, k: int = 3, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(c_in, c_out, k, stride, k // 2), nn.LeakyReLU(0.1))


class RasterEncoder(nn.Module):
    """Eleven 3x3 conv layers, five of them stride 2; taps after layers 7, 9 and 11."""

    TAPS = (10, 8, 6)  # layer indices for strides 32, 16, 8

    def __init__(self, in_channels: int, widths: tuple[int, ...]):
        super().__init__()
        w = widths
        plan = [(w[0], 1), (w[1], 2), (w[1], 1), (w[2], 2), (w[2], 1), (w[3], 2),
                (w[3], 1), (w[4], 2), (w[4], 1), (w[5], 2), (w[5], 1)]
        layers, c = [], in_channels
        for c_out, stride in plan:
            layers.append(conv_act(c, c_out, 3, stride))
            c = c_out
        self.layers = nn.ModuleList(layers)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        taps = {}
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i in self.TAPS:
                taps[i] = x
        return tuple(taps[i] for i in self.TAPS)


class Residual(nn.Module):
    def __init__(self, c: int):
        super().__init__()
        self.reduce = conv_act(c, c // 2, 1)
        self.expand = conv_act(c // 2, c, 3)

    def forward(self, x):
        return x + self.expand(self.reduce(x))


class CameraEncoder(nn.Module):
    """Darknet-style residual backbone: stem, then five downsampling stages."""

    def __init__(self, stem: int, widths: tuple[int, ...], blocks: tuple[int, ...]):
        super().__init__()
        self.stem = conv_act(3, stem, 3)
        stages, c = [], stem
        for width, n in zip(widths, blocks):
            stages.append(nn.Sequential(conv_act(c, width, 3, 2), *[Residual(width) for _ in range(n)]))
            c = width
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats[4], feats[3], feats[2]


class PCD(nn.Module):
    """Parallel cross difference: subtract map features, then four convs down to c/2."""

    def __init__(self, channels: int):
        super().__init__()
        half = channels // 2
        self.convs = nn.Sequential(
            conv_act(channels, half), conv_act(half, half), conv_act(half, half), conv_act(half, half),
        )

    @staticmethod
    def difference(f_cam: torch.Tensor, f_other: torch.Tensor) -> torch.Tensor:
        if f_cam.shape != f_other.shape:
            raise ShapeError(f"PCD inputs differ in shape: {tuple(f_cam.shape)} vs {tuple(f_other.shape)}")
        return f_cam - f_other

    def forward(self, f_cam: torch.Tensor, f_other: torch.Tensor) -> torch.Tensor:
        return self.convs(self.difference(f_cam, f_other))


class FP(nn.Module):
    """Feature propagation: 2x nearest upsample, concat camera features, one conv."""

    def __init__(self, coarse_channels: int, fine_channels: int):
        super().__init__()
        self.conv = conv_act(coarse_channels + fine_channels, fine_channels)

    def forward(self, f_coarse: torch.Tensor, f_cam_finer: torch.Tensor) -> torch.Tensor:
        up = F.interpolate(f_coarse, scale_factor=2, mode="nearest")
        if up.shape[-2:] != f_cam_finer.shape[-2:] or up.shape[0] != f_cam_finer.shape[0]:
            raise ShapeError(
                f"FP cannot join {tuple(f_coarse.shape)} with {tuple(f_cam_finer.shape)}")
        return self.conv(torch.cat([up, f_cam_finer], dim=1))


class FD(nn.Module):
    """Feature decoder: 3x3 conv c/2 -> c, then 1x1 conv to the prediction channels."""

    def __init__(self, half_channels: int):
        super().__init__()
        self.half_channels = half_channels
        self.lift = conv_act(half_channels, 2 * half_channels)
        self.pred = nn.Conv2d(2 * half_channels, PRED_CHANNELS, 1)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.shape[1] != self.half_channels:
            raise ShapeError(f"FD expects {self.half_channels} channels, got {f.shape[1]}")
        return self.pred(self.lift(f))


class ConvLSTMCell(nn.Module):
    """ConvLSTM with layer-normalized candidate/cell and ELU in place of tanh."""

    def __init__(self, in_channels: int, hidden: int, kernel: int = 3):
        super().__init__()
        self.hidden = hidden
        self.gates = nn.Conv2d(in_channels + hidden, 4 * hidden, kernel, padding=kernel // 2)

    def forward(self, x, state):
        h, c = state
        i, f, o, g = torch.chunk(self.gates(torch.cat([x, h], dim=1)), 4, dim=1)
        g = F.elu(F.layer_norm(g, g.shape[1:]))
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * g
        c = F.layer_norm(c, c.shape[1:])
        h = torch.sigmoid(o) * F.elu(c)
        return h, (h, c)


@dataclass
class TemporalState:
    hidden: torch.Tensor
    cell: torch.Tensor

    def detach(self) -> "TemporalState":
        return TemporalState(self.hidden.detach(), self.cell.detach())


@dataclass
class ForwardResult:
    predictions: list[torch.Tensor]
    pcd_features: list[torch.Tensor] = field(default_factory=list)


class DiffNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        plan = cfg.plan
        self.raster_encoder = RasterEncoder(cfg.raster_channels, plan["raster_widths"])
        self.camera_encoder = CameraEncoder(plan["camera_stem"], plan["camera_widths"], plan["camera_blocks"])
        taps = cfg.tap_channels
        self.pcd = nn.ModuleList(PCD(c) for c in taps)
        self.fp = nn.ModuleList([FP(taps[0] // 2, taps[1]), FP(taps[1] // 2, taps[2])])
        self.fd = nn.ModuleList(FD(c // 2) for c in taps)
        self.lstm = ConvLSTMCell(taps[0] // 2, taps[0] // 2) if cfg.temporal else None
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.1, nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)
        for fd in self.fd:
            nn.init.normal_(fd.pred.weight, std=0.01)
            with torch.no_grad():
                bias = fd.pred.bias.view(NUM_ANCHORS, NUM_CLASSES + 5)
                bias.zero_()
                bias[:, 4] = CONF_BIAS_INIT

    def _check_inputs(self, image: torch.Tensor, raster: torch.Tensor) -> None:
        n = self.cfg.input_size
        if image.dim() != 4 or image.shape[1] != 3 or tuple(image.shape[-2:]) != (n, n):
            raise ShapeError(f"image must be Bx3x{n}x{n}, got {tuple(image.shape)}")
        if raster.dim() != 4 or raster.shape[1] != self.cfg.raster_channels or tuple(raster.shape[-2:]) != (n, n):
            raise ShapeError(
                f"raster must be Bx{self.cfg.raster_channels}x{n}x{n}, got {tuple(raster.shape)}")
        if image.shape[0] != raster.shape[0]:
            raise ShapeError("image and raster batch sizes differ")

    def encode(self, image, raster):
        self._check_inputs(image, raster)
        return self.camera_encoder(image), self.raster_encoder(raster)

    def _decode_path(self, x0, cams, rasters, pcd_feats):
        outs = [self.fd[0](x0)]
        x = x0
        for s in (1, 2):
            x = self.pcd[s](self.fp[s - 1](x, cams[s]), rasters[s])
            pcd_feats.append(x)
            outs.append(self.fd[s](x))
        return outs

    def forward(self, image: torch.Tensor, raster: torch.Tensor, return_features: bool = False):
        """Single-frame prediction: three tensors ``B x 24 x S x S``, coarse to fine."""
        cams, rasters = self.encode(image, raster)
        x0 = self.pcd[0](cams[0], rasters[0])
        feats = [x0]
        outs = self._decode_path(x0, cams, rasters, feats)
        if return_features:
            return ForwardResult(outs, feats)
        return outs

    def initial_state(self, batch: int, dtype=None, device=None) -> TemporalState:
        s = self.cfg.grid_sizes[0]
        c = self.cfg.tap_channels[0] // 2
        p = next(self.parameters())
        z = torch.zeros(batch, c, s, s, dtype=dtype or p.dtype, device=device or p.device)
        return TemporalState(z, z.clone())

    def step(self, image, raster, state: TemporalState | None, return_features: bool = False):
        """One frame of the recurrent model; returns (predictions, new state)."""
        if self.lstm is None:
            raise RuntimeError("model was built without the temporal module")
        cams, rasters = self.encode(image, raster)
        if state is None:
            state = self.initial_state(image.shape[0], image.dtype, image.device)
        x0 = self.pcd[0](cams[0], rasters[0])
        h, (hid, cell) = self.lstm(x0, (state.hidden, state.cell))
        feats = [h]
        outs = self._decode_path(h, cams, rasters, feats)
        new_state = TemporalState(hid, cell)
        if return_features:
            return ForwardResult(outs, feats), new_state
        return outs, new_state

    def forward_temporal(self, images: torch.Tensor, rasters: torch.Tensor,
                         state: TemporalState | None = None):
        """Run ``B x T`` clips frame by frame; returns per-frame predictions and the final state."""
        if images.dim() != 5 or rasters.dim() != 5 or images.shape[:2] != rasters.shape[:2]:
            raise ShapeError("temporal inputs must be B x T x C x H x W with matching B, T")
        preds = []
        for t in range(images.shape[1]):
            out, state = self.step(images[:, t], rasters[:, t], state)
            preds.append(out)
        return preds, state


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
