"""Small class-conditional U-Net noise predictor.

Conditioning: sinusoidal timestep features and a learned class embedding are
summed into one conditioning vector injected into every residual block. The
class table can be grown in place (new rows copy their parent class) so a
finetune can add subtype codes without disturbing trained rows.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def timestep_features(
    t: torch.Tensor, dim: int, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Sinusoidal features for integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype) / max(half - 1, 1)
    )
    angles = t.to(dtype)[:, None] * freqs[None, :]
    feats = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
    if dim % 2:
        feats = torch.cat([feats, torch.zeros_like(feats[:, :1])], dim=1)
    return feats


def _norm_groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_norm_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_norm_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(_norm_groups(channels), channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.out = nn.Conv2d(channels, channels, 1)
        self.scale = channels ** -0.5

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(dim=1)
        attn = torch.softmax(q.transpose(1, 2) @ k * self.scale, dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.out(out)


class CondUNet(nn.Module):
    """Noise predictor eps(x_t, t, class)."""

    def __init__(
        self,
        num_classes: int,
        base_channels: int = 24,
        channel_mults: tuple[int, ...] = (1, 2, 3),
        emb_dim: int = 96,
    ):
        super().__init__()
        self.num_classes = num_classes
        self.base_channels = base_channels
        self.channel_mults = tuple(channel_mults)
        self.emb_dim = emb_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.class_embed = nn.Embedding(num_classes, emb_dim)

        chans = [base_channels * m for m in self.channel_mults]
        self.stem = nn.Conv2d(3, chans[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i, ch in enumerate(chans):
            in_ch = chans[max(i - 1, 0)]
            self.down_blocks.append(
                nn.ModuleList([ResBlock(in_ch, ch, emb_dim), ResBlock(ch, ch, emb_dim)])
            )
            self.downsamples.append(
                nn.Conv2d(ch, ch, 3, stride=2, padding=1) if i < len(chans) - 1 else nn.Identity()
            )

        self.mid1 = ResBlock(chans[-1], chans[-1], emb_dim)
        self.mid_attn = SelfAttention2d(chans[-1])
        self.mid2 = ResBlock(chans[-1], chans[-1], emb_dim)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(len(chans))):
            ch = chans[i]
            self.up_blocks.append(
                nn.ModuleList(
                    [ResBlock(ch * 2, ch, emb_dim), ResBlock(ch, ch, emb_dim)]
                )
            )
            self.upsamples.append(
                nn.Conv2d(chans[min(i + 1, len(chans) - 1)], ch, 3, padding=1)
                if i < len(chans) - 1
                else nn.Identity()
            )

        out_ch = chans[0]
        self.out_norm = nn.GroupNorm(_norm_groups(out_ch), out_ch)
        self.out_conv = nn.Conv2d(out_ch, 3, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(timestep_features(t, self.emb_dim, x.dtype)) + self.class_embed(y)

        h = self.stem(x)
        skips = []
        for blocks, down in zip(self.down_blocks, self.downsamples):
            for block in blocks:
                h = block(h, emb)
            skips.append(h)
            h = down(h)

        h = self.mid2(self.mid_attn(self.mid1(h, emb)), emb)

        for i, (blocks, up) in enumerate(zip(self.up_blocks, self.upsamples)):
            if i > 0:
                h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            skip = skips.pop()
            h = torch.cat([h, skip], dim=1)
            h = blocks[0](h, emb)
            h = blocks[1](h, emb)

        return self.out_conv(F.silu(self.out_norm(h)))

    def grow_class_table(self, new_num_classes: int, parent_rows: dict[int, int]) -> None:
        """Extend the class embedding; row j copies parent_rows[j]'s weights.

        Existing rows keep their values and optimizer-independent identity.
        """
        if new_num_classes < self.num_classes:
            raise ValueError("class table can only grow")
        old = self.class_embed
        new = nn.Embedding(new_num_classes, self.emb_dim)
        with torch.no_grad():
            new.weight[: self.num_classes] = old.weight
            for row, parent in parent_rows.items():
                if not (self.num_classes <= row < new_num_classes):
                    raise ValueError(f"new row {row} out of range")
                new.weight[row] = old.weight[parent]
        self.class_embed = new
        self.num_classes = new_num_classes
