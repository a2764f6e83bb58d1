"""Neural-computation substrate: differentiable blocks, optimizer, parameter store.

Everything is built on torch tensors. Two properties are enforced beyond
what torch gives us for free:

* order-invariant reductions (`ordered_sum`, `exact_softmax`) so that
  token-permutation equivariance of attention holds bit-for-bit, not just
  approximately;
* finiteness checks after every block (training should fail loudly, not
  propagate NaNs into a checkpoint).

Training runs in float32; calling ``.double()`` on any block switches it to
the 64-bit verification mode used by gradient checks.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from typing import Iterator

import torch
from torch import nn

from .errors import ConfigError, FingerprintMismatch

WEIGHTS_MAGIC = b"RPMW"
WEIGHTS_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# exact reductions
# ---------------------------------------------------------------------------

def ordered_sum(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Sum along ``dim`` in ascending value order.

    Float addition is commutative but not associative, so a plain sum over a
    permuted axis is not bit-stable. Sorting first makes the reduction a pure
    function of the multiset of values, which is what permutation-invariance
    tests compare.
    """
    return torch.sort(x, dim=dim).values.sum(dim=dim)


def exact_softmax(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Numerically stable softmax whose normalizer is an ordered sum."""
    shifted = x - x.amax(dim=dim, keepdim=True)
    e = shifted.exp()
    return e / ordered_sum(e, dim=dim).unsqueeze(dim)


def check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    """Raise if a block emitted NaN/Inf; returns the input unchanged."""
    if not torch.isfinite(x).all():
        raise FloatingPointError(f"non-finite values after {where}")
    return x


# ---------------------------------------------------------------------------
# block configuration
# ---------------------------------------------------------------------------

@dataclass
class BlockConfig:
    """Hyperparameters shared by the differentiable blocks.

    A single config type serves the three block families; each block reads
    the fields it needs. ``validate`` enforces positive extents and that the
    head count divides the model width.
    """

    width: int = 64
    heads: int = 4
    depth: int = 2
    dropout: float = 0.1
    pe_mode: str = "learnable"  # "learnable" | "zero"
    # conv blocks
    in_channels: int = 1
    out_channels: int = 32
    kernel_size: int = 3
    stride: int = 1
    # bottleneck mlp
    d_in: int = 64
    hidden: int = 32
    d_out: int = 64
    residual: bool = False

    def validate(self) -> "BlockConfig":
        extents = {
            "width": self.width, "heads": self.heads, "depth": self.depth,
            "in_channels": self.in_channels, "out_channels": self.out_channels,
            "kernel_size": self.kernel_size, "stride": self.stride,
            "d_in": self.d_in, "hidden": self.hidden, "d_out": self.d_out,
        }
        for name, value in extents.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.width % self.heads != 0:
            raise ConfigError(
                f"heads ({self.heads}) must divide width ({self.width})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.pe_mode not in ("learnable", "zero"):
            raise ConfigError(f"unknown pe_mode {self.pe_mode!r}")
        if self.residual and self.d_in != self.d_out:
            raise ConfigError("residual bottleneck requires d_in == d_out")
        return self


# ---------------------------------------------------------------------------
# transformer block
# ---------------------------------------------------------------------------

class MultiHeadSelfAttention(nn.Module):
    """Self-attention with order-invariant softmax and value aggregation."""

    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        if width % heads != 0:
            raise ConfigError(f"heads ({heads}) must divide width ({width})")
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, tokens, width = x.shape
        qkv = self.qkv(x).reshape(batch, tokens, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each [batch, heads, tokens, hd]
        logits = q @ k.transpose(-2, -1) / self.head_dim ** 0.5
        attn = self.drop(exact_softmax(logits, dim=-1))
        # contraction over the key axis, ordered so token permutations
        # permute outputs bit-exactly
        ctx = ordered_sum(attn.unsqueeze(-1) * v.unsqueeze(-3), dim=-2)
        ctx = ctx.transpose(1, 2).reshape(batch, tokens, width)
        return self.drop(self.proj(ctx))


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + GELU MLP (expansion 4), both residual."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.norm1 = nn.LayerNorm(cfg.width)
        self.attn = MultiHeadSelfAttention(cfg.width, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.width)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.width, 4 * cfg.width),
            nn.GELU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(4 * cfg.width, cfg.width),
            nn.Dropout(cfg.dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.width:
            raise ConfigError(
                f"expected width {self.cfg.width}, got {x.shape[-1]}")
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        check_finite(x, "transformer_block")
        return x.squeeze(0) if squeeze else x


class TransformerStack(nn.Module):
    """``cfg.depth`` transformer blocks applied in sequence."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg) for _ in range(cfg.depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x


# ---------------------------------------------------------------------------
# convolutional block
# ---------------------------------------------------------------------------

class ResidualConvBlock(nn.Module):
    """Two convolutions with a skip path, GroupNorm + ReLU.

    GroupNorm instead of BatchNorm keeps forward passes deterministic per
    sample (no running statistics).
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        pad = cfg.kernel_size // 2
        groups = min(4, cfg.out_channels)
        self.conv1 = nn.Conv2d(cfg.in_channels, cfg.out_channels,
                               cfg.kernel_size, cfg.stride, pad)
        self.norm1 = nn.GroupNorm(groups, cfg.out_channels)
        self.conv2 = nn.Conv2d(cfg.out_channels, cfg.out_channels,
                               cfg.kernel_size, 1, pad)
        self.norm2 = nn.GroupNorm(groups, cfg.out_channels)
        if cfg.in_channels != cfg.out_channels or cfg.stride != 1:
            self.skip = nn.Conv2d(cfg.in_channels, cfg.out_channels, 1,
                                  cfg.stride)
        else:
            self.skip = nn.Identity()
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4:
            raise ConfigError(f"expected [batch, c, h, w], got {tuple(x.shape)}")
        if x.shape[1] != self.cfg.in_channels:
            raise ConfigError(
                f"expected {self.cfg.in_channels} channels, got {x.shape[1]}")
        if min(x.shape[2], x.shape[3]) < self.cfg.stride:
            raise ConfigError(
                f"spatial extents {tuple(x.shape[2:])} too small for "
                f"stride {self.cfg.stride}")
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        out = self.act(h + self.skip(x))
        return check_finite(out, "residual_conv_block")


# ---------------------------------------------------------------------------
# bottleneck mlp
# ---------------------------------------------------------------------------

class BottleneckMLP(nn.Module):
    """Narrow-wide-narrow (or just narrow) projection: Linear-GELU-Linear.

    With ``residual=True`` (square only) the block computes x + f(x), and
    ``init_identity`` zeroes f so the block is exactly the identity map.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.fc1 = nn.Linear(cfg.d_in, cfg.hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(cfg.hidden, cfg.d_out)

    def init_identity(self) -> "BottleneckMLP":
        if not self.cfg.residual:
            raise ConfigError("identity init requires a residual bottleneck")
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)
        nn.init.zeros_(self.fc1.bias)
        return self

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.d_in:
            raise ConfigError(
                f"expected input width {self.cfg.d_in}, got {x.shape[-1]}")
        out = self.fc2(self.act(self.fc1(x)))
        if self.cfg.residual:
            out = x + out
        return check_finite(out, "bottleneck_mlp")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: dict | None,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, torch.Tensor], dict]:
    """One in-place ADAM update with bias correction.

    ``state`` is created on first use; pass the returned state back in on
    subsequent steps. Raises if any parameter lacks a gradient.
    """
    missing = [name for name in params if name not in grads]
    if missing:
        raise ConfigError(f"missing gradient for parameters: {missing}")
    if state is None:
        state = {"step": 0, "m": {}, "v": {}}
    state["step"] += 1
    t = state["step"]
    beta1, beta2 = betas
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ConfigError(
                    f"gradient shape {tuple(g.shape)} does not match "
                    f"parameter {name!r} shape {tuple(p.shape)}")
            m = state["m"].setdefault(name, torch.zeros_like(p))
            v = state["v"].setdefault(name, torch.zeros_like(p))
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.add_(-lr * (m / bc1) / ((v / bc2).sqrt() + eps))
    return params, state


class Adam:
    """Thin stateful wrapper over ``adam_step`` for torch modules."""

    def __init__(self, module: nn.Module, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.module = module
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict | None = None

    def zero_grad(self) -> None:
        for p in self.module.parameters():
            p.grad = None

    def step(self) -> None:
        params = {n: p for n, p in self.module.named_parameters()
                  if p.requires_grad}
        grads = {n: p.grad for n, p in params.items() if p.grad is not None}
        _, self.state = adam_step(params, grads, self.state, self.lr,
                                  self.betas, self.eps)


# ---------------------------------------------------------------------------
# parameter store and weights file
# ---------------------------------------------------------------------------

def architecture_fingerprint(hyperparams: dict) -> str:
    """Stable hash of an architecture's hyperparameter dict."""
    canon = json.dumps(hyperparams, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class ParameterStore:
    """Named parameter tensors plus provenance metadata.

    The on-disk format is a single container: magic, header length, JSON
    header {format version, fingerprint, version tag, tensor index}, then
    the raw 32-bit little-endian tensor payload.
    """

    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    fingerprint: str = ""
    version: str = "1"

    @classmethod
    def from_module(cls, module: nn.Module, fingerprint: str,
                    version: str = "1") -> "ParameterStore":
        tensors = {name: t.detach().cpu().to(torch.float32).clone()
                   for name, t in module.state_dict().items()}
        return cls(tensors=tensors, fingerprint=fingerprint, version=version)

    def subset(self, prefix: str) -> "ParameterStore":
        picked = {n: t for n, t in self.tensors.items()
                  if n.startswith(prefix)}
        if not picked:
            raise ConfigError(f"no parameters under prefix {prefix!r}")
        return ParameterStore(tensors=picked, fingerprint=self.fingerprint,
                              version=self.version)

    def load_into(self, module: nn.Module, expected_fingerprint: str,
                  subset_import: bool = False) -> list[str]:
        """Copy stored tensors into ``module``; returns the names loaded.

        A fingerprint mismatch is rejected unless ``subset_import`` is set,
        in which case only names present in both sides are copied (shapes
        must still agree).
        """
        if self.fingerprint != expected_fingerprint and not subset_import:
            raise FingerprintMismatch(
                f"store fingerprint {self.fingerprint} != module "
                f"fingerprint {expected_fingerprint} (set subset_import to "
                f"transfer a subset)")
        target = module.state_dict()
        loaded = []
        with torch.no_grad():
            for name, tensor in self.tensors.items():
                if name not in target:
                    if subset_import:
                        continue
                    raise ConfigError(f"unknown parameter {name!r}")
                if tuple(target[name].shape) != tuple(tensor.shape):
                    raise ConfigError(
                        f"shape mismatch for {name!r}: "
                        f"{tuple(tensor.shape)} vs {tuple(target[name].shape)}")
                target[name].copy_(tensor.to(target[name].dtype))
                loaded.append(name)
        if not loaded:
            raise ConfigError("no overlapping parameters to import")
        return loaded

    def save(self, path) -> None:
        index = []
        payload = bytearray()
        for name in sorted(self.tensors):
            t = self.tensors[name].detach().cpu().to(torch.float32).contiguous()
            raw = t.numpy().astype("<f4").tobytes()
            index.append({"name": name, "shape": list(t.shape),
                          "offset": len(payload), "nbytes": len(raw)})
            payload.extend(raw)
        header = json.dumps({
            "format_version": WEIGHTS_FORMAT_VERSION,
            "fingerprint": self.fingerprint,
            "version": self.version,
            "tensors": index,
        }).encode()
        with open(path, "wb") as f:
            f.write(WEIGHTS_MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(bytes(payload))

    @classmethod
    def load(cls, path) -> "ParameterStore":
        import numpy as np

        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != WEIGHTS_MAGIC:
                raise ConfigError(f"not a weights file: {path}")
            (hlen,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(hlen).decode())
            if header["format_version"] != WEIGHTS_FORMAT_VERSION:
                raise ConfigError(
                    f"unsupported weights format {header['format_version']}")
            payload = f.read()
        tensors = {}
        for entry in header["tensors"]:
            raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
            tensors[entry["name"]] = torch.from_numpy(arr)
        return cls(tensors=tensors, fingerprint=header["fingerprint"],
                   version=header["version"])


def named_leaf_tensors(module: nn.Module) -> Iterator[tuple[str, torch.Tensor]]:
    yield from module.named_parameters()


def config_dict(cfg: BlockConfig) -> dict:
    return asdict(cfg)
