"""Dual-branch Cartesian/polar network and its ablation variants.

Variants differ only in how the branches talk to each other:

``full``
    features cross in both directions after blocks 1-3;
``one_way``
    Cartesian features are warped into the polar branch, never back;
``single``
    one Cartesian block, warped and stacked onto the polar input of block 1;
``polar_only``
    no Cartesian branch.
"""

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn

from arcnet.netblocks import ProjectPool, ResidualBlock, Warp, upsample, upsample_alines

VARIANTS = ("full", "one_way", "single", "polar_only")
_ALIASES = {"one-way": "one_way", "polar": "polar_only", "polar-only": "polar_only"}


def canonical_variant(name):
    name = _ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {VARIANTS}")
    return name


@dataclass
class ArcNetConfig:
    variant: str = "full"
    height: int = 352
    width: int = 352
    rho: int = 176
    theta: int = 224
    polar_features: list = field(default_factory=lambda: [32, 64, 128, 256])
    cart_features: list = field(default_factory=lambda: [16, 32, 64, 128])
    downsampling: list = field(default_factory=lambda: [2, 2, 2, 1])
    n_classes: int = 3
    stack_depth: int = 3

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        self.polar_features = list(self.polar_features)
        self.cart_features = list(self.cart_features)
        self.downsampling = list(self.downsampling)
        if len(self.polar_features) != len(self.downsampling):
            raise ValueError("one downsampling factor per block is required")
        if [2 * c for c in self.cart_features] != self.polar_features:
            raise ValueError("Cartesian feature sizes must be half the polar ones")
        total = 1
        for d in self.downsampling[:-1]:
            total *= d
        if self.theta % total:
            raise ValueError(f"theta={self.theta} must be divisible by {total}")

    def to_dict(self):
        return asdict(self)

    def stage_shapes(self):
        """Per-block output grids: list of ((H_k, W_k), (rho_k, theta_k))."""
        shapes = []
        h, w, r, t = self.height, self.width, self.rho, self.theta
        for d in self.downsampling:
            h, w, r, t = (-(-h // d), -(-w // d), -(-r // d), -(-t // d))
            shapes.append(((h, w), (r, t)))
        return shapes


class InputPair(NamedTuple):
    cart: torch.Tensor  # (B, stack, H, W)
    polar: torch.Tensor  # (B, stack, rho, theta)


class ArcNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        v = config.variant
        pf, cf, ds = config.polar_features, config.cart_features, config.downsampling
        stages = config.stage_shapes()
        n_blocks = len(pf)
        self.cart_to_polar = v in ("full", "one_way")
        self.polar_to_cart = v == "full"

        self.polar_blocks = nn.ModuleList()
        self.cart_blocks = nn.ModuleList()
        self.to_polar_warps = nn.ModuleList()
        self.to_cart_warps = nn.ModuleList()

        depth = config.stack_depth
        if v == "single":
            (h1, w1), _ = stages[0]
            self.cart_blocks.append(ResidualBlock(depth, cf[0], ds[0], "zero"))
            self.single_warp = Warp("to_polar", (h1, w1), (config.rho, config.theta))
            polar_in = [depth + cf[0]] + pf[:-1]
        elif v == "polar_only":
            polar_in = [depth] + pf[:-1]
        else:
            polar_in = [depth] + [pf[k] + cf[k] for k in range(n_blocks - 1)]
            cart_in = [depth] + [
                cf[k] + (pf[k] if self.polar_to_cart else 0) for k in range(n_blocks - 2)
            ]
            # no Cartesian block at the last stage: nothing would consume its output
            for k in range(n_blocks - 1):
                self.cart_blocks.append(ResidualBlock(cart_in[k], cf[k], ds[k], "zero"))
            for k in range(n_blocks - 1):
                cart_hw, polar_hw = stages[k]
                self.to_polar_warps.append(Warp("to_polar", cart_hw, polar_hw))
                if self.polar_to_cart and k < n_blocks - 2:
                    self.to_cart_warps.append(Warp("to_cartesian", polar_hw, cart_hw))
        for k in range(n_blocks):
            self.polar_blocks.append(
                ResidualBlock(polar_in[k], pf[k], ds[k], "circular_theta")
            )
        self.head = ProjectPool(pf[-1] + pf[0], config.n_classes)
        self._check_stage_grids()

    def _check_stage_grids(self):
        stages = self.config.stage_shapes()
        for k, warp in enumerate(self.to_polar_warps):
            assert warp.src_hw == stages[k][0] and warp.dst_hw == stages[k][1]
        for k, warp in enumerate(self.to_cart_warps):
            assert warp.src_hw == stages[k][1] and warp.dst_hw == stages[k][0]

    def forward(self, cart, polar=None):
        if polar is None:
            cart, polar = cart
        cfg = self.config
        if cart.shape[-2:] != (cfg.height, cfg.width) and self.config.variant != "polar_only":
            raise ValueError(f"Cartesian input must be {cfg.height}x{cfg.width}, got {tuple(cart.shape[-2:])}")
        if polar.shape[-2:] != (cfg.rho, cfg.theta):
            raise ValueError(f"polar input must be {cfg.rho}x{cfg.theta}, got {tuple(polar.shape[-2:])}")

        if self.cart_to_polar:
            c = self.cart_blocks[0](cart)
            p = first = self.polar_blocks[0](polar)
            for k in range(1, len(self.polar_blocks)):
                p_in = torch.cat([p, self.to_polar_warps[k - 1](c)], dim=1)
                if k < len(self.cart_blocks):
                    c_in = c
                    if self.polar_to_cart:
                        c_in = torch.cat([c, self.to_cart_warps[k - 1](p)], dim=1)
                    c = self.cart_blocks[k](c_in)
                p = self.polar_blocks[k](p_in)
        else:
            p = polar
            if cfg.variant == "single":
                p = torch.cat([polar, self.single_warp(self.cart_blocks[0](cart))], dim=1)
            first = None
            for block in self.polar_blocks:
                p = block(p)
                if first is None:
                    first = p
        p = upsample(p, *first.shape[-2:], circular=True)
        logits = self.head(torch.cat([p, first], dim=1))
        return upsample_alines(logits, cfg.theta)


def build(variant="full", seed=0, **overrides):
    """Construct a model with deterministic initial parameters."""
    config = overrides.pop("config", None) or ArcNetConfig(variant=variant, **overrides)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ArcNet(config)
    return model


def parameter_report(model):
    counts = {"polar": 0, "cartesian": 0, "head": 0}
    for name, param in model.named_parameters():
        if name.startswith("polar_blocks"):
            counts["polar"] += param.numel()
        elif name.startswith("cart_blocks"):
            counts["cartesian"] += param.numel()
        else:
            counts["head"] += param.numel()
    counts["total"] = sum(counts.values())
    return counts
