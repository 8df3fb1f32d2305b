"""The full tracker network: backbone -> fusion encoder -> decoder -> heads."""
from __future__ import annotations

import numpy as np

from .attention import AttentionConfig
from .backbone import PatchBackbone
from .config import ModelConfig
from .fusion import ConcatEncoder, CrossEncoder, Decoder, TokenSet
from .heads import Head, ResponseMap
from .nn import Module
from .posenc import SEARCH, TEMPLATE


class TrackerNet(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        att = AttentionConfig(cfg.d_model, cfg.n_heads)
        grids = {TEMPLATE: cfg.template_grid, SEARCH: cfg.search_grid}
        self.backbone = PatchBackbone(cfg.d_model, cfg.stride, cfg.backbone_depth, cfg.n_heads, rng)
        enc_cls = ConcatEncoder if cfg.fusion_mode == "concat" else CrossEncoder
        self.encoder = enc_cls(att, cfg.n_blocks, cfg.pe_mode, grids, rng)
        self.decoder = Decoder(att, cfg.pe_mode, grids, rng)
        self.head = Head(cfg.d_model, rng)
        self.assign_names()

    def parameter_groups(self) -> dict:
        """Top-level component name -> parameters (used for LR groups and reports)."""
        groups: dict = {}
        for name, p in self.named_parameters():
            groups.setdefault(name.split(".", 1)[0], []).append(p)
        return groups

    def embed_template(self, template: np.ndarray) -> TokenSet:
        return self.backbone(template, TEMPLATE)

    def forward_tokens(self, z: TokenSet, x: TokenSet) -> ResponseMap:
        z_out, x_out = self.encoder(z, x)
        feats = self.decoder(z_out, x_out)
        return self.head(feats)

    def __call__(self, template: np.ndarray, search: np.ndarray) -> ResponseMap:
        z = self.embed_template(template)
        x = self.backbone(search, SEARCH)
        return self.forward_tokens(z, x)
