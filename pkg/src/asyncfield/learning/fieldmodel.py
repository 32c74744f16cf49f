"""Trainable field: provider heads plus the global affinity table."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import FieldInstance, KernelConfig, LabelSpace, TermWeights
from .provider import LinearProvider, variant_flags


@dataclass
class FieldModel:
    space: LabelSpace
    provider: LinearProvider
    mu: np.ndarray
    kernel_cfg: KernelConfig = field(default_factory=KernelConfig)
    term_weights: TermWeights = field(default_factory=TermWeights)

    @classmethod
    def init(cls, space: LabelSpace, feature_dim: int, variant: str = "full",
             kernel_cfg: KernelConfig | None = None, term_weights: TermWeights | None = None,
             seed: int = 0, **provider_kw) -> "FieldModel":
        prov = LinearProvider(space, feature_dim, variant=variant, seed=seed, **provider_kw)
        return cls(space, prov, np.zeros((space.n_object, space.n_object)),
                   kernel_cfg or KernelConfig(), term_weights or TermWeights())

    @property
    def variant(self) -> str:
        return self.provider.variant

    @property
    def mu_trainable(self) -> bool:
        return variant_flags(self.variant)["pairwise"]

    def field(self, video, rows=None) -> FieldInstance:
        """Potentials of ``video`` (optionally only ``rows``), positioned by frame index."""
        feats = video.features if rows is None else video.features[rows]
        pos = video.frame_indices if rows is None else video.frame_indices[rows]
        t = self.provider.tables(feats)
        return FieldInstance(self.space, t["op"], t["ap"], t["os"], t["coap"], t["xi"],
                             self.mu.copy(), self.kernel_cfg, pos, self.term_weights)

    def apply_mu(self, d_mu, lr: float) -> None:
        if self.mu_trainable:
            self.mu += lr * d_mu

    def copy(self) -> "FieldModel":
        return FieldModel(self.space, self.provider.copy(), self.mu.copy(), self.kernel_cfg,
                          self.term_weights)
