from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Mapping

from ..graph import Modality


@dataclass(frozen=True)
class ModelConfig:
    """Sizes and thresholds for the parser.

    Defaults are the full-size settings (100 queries, 256-d embeddings,
    9/4/6 decoder layers, a 3-layer 3x3 associator filter). Tests and the demo
    usually shrink them.
    """

    embed_dim: int = 256
    num_queries: int = 100
    queries_per_modality: Mapping[str, int] = field(default_factory=dict)
    mask_decoder_layers: int = 9
    num_scales: int = 3
    rpc_layers: int = 4
    relation_decoder_layers: int = 6
    associator_layers: int = 3
    associator_kernel: int = 3
    mlp_hidden: int | None = None
    ffn_hidden: int | None = None
    top_k_pairs: int = 100
    association_threshold: float = 0.5
    mask_threshold: float = 0.5

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {self.embed_dim}")
        counts = {f.name: getattr(self, f.name) for f in fields(self)
                  if f.name in ("num_queries", "mask_decoder_layers", "num_scales", "rpc_layers",
                                "relation_decoder_layers", "associator_layers", "top_k_pairs")}
        counts.update({f"queries_per_modality[{k}]": v for k, v in self.queries_per_modality.items()})
        for name, value in counts.items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        if self.associator_kernel < 1 or self.associator_kernel % 2 == 0:
            raise ValueError(f"associator_kernel must be odd, got {self.associator_kernel}")
        if not 0.0 <= self.association_threshold <= 1.0:
            raise ValueError(f"association_threshold must lie in [0, 1], got {self.association_threshold}")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ValueError(f"mask_threshold must lie in (0, 1), got {self.mask_threshold}")
        for key in self.queries_per_modality:
            Modality(key)

    @property
    def hidden(self) -> int:
        return self.mlp_hidden or self.embed_dim

    @property
    def ffn(self) -> int:
        return self.ffn_hidden or 2 * self.embed_dim

    def queries_for(self, modality) -> int:
        return int(self.queries_per_modality.get(Modality(modality).value, self.num_queries))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["queries_per_modality"] = dict(self.queries_per_modality)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> ModelConfig:
        return ModelConfig.from_dict({**self.to_dict(), **changes})
