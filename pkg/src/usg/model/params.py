"""Named parameter store and the per-component views built from it.

Parameters live in a flat ``{name: matrix}`` mapping so they serialise
straight into the USGF manifest format. Every matrix is drawn from its own
seeded stream, keyed by name, uniform in +-1/sqrt(fan_in).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Mapping

import numpy as np

from ..graph import Modality
from ..tensor import uniform_init
from .config import ModelConfig
from .layers import MLP, Attention, Linear

ALL_MODALITIES = (Modality.TEXT, Modality.IMAGE, Modality.VIDEO, Modality.POINT3D)

RPC_BLOCKS = ("cross_sub", "cross_obj", "self_sub", "self_obj")


def _linear_shapes(prefix: str, d_in: int, d_out: int) -> dict:
    return {f"{prefix}.weight": ((d_in, d_out), d_in), f"{prefix}.bias": ((1, d_out), d_in)}


def _attention_shapes(prefix: str, d: int) -> dict:
    out = {}
    for part in "qkv":
        out.update(_linear_shapes(f"{prefix}.{part}", d, d))
    return out


def _mlp_shapes(prefix: str, d_in: int, hidden: int, d_out: int) -> dict:
    return {**_linear_shapes(f"{prefix}.0", d_in, hidden), **_linear_shapes(f"{prefix}.1", hidden, d_out)}


def param_shapes(config: ModelConfig, modalities: Iterable = ALL_MODALITIES) -> dict[str, tuple]:
    """``name -> ((rows, cols), fan_in)`` for every parameter of the model."""
    mods = sorted({Modality(m) for m in modalities}, key=lambda m: m.priority)
    d, h = config.embed_dim, config.hidden
    shapes: dict[str, tuple] = {}
    for m in mods:
        shapes[f"queries.{m.value}"] = ((config.queries_for(m), d), d)
        shapes.update(_mlp_shapes(f"head.{m.value}.mask", d, h, d))
        shapes.update(_mlp_shapes(f"rpc.{m.value}.proj.sub", d, h, d))
        shapes.update(_mlp_shapes(f"rpc.{m.value}.proj.obj", d, h, d))
        for layer in range(config.rpc_layers):
            for block in RPC_BLOCKS:
                shapes.update(_attention_shapes(f"rpc.{m.value}.{layer}.{block}", d))
    for layer in range(config.mask_decoder_layers):
        shapes.update(_attention_shapes(f"decoder.{layer}", d))
    if Modality.VIDEO in mods:
        shapes.update(_attention_shapes("temporal", d))
    for a, b in permutations(mods, 2):
        shapes.update(_linear_shapes(f"assoc.{a.value}->{b.value}", d, d))
    k = config.associator_kernel
    for layer in range(config.associator_layers):
        shapes[f"assoc.filter.{layer}.kernel"] = ((k, k), k * k)
        shapes[f"assoc.filter.{layer}.bias"] = ((1, 1), k * k)
    for layer in range(config.relation_decoder_layers):
        shapes.update(_attention_shapes(f"rel.{layer}.cross", d))
        shapes.update(_attention_shapes(f"rel.{layer}.self", d))
        shapes.update(_mlp_shapes(f"rel.{layer}.ffn", d, config.ffn, d))
    return shapes


def init_params(config: ModelConfig, seed: int, modalities: Iterable = ALL_MODALITIES) -> dict[str, np.ndarray]:
    return {name: uniform_init(seed, name, rows, cols, fan_in)
            for name, ((rows, cols), fan_in) in sorted(param_shapes(config, modalities).items())}


def check_params(params: Mapping[str, np.ndarray], config: ModelConfig, modalities: Iterable) -> list[str]:
    problems = []
    for name, (shape, _) in param_shapes(config, modalities).items():
        if name not in params:
            problems.append(f"missing parameter {name!r}")
        elif tuple(np.shape(params[name])) != tuple(shape):
            problems.append(f"parameter {name!r} has shape {np.shape(params[name])}, expected {shape}")
    return problems


# -- views -------------------------------------------------------------------

def linear(params: Mapping, prefix: str) -> Linear:
    return Linear(params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def mlp(params: Mapping, prefix: str) -> MLP:
    return MLP(linear(params, f"{prefix}.0"), linear(params, f"{prefix}.1"))


def attention(params: Mapping, prefix: str) -> Attention:
    return Attention(linear(params, f"{prefix}.q"), linear(params, f"{prefix}.k"), linear(params, f"{prefix}.v"))


@dataclass(frozen=True)
class MaskDecoderParams:
    layers: tuple[Attention, ...]
    mask_head: MLP


@dataclass(frozen=True)
class AssociatorProjections:
    """``forward`` maps the first set into the second's space; ``backward`` the reverse."""

    forward: Linear
    backward: Linear


@dataclass(frozen=True)
class ConvLayer:
    kernel: np.ndarray
    bias: float


@dataclass(frozen=True)
class Projector:
    subject: MLP
    object: MLP


@dataclass(frozen=True)
class RPCLayer:
    cross_sub: Attention
    cross_obj: Attention
    self_sub: Attention
    self_obj: Attention


@dataclass(frozen=True)
class RelationLayer:
    cross: Attention
    self_attn: Attention
    ffn: MLP


def mask_decoder_params(params: Mapping, config: ModelConfig, modality) -> MaskDecoderParams:
    m = Modality(modality).value
    return MaskDecoderParams(tuple(attention(params, f"decoder.{l}") for l in range(config.mask_decoder_layers)),
                             mlp(params, f"head.{m}.mask"))


def associator_projections(params: Mapping, a, b) -> AssociatorProjections:
    a, b = Modality(a).value, Modality(b).value
    return AssociatorProjections(linear(params, f"assoc.{a}->{b}"), linear(params, f"assoc.{b}->{a}"))


def associator_filter(params: Mapping, config: ModelConfig) -> tuple[ConvLayer, ...]:
    return tuple(ConvLayer(params[f"assoc.filter.{l}.kernel"], float(params[f"assoc.filter.{l}.bias"][0, 0]))
                 for l in range(config.associator_layers))


def projector(params: Mapping, modality) -> Projector:
    m = Modality(modality).value
    return Projector(mlp(params, f"rpc.{m}.proj.sub"), mlp(params, f"rpc.{m}.proj.obj"))


def rpc_layers(params: Mapping, config: ModelConfig, modality) -> tuple[RPCLayer, ...]:
    m = Modality(modality).value
    return tuple(RPCLayer(*(attention(params, f"rpc.{m}.{l}.{b}") for b in RPC_BLOCKS))
                 for l in range(config.rpc_layers))


def relation_layers(params: Mapping, config: ModelConfig) -> tuple[RelationLayer, ...]:
    return tuple(RelationLayer(attention(params, f"rel.{l}.cross"), attention(params, f"rel.{l}.self"),
                               mlp(params, f"rel.{l}.ffn"))
                 for l in range(config.relation_decoder_layers))
