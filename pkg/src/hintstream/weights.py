"""Weight bundles: seeded construction and golden-file serialisation.

Every tensor is derived from a named sub-seed, so two sessions built from
the same seed share bit-identical weights regardless of which conditioning
inputs they carry. A saved bundle is a directory of golden tensor files
plus a manifest listing one ``name<TAB>file`` entry per tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapter import ContextBlockStack, init_context_stack
from .attention import AttentionLayerWeights
from .conditioning import TemporalEncoder, init_temporal_encoder
from .config import EngineConfig
from .dit import BlockWeights, init_block_weights
from .errors import ConfigError
from .tensor import Tensor, derive_seed, gaussian_init, read_tensor, write_tensor


@dataclass
class TemporalDecoder:
    """Mirror of the temporal encoder: latent frames back to pixel frames.

    Pixel group t mixes latent frame t with the previous latent frame
    (the decode carry), so decoding is causal in latent time.
    """

    taps_current: Tensor   # [temporal_factor, model_dim, model_dim]
    taps_previous: Tensor  # [temporal_factor, model_dim, model_dim]
    out_proj: Tensor       # [model_dim, frame_channels]
    config: EngineConfig


def init_temporal_decoder(seed: int, name: str, config: EngineConfig) -> TemporalDecoder:
    return TemporalDecoder(
        taps_current=gaussian_init(
            (config.temporal_factor, config.model_dim, config.model_dim),
            derive_seed(seed, f"{name}.taps_current"), 0.5),
        taps_previous=gaussian_init(
            (config.temporal_factor, config.model_dim, config.model_dim),
            derive_seed(seed, f"{name}.taps_previous"), 0.5),
        out_proj=gaussian_init((config.model_dim, config.frame_channels),
                               derive_seed(seed, f"{name}.out_proj"), config.init_scale),
        config=config,
    )


@dataclass
class EngineWeights:
    dit_blocks: list[BlockWeights]
    context: ContextBlockStack
    encoder: TemporalEncoder
    decoder: TemporalDecoder
    config: EngineConfig


def build_weights(seed: int, config: EngineConfig, *, zero_projections: bool = True) -> EngineWeights:
    return EngineWeights(
        dit_blocks=[init_block_weights(seed, f"dit.block{i}", config)
                    for i in range(config.num_blocks)],
        context=init_context_stack(seed, config, zero_projections=zero_projections),
        encoder=init_temporal_encoder(seed, "encoder", config),
        decoder=init_temporal_decoder(seed, "decoder", config),
        config=config,
    )


def _block_entries(prefix: str, block: BlockWeights):
    yield f"{prefix}.norm1_gain", block.norm1_gain
    yield f"{prefix}.wq", block.attn.wq
    yield f"{prefix}.wk", block.attn.wk
    yield f"{prefix}.wv", block.attn.wv
    yield f"{prefix}.wo", block.attn.wo
    yield f"{prefix}.norm2_gain", block.norm2_gain
    yield f"{prefix}.mlp_w1", block.mlp_w1
    yield f"{prefix}.mlp_w2", block.mlp_w2


def _all_entries(weights: EngineWeights):
    for i, block in enumerate(weights.dit_blocks):
        yield from _block_entries(f"dit.block{i}", block)
    yield "context.input_proj", weights.context.input_proj
    for j, block in enumerate(weights.context.blocks):
        yield from _block_entries(f"context.block{j}", block)
    for target, proj in sorted(weights.context.projections.items()):
        yield f"context.proj{target}", proj
    yield "encoder.chan_proj", weights.encoder.chan_proj
    yield "encoder.taps", weights.encoder.taps
    yield "decoder.taps_current", weights.decoder.taps_current
    yield "decoder.taps_previous", weights.decoder.taps_previous
    yield "decoder.out_proj", weights.decoder.out_proj


def save_weights(weights: EngineWeights, directory) -> None:
    """Write one golden tensor file per weight plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, tensor in _all_entries(weights):
        fname = name.replace(".", "_") + ".tensor"
        write_tensor(directory / fname, tensor)
        lines.append(f"{name}\t{fname}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_weights(directory, config: EngineConfig) -> EngineWeights:
    """Rebuild a bundle from a manifest directory."""
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise ConfigError(f"no manifest.txt under {directory}")
    tensors: dict[str, Tensor] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, fname = line.split("\t")
        tensors[name] = read_tensor(directory / fname)

    def block(prefix: str) -> BlockWeights:
        return BlockWeights(
            norm1_gain=tensors[f"{prefix}.norm1_gain"],
            attn=AttentionLayerWeights(
                wq=tensors[f"{prefix}.wq"], wk=tensors[f"{prefix}.wk"],
                wv=tensors[f"{prefix}.wv"], wo=tensors[f"{prefix}.wo"]),
            norm2_gain=tensors[f"{prefix}.norm2_gain"],
            mlp_w1=tensors[f"{prefix}.mlp_w1"], mlp_w2=tensors[f"{prefix}.mlp_w2"])

    context = ContextBlockStack(
        input_proj=tensors["context.input_proj"],
        blocks=[block(f"context.block{j}") for j in range(len(config.injection_map))],
        projections={t: tensors[f"context.proj{t}"] for t in config.injection_map},
        config=config,
    )
    return EngineWeights(
        dit_blocks=[block(f"dit.block{i}") for i in range(config.num_blocks)],
        context=context,
        encoder=TemporalEncoder(chan_proj=tensors["encoder.chan_proj"],
                                taps=tensors["encoder.taps"], config=config),
        decoder=TemporalDecoder(taps_current=tensors["decoder.taps_current"],
                                taps_previous=tensors["decoder.taps_previous"],
                                out_proj=tensors["decoder.out_proj"], config=config),
        config=config,
    )
