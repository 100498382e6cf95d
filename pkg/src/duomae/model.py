"""Student/teacher multi-modal encoder, decoders, and heads at desk scale.

Architecture: a patch-level vision transformer and a token-level text
transformer feed a dual-stream fusion stack in which each stream runs
self-attention, cross-attention over the other stream, and a feed-forward
block per layer. Decoders reconstruct pixels (transformer) and tokens (MLP);
bias-free linear projectors map fused features to a low-dimensional latent;
linear heads score pair matching and per-modality class membership; a small
MLP head scores the joint representation.

All forwards are deterministic given weights and inputs when the module is in
eval mode (dropout is the only stochastic component and only runs in train
mode).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ContractError


@dataclass
class ModelConfig:
    embed_dim: int = 32
    latent_dim: int = 16
    encoder_layers: int = 2
    fusion_layers: int = 2
    decoder_layers: int = 1
    num_heads: int = 2
    mlp_ratio: float = 4.0
    dropout: float = 0.1
    num_patches: int = 16
    patch_dim: int = 48
    vocab_size: int = 21
    max_text_len: int = 16
    num_classes: int = 4

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        return cls(**{k: values[k] for k in cls.__dataclass_fields__})


def _init_weights(module: nn.Module) -> None:
    # scaled-normal init for all learned matrices; biases start at zero
    if isinstance(module, nn.Linear):
        nn.init.normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.normal_(module.weight, std=0.02)
    elif isinstance(module, nn.MultiheadAttention):
        nn.init.normal_(module.in_proj_weight, std=0.02)
        nn.init.zeros_(module.in_proj_bias)
        nn.init.normal_(module.out_proj.weight, std=0.02)
        nn.init.zeros_(module.out_proj.bias)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mlp_ratio: float, dropout: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.net = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class EncoderBlock(nn.Module):
    """Pre-norm transformer block: self-attention then feed-forward."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float, dropout: float):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_ratio, dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm_attn(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.ffn(self.norm_ffn(x))


class FusionBlock(nn.Module):
    """Pre-norm block with self-attention, cross-attention, and feed-forward."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float, dropout: float):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.norm_query = nn.LayerNorm(dim)
        self.norm_context = nn.LayerNorm(dim)
        self.cross_attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_ratio, dropout)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, h, need_weights=False)[0]
        q, kv = self.norm_query(x), self.norm_context(context)
        x = x + self.cross_attn(q, kv, kv, need_weights=False)[0]
        return x + self.ffn(self.norm_ffn(x))


class VisionEncoder(nn.Module):
    """Patch-sequence encoder with CLS token and a learned mask embedding.

    The mask embedding substitutes for masked patches after patch projection,
    and positional embeddings are added after the substitution.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.patch_proj = nn.Linear(cfg.patch_dim, cfg.embed_dim)
        self.cls_token = nn.Parameter(torch.zeros(cfg.embed_dim))
        self.mask_embedding = nn.Parameter(torch.zeros(cfg.embed_dim))
        self.pos_embedding = nn.Parameter(torch.zeros(cfg.num_patches + 1, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.encoder_layers)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.num_patches = cfg.num_patches

    def forward(self, patches: torch.Tensor, masked: torch.Tensor | None = None) -> torch.Tensor:
        if patches.ndim != 3 or patches.shape[1] != self.num_patches:
            raise ContractError(
                f"expected patches of shape (batch, {self.num_patches}, patch_dim), got {tuple(patches.shape)}"
            )
        h = self.patch_proj(patches)
        if masked is not None:
            h = torch.where(masked.unsqueeze(-1), self.mask_embedding.to(h.dtype), h)
        cls = self.cls_token.expand(h.shape[0], 1, -1)
        h = torch.cat([cls, h], dim=1) + self.pos_embedding
        for block in self.blocks:
            h = block(h)
        return self.norm(h)


class LanguageEncoder(nn.Module):
    """Token encoder; the mask token is an ordinary vocabulary embedding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.pos_embedding = nn.Parameter(torch.zeros(cfg.max_text_len, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.encoder_layers)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.max_text_len = cfg.max_text_len

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim != 2:
            raise ContractError(f"expected tokens of shape (batch, length), got {tuple(tokens.shape)}")
        if tokens.shape[1] > self.max_text_len:
            raise ContractError(f"text length {tokens.shape[1]} exceeds maximum {self.max_text_len}")
        h = self.token_embedding(tokens) + self.pos_embedding[: tokens.shape[1]]
        for block in self.blocks:
            h = block(h)
        return self.norm(h)


class FusionModule(nn.Module):
    """Dual-stream fusion: each stream cross-attends over the other's
    previous-layer output, so the update is symmetric."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.image_blocks = nn.ModuleList(
            FusionBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.fusion_layers)
        )
        self.text_blocks = nn.ModuleList(
            FusionBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.fusion_layers)
        )

    def forward(self, h_image: torch.Tensor, h_text: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if h_image.shape[1] == 0 or h_text.shape[1] == 0:
            raise ContractError("fusion requires both streams to be non-empty")
        for img_block, txt_block in zip(self.image_blocks, self.text_blocks):
            h_image, h_text = img_block(h_image, h_text), txt_block(h_text, h_image)
        return h_image, h_text


class MultiModalEncoder(nn.Module):
    """Vision encoder + language encoder + fusion, the unit tracked by EMA."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.vision = VisionEncoder(cfg)
        self.language = LanguageEncoder(cfg)
        self.fusion = FusionModule(cfg)

    def forward(
        self,
        patches: torch.Tensor,
        tokens: torch.Tensor,
        image_masked: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        h_image = self.vision(patches, image_masked)
        h_text = self.language(tokens)
        return self.fusion(h_image, h_text)


class VisionDecoder(nn.Module):
    """Transformer decoder mapping fused image tokens back to pixel vectors,
    reported only at masked positions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.decoder_layers)
        )
        self.head = nn.Linear(cfg.embed_dim, cfg.patch_dim)

    def forward(self, z_image: torch.Tensor, masked: torch.Tensor | None) -> torch.Tensor:
        if masked is None:
            raise ContractError("vision decoding requires the mask plan to select positions")
        h = z_image
        for block in self.blocks:
            h = block(h)
        preds = self.head(h[:, 1:])  # drop CLS, one prediction per patch
        batch, counts = masked.shape[0], masked.sum(dim=1)
        if counts.numel() and not torch.all(counts == counts[0]):
            raise ContractError("masked patch counts must match across the batch")
        return preds[masked].reshape(batch, int(counts[0].item()) if counts.numel() else 0, -1)


class LanguageDecoder(nn.Module):
    """MLP over fused text tokens producing vocabulary logits at masked positions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        hidden = int(cfg.embed_dim * cfg.mlp_ratio)
        self.net = nn.Sequential(
            nn.Linear(cfg.embed_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, cfg.vocab_size),
        )

    def forward(self, z_text: torch.Tensor, masked: torch.Tensor | None) -> torch.Tensor:
        if masked is None:
            raise ContractError("language decoding requires the mask plan to select positions")
        logits = self.net(z_text)
        batch, counts = masked.shape[0], masked.sum(dim=1)
        if counts.numel() and not torch.all(counts == counts[0]):
            raise ContractError("masked token counts must match across the batch")
        return logits[masked].reshape(batch, int(counts[0].item()) if counts.numel() else 0, -1)


class FeatureProjector(nn.Module):
    """Bias-free linear maps to the low-dimensional latent, one per modality.

    Projection happens per token, then the token axis is mean-pooled, so the
    pooled latent is invariant to token order.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.image_proj = nn.Linear(cfg.embed_dim, cfg.latent_dim, bias=False)
        self.text_proj = nn.Linear(cfg.embed_dim, cfg.latent_dim, bias=False)

    def forward(self, z: torch.Tensor, modality: str) -> torch.Tensor:
        proj = {"image": self.image_proj, "text": self.text_proj}.get(modality)
        if proj is None:
            raise ContractError(f"modality must be 'image' or 'text', got {modality!r}")
        return proj(z).mean(dim=1)


class PairMatchHead(nn.Module):
    """Linear two-way classifier over the fused pair representation.

    The pair representation concatenates both CLS embeddings, both mean
    embeddings, and their element-wise product; the product term exposes
    stream agreement to the linear layer directly.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.linear = nn.Linear(5 * cfg.embed_dim, 2)

    def forward(self, z_image: torch.Tensor, z_text: torch.Tensor) -> torch.Tensor:
        mean_image, mean_text = z_image.mean(dim=1), z_text.mean(dim=1)
        pooled = torch.cat(
            [z_image[:, 0], z_text[:, 0], mean_image, mean_text, mean_image * mean_text], dim=-1
        )
        return self.linear(pooled)


class TaskHeads(nn.Module):
    """Joint classification head plus per-modality split heads.

    The joint head consumes the concatenated mean embeddings of both streams;
    the split heads see only their own stream, so zeroing one modality leaves
    the other split head's logits unchanged.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.joint = nn.Sequential(
            nn.LayerNorm(2 * cfg.embed_dim),
            nn.Linear(2 * cfg.embed_dim, cfg.embed_dim),
            nn.GELU(),
            nn.Linear(cfg.embed_dim, cfg.num_classes),
        )
        self.image_head = nn.Linear(cfg.embed_dim, cfg.num_classes)
        self.text_head = nn.Linear(cfg.embed_dim, cfg.num_classes)

    def forward(self, z_image: torch.Tensor, z_text: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        pooled_image, pooled_text = z_image.mean(dim=1), z_text.mean(dim=1)
        joint = self.joint(torch.cat([pooled_image, pooled_text], dim=-1))
        return joint, self.image_head(pooled_image), self.text_head(pooled_text)


class ModelBundle(nn.Module):
    """Everything a pipeline stage needs: student, EMA teacher, decoders, heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.student = MultiModalEncoder(cfg)
        self.student.apply(_init_weights)
        self.vision_decoder = VisionDecoder(cfg)
        self.language_decoder = LanguageDecoder(cfg)
        self.projector = FeatureProjector(cfg)
        self.match_head = PairMatchHead(cfg)
        self.task_heads = TaskHeads(cfg)
        for module in (self.vision_decoder, self.language_decoder, self.projector, self.match_head, self.task_heads):
            module.apply(_init_weights)
        self.teacher = copy.deepcopy(self.student)
        self.teacher.requires_grad_(False)

    # --- parameter groups per pipeline stage -------------------------------

    def pretrain_parameters(self) -> list[nn.Parameter]:
        modules = [self.student, self.vision_decoder, self.language_decoder, self.projector, self.match_head]
        return [p for m in modules for p in m.parameters()]

    def calib_parameters(self, objectives: tuple[str, ...], include_match: bool) -> list[nn.Parameter]:
        modules: list[nn.Module] = [self.student]
        if "mim" in objectives:
            modules.append(self.vision_decoder)
        if "mlm" in objectives:
            modules.append(self.language_decoder)
        if "feamim" in objectives or "feamlm" in objectives:
            modules.append(self.projector)
        if include_match:
            modules.append(self.match_head)
        return [p for m in modules for p in m.parameters()]

    def finetune_parameters(self) -> list[nn.Parameter]:
        return [p for m in (self.student, self.task_heads) for p in m.parameters()]

    def modality_parameters(self, modality: str) -> list[nn.Parameter]:
        encoder = {"image": self.student.vision, "text": self.student.language}.get(modality)
        if encoder is None:
            raise ContractError(f"modality must be 'image' or 'text', got {modality!r}")
        return list(encoder.parameters())


def build_bundle(cfg: ModelConfig, seed: int, dtype: torch.dtype = torch.float64) -> ModelBundle:
    """Construct a bundle with seeded scaled-normal initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        bundle = ModelBundle(cfg)
    return bundle.to(dtype)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
