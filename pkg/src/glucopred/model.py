"""Hierarchical attention classifier over multi-source irregular series.

Three aggregation levels, each a pre-norm transformer encoder with gated
feed-forward blocks:

1. Per record, feature tokens (one per numeric/categorical slot plus a
   summary token) attend to each other; the summary token's state embeds the
   record. No positional information: feature order is meaningless.
2. Per source, record embeddings plus sinusoidal encodings of their
   minute offsets attend across time; a second summary token embeds the
   whole series. Time lives only in the encodings, never in sequence order.
3. Across sources, the per-source embeddings (projected into a shared width)
   attend to each other, then an attentive pooling layer mixes them into one
   vector with softmax weights exposed per source.

A LayerNorm/ReLU/linear head maps the pooled vector to class logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from .data import SourceSchema


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; embedding widths default to the
    per-source schema hints unless overridden (tiny test models)."""

    depth: int = 4
    heads: int = 8
    head_dim: int = 8
    joint_dim: int = 32
    fusion_dim: int = 32
    ff_mult: int = 2
    dropout: float = 0.1
    n_classes: int = 3
    max_seq_len: int = 512
    min_period_minutes: float = 2.0
    max_period_minutes: float = 100_000.0
    embed_width_override: int | None = None

    def width_for(self, schema: SourceSchema) -> int:
        width = self.embed_width_override or schema.embed_width_hint
        if width % 2 != 0:
            raise ValueError(f"embedding width must be even, got {width}")
        return width

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "heads": self.heads,
            "head_dim": self.head_dim,
            "joint_dim": self.joint_dim,
            "fusion_dim": self.fusion_dim,
            "ff_mult": self.ff_mult,
            "dropout": self.dropout,
            "n_classes": self.n_classes,
            "max_seq_len": self.max_seq_len,
            "min_period_minutes": self.min_period_minutes,
            "max_period_minutes": self.max_period_minutes,
            "embed_width_override": self.embed_width_override,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def time_encoding(
    offsets: torch.Tensor, dim: int, min_period: float, max_period: float
) -> torch.Tensor:
    """Interleaved sin/cos of the offset over geometrically spaced periods.

    offsets [..., T] in minutes -> [..., T, dim]; channel pair k has period
    min_period * (max_period / min_period) ** (k / (dim/2 - 1))."""
    half = dim // 2
    if half > 1:
        exponents = torch.arange(half, dtype=offsets.dtype, device=offsets.device) / (half - 1)
        periods = min_period * (max_period / min_period) ** exponents
    else:
        periods = torch.tensor([min_period], dtype=offsets.dtype, device=offsets.device)
    angles = 2.0 * math.pi * offsets[..., None] / periods
    enc = torch.empty(*offsets.shape, dim, dtype=offsets.dtype, device=offsets.device)
    enc[..., 0::2] = torch.sin(angles)
    enc[..., 1::2] = torch.cos(angles)
    return enc


class MultiheadSelfAttention(nn.Module):
    """Standard scaled dot-product self-attention with an explicit inner
    width of heads * head_dim, independent of the model width."""

    def __init__(self, dim: int, heads: int, head_dim: int, dropout: float):
        super().__init__()
        inner = heads * head_dim
        self.heads = heads
        self.head_dim = head_dim
        self.query = nn.Linear(dim, inner)
        self.key = nn.Linear(dim, inner)
        self.value = nn.Linear(dim, inner)
        self.out = nn.Linear(inner, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        b, s, _ = x.shape

        def split(t):
            return t.view(b, s, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        attn_mask = None
        if pad_mask is not None:
            attn_mask = ~pad_mask[:, None, None, :]  # True = may attend
        dropout_p = self.drop.p if self.training else 0.0
        mixed = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask, dropout_p=dropout_p)
        mixed = mixed.transpose(1, 2).reshape(b, s, self.heads * self.head_dim)
        return self.out(mixed)


class GatedFeedForward(nn.Module):
    """Expansion to 2 * mult * dim, one half gelu-gating the other, then
    projection back."""

    def __init__(self, dim: int, mult: int, dropout: float):
        super().__init__()
        self.expand = nn.Linear(dim, dim * mult * 2)
        self.project = nn.Linear(dim * mult, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        value, gate = self.expand(x).chunk(2, dim=-1)
        return self.project(self.drop(value * F.gelu(gate)))


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, head_dim: int, mult: int, dropout: float):
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, heads, head_dim, dropout)
        self.ff_norm = nn.LayerNorm(dim)
        self.ff = GatedFeedForward(dim, mult, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        x = x + self.drop(self.attn(self.attn_norm(x), pad_mask))
        x = x + self.drop(self.ff(self.ff_norm(x)))
        return x


class EncoderStack(nn.Module):
    """depth pre-norm blocks; depth 0 is the identity."""

    def __init__(self, dim: int, depth: int, heads: int, head_dim: int, mult: int, dropout: float):
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderBlock(dim, heads, head_dim, mult, dropout) for _ in range(depth)
        )

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, pad_mask)
        return x


class FeatureTokenizer(nn.Module):
    """One learned token per feature slot: numeric j maps to
    bias_j + value * weight_j, categorical j to an embedding-table row; a
    learned summary token is prepended."""

    def __init__(self, schema: SourceSchema, width: int):
        super().__init__()
        self.n_numeric = schema.n_numeric
        bound = 1.0 / math.sqrt(width)
        self.cls = nn.Parameter(torch.empty(width).uniform_(-bound, bound))
        if schema.n_numeric:
            self.numeric_weight = nn.Parameter(
                torch.empty(schema.n_numeric, width).uniform_(-bound, bound)
            )
            self.numeric_bias = nn.Parameter(
                torch.empty(schema.n_numeric, width).uniform_(-bound, bound)
            )
        self.embeddings = nn.ModuleList(
            nn.Embedding(len(feat.categories), width) for feat in schema.categorical_features
        )
        for emb in self.embeddings:
            nn.init.uniform_(emb.weight, -bound, bound)

    def forward(self, numeric: torch.Tensor, cat_ids: torch.Tensor) -> torch.Tensor:
        """numeric [B, T, n], cat_ids [B, T, c] -> tokens [B, T, 1+n+c, w]."""
        b, t = numeric.shape[0], numeric.shape[1]
        parts = [self.cls.expand(b, t, 1, -1)]
        if self.n_numeric:
            parts.append(self.numeric_bias + numeric[..., None] * self.numeric_weight)
        for j, emb in enumerate(self.embeddings):
            parts.append(emb(cat_ids[..., j]).unsqueeze(2))
        return torch.cat(parts, dim=2)


class JointProjection(nn.Module):
    """LayerNorm, gated expansion by ff_mult, projection to the shared width."""

    def __init__(self, width: int, mult: int, joint_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.expand = nn.Linear(width, width * mult * 2)
        self.project = nn.Linear(width * mult, joint_dim)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        value, gate = self.expand(self.norm(z)).chunk(2, dim=-1)
        return self.project(value * F.gelu(gate))


class SourceModule(nn.Module):
    """Feature-level aggregation, time-encoded sequence aggregation, and the
    shared-space projection for one source."""

    def __init__(self, schema: SourceSchema, config: ModelConfig):
        super().__init__()
        width = config.width_for(schema)
        self.width = width
        self.min_period = config.min_period_minutes
        self.max_period = config.max_period_minutes
        self.tokenizer = FeatureTokenizer(schema, width)
        self.feature_encoder = EncoderStack(
            width, config.depth, config.heads, config.head_dim, config.ff_mult, config.dropout
        )
        bound = 1.0 / math.sqrt(width)
        self.sequence_cls = nn.Parameter(torch.empty(width).uniform_(-bound, bound))
        self.sequence_encoder = EncoderStack(
            width, config.depth, config.heads, config.head_dim, config.ff_mult, config.dropout
        )
        self.projection = JointProjection(width, config.ff_mult, config.joint_dim)

    def embed_records(self, numeric: torch.Tensor, cat_ids: torch.Tensor) -> torch.Tensor:
        """[B, T, ...] feature slots -> [B, T, w] record embeddings."""
        tokens = self.tokenizer(numeric, cat_ids)
        b, t, k, w = tokens.shape
        encoded = self.feature_encoder(tokens.view(b * t, k, w))
        return encoded[:, 0].view(b, t, w)

    def summarize(
        self, records: torch.Tensor, offsets: torch.Tensor, pad_mask: torch.Tensor
    ) -> torch.Tensor:
        """Time-encode record embeddings and pool them through the summary
        token (which itself receives no time encoding)."""
        b = records.shape[0]
        timed = records + time_encoding(offsets, self.width, self.min_period, self.max_period)
        seq = torch.cat([self.sequence_cls.expand(b, 1, -1), timed], dim=1)
        mask = torch.cat(
            [torch.zeros(b, 1, dtype=torch.bool, device=pad_mask.device), pad_mask], dim=1
        )
        return self.sequence_encoder(seq, mask)[:, 0]

    def forward(
        self,
        numeric: torch.Tensor,
        cat_ids: torch.Tensor,
        offsets: torch.Tensor,
        pad_mask: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        records = self.embed_records(numeric, cat_ids)
        summary = self.summarize(records, offsets, pad_mask)
        return self.projection(summary), summary, records


class AttentivePooling(nn.Module):
    """tanh-transformed scores against a learned context vector; softmax
    weights mix the inputs into one vector."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.transform = nn.Linear(dim, hidden)
        bound = 1.0 / math.sqrt(hidden)
        self.context = nn.Parameter(torch.empty(hidden).uniform_(-bound, bound))

    def forward(self, inputs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        scores = torch.tanh(self.transform(inputs)) @ self.context
        weights = torch.softmax(scores, dim=-1)
        pooled = (weights.unsqueeze(-1) * inputs).sum(dim=1)
        return pooled, weights


class PredictionHead(nn.Module):
    def __init__(self, dim: int, n_classes: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.out = nn.Linear(dim, n_classes)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return self.out(F.relu(self.norm(v)))


@dataclass
class ActivationBundle:
    """Intermediate activations of one forward pass, keyed by source name."""

    record_embeddings: dict[str, torch.Tensor]
    source_summaries: dict[str, torch.Tensor]
    joint_embeddings: dict[str, torch.Tensor]
    integrated: dict[str, torch.Tensor]
    fusion_weights: torch.Tensor  # [B, M]
    pooled: torch.Tensor  # [B, joint_dim]
    logits: torch.Tensor  # [B, C]


class FusionWeightError(RuntimeError):
    """Fusion weights failed the simplex contract."""


class MultiSourceClassifier(nn.Module):
    def __init__(self, schemas: tuple[SourceSchema, ...], config: ModelConfig):
        super().__init__()
        self.schemas = tuple(sorted(schemas, key=lambda s: s.source_id))
        self.config = config
        self.sources = nn.ModuleDict(
            {schema.source_name: SourceModule(schema, config) for schema in self.schemas}
        )
        self.source_encoder = EncoderStack(
            config.joint_dim, config.depth, config.heads, config.head_dim,
            config.ff_mult, config.dropout,
        )
        self.fusion = AttentivePooling(config.joint_dim, config.fusion_dim)
        self.head = PredictionHead(config.joint_dim, config.n_classes)

    def forward(self, batch, need_activations: bool = False):
        """batch: EncodedBatch -> (logits, ActivationBundle | None).

        Raises FusionWeightError if the per-source weights leave the
        probability simplex (sum within 1e-6 of 1, all strictly positive)."""
        joint, summaries, records = {}, {}, {}
        for schema in self.schemas:
            tensors = batch.sources[schema.source_id]
            u, z, f = self.sources[schema.source_name](
                tensors.numeric, tensors.cat_ids, tensors.offsets, tensors.pad_mask
            )
            joint[schema.source_name] = u
            if need_activations:
                summaries[schema.source_name] = z
                records[schema.source_name] = f
        stacked = torch.stack([joint[s.source_name] for s in self.schemas], dim=1)
        integrated = self.source_encoder(stacked)
        pooled, weights = self.fusion(integrated)
        logits = self.head(pooled)

        sums = weights.sum(dim=-1)
        if not torch.all((sums - 1.0).abs() <= 1e-6) or not torch.all(weights > 0):
            raise FusionWeightError(
                f"fusion weights left the simplex: sums in "
                f"[{sums.min().item()}, {sums.max().item()}], min weight "
                f"{weights.min().item()}"
            )

        bundle = None
        if need_activations:
            bundle = ActivationBundle(
                record_embeddings=records,
                source_summaries=summaries,
                joint_embeddings=joint,
                integrated={
                    s.source_name: integrated[:, i]
                    for i, s in enumerate(self.schemas)
                },
                fusion_weights=weights,
                pooled=pooled,
                logits=logits,
            )
        return logits, weights, bundle

    def parameter_groups(self) -> dict[str, list[str]]:
        """Named freeze/inspection groups covering every parameter exactly once."""
        groups: dict[str, list[str]] = {}
        for schema in self.schemas:
            prefix = f"sources.{schema.source_name}"
            for part in ("tokenizer", "feature_encoder", "sequence_encoder", "projection"):
                groups[f"{prefix}.{part}"] = []
        for top in ("source_encoder", "fusion", "head"):
            groups[top] = []
        for name, _ in self.named_parameters():
            if name.startswith("sources."):
                source_name = name.split(".")[1]
                if ".sequence_cls" in name:
                    groups[f"sources.{source_name}.sequence_encoder"].append(name)
                    continue
                part = name.split(".")[2]
                groups[f"sources.{source_name}.{part}"].append(name)
            else:
                groups[name.split(".")[0]].append(name)
        return groups


def build_model(
    schemas: tuple[SourceSchema, ...],
    config: ModelConfig,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> MultiSourceClassifier:
    """Deterministically initialized model."""
    torch.manual_seed(seed)
    model = MultiSourceClassifier(schemas, config)
    return model.to(dtype)
