"""Desk-scale transformer VQA models.

Two architectures over (question tokens, region features):

* single_stream: one encoder self-attending over the concatenated
  [CLS] + question + region sequence.
* dual_stream: separate language and vision encoders joined by
  cross-modality layers (language->vision and vision->language
  cross-attention plus per-stream self-attention and feed-forward).

Both expose the complete per-layer, per-head attention matrices so the
visualization module can attribute the answer to image regions.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    CorruptArtifact,
    DimensionMismatch,
    EmptyQuestion,
    ShapeError,
    VersionMismatch,
)
from .features import RegionFeatures

ARTIFACT_MAGIC = b"PGBK"
ARTIFACT_VERSION = 1

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SPECIAL_TOKENS = ["<pad>", "<unk>", "<cls>"]

_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]")


@dataclass
class ModelConfig:
    architecture: str = "single_stream"  # "single_stream" | "dual_stream"
    hidden_dim: int = 128
    n_heads: int = 4
    feature_dim: int = 2048
    max_question_tokens: int = 20
    max_regions: int = 36
    vocab_size: int = 0
    n_answers: int = 0
    layers: tuple[int, ...] = ()  # (L,) or (L_lang, L_vision, L_cross)
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ("single_stream", "dual_stream"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if not self.layers:
            self.layers = (4,) if self.architecture == "single_stream" else (2, 2, 2)
        self.layers = tuple(self.layers)
        expected = 1 if self.architecture == "single_stream" else 3
        if len(self.layers) != expected:
            raise ValueError(
                f"{self.architecture} expects {expected} depth value(s), got {self.layers}"
            )
        if any(d < 1 for d in self.layers):
            raise ValueError("all encoder depths must be >= 1")
        if self.hidden_dim % self.n_heads:
            raise ValueError("hidden_dim must be divisible by n_heads")

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "hidden_dim": self.hidden_dim,
            "n_heads": self.n_heads,
            "feature_dim": self.feature_dim,
            "max_question_tokens": self.max_question_tokens,
            "max_regions": self.max_regions,
            "vocab_size": self.vocab_size,
            "n_answers": self.n_answers,
            "layers": list(self.layers),
            "dropout": self.dropout,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["layers"] = tuple(d.get("layers", ()))
        return cls(**d)


class Vocab:
    """Word-level vocabulary with PAD/UNK/CLS specials at fixed ids."""

    def __init__(self, words: list[str]):
        self.tokens = SPECIAL_TOKENS + list(words)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @staticmethod
    def split(text: str) -> list[str]:
        return _TOKEN_RE.findall(text.casefold())

    @classmethod
    def build(cls, questions: list[str], min_count: int = 1) -> "Vocab":
        counts: dict[str, int] = {}
        for q in questions:
            for tok in cls.split(q):
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(w for w, c in counts.items() if c >= min_count)
        return cls(kept)


def tokenize(question: str, vocab: Vocab, max_tokens: int = 20) -> list[int]:
    """Casefolded word/punctuation tokenization, truncated and padded."""
    words = Vocab.split(question)
    if not words:
        raise EmptyQuestion("question contains no tokens")
    ids = [vocab.index.get(w, UNK_ID) for w in words[:max_tokens]]
    return ids + [PAD_ID] * (max_tokens - len(ids))


@dataclass
class TokenMap:
    total_len: int
    question_positions: range
    region_positions: range
    special_positions: list[int]
    # "joint": positions index the single concatenated sequence;
    # "dual": question positions index the language stream, region
    # positions the vision stream.
    streams: str = "joint"


@dataclass
class AttentionEntry:
    layer: int
    kind: str  # self | language | vision | cross_lang_to_vision | cross_vision_to_lang
    weights: np.ndarray  # (n_heads, Tq, Tk)
    query_keep: np.ndarray  # bool (Tq,): non-padding query rows
    key_keep: np.ndarray  # bool (Tk,): non-masked key columns


@dataclass
class AttentionTrace:
    architecture: str
    entries: list[AttentionEntry] = field(default_factory=list)


@dataclass
class ForwardResult:
    logits: torch.Tensor  # (n_answers,)
    trace: AttentionTrace | None
    token_map: TokenMap


class MultiHeadAttention(nn.Module):
    def __init__(self, hidden: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = hidden // n_heads
        self.q_proj = nn.Linear(hidden, hidden)
        self.k_proj = nn.Linear(hidden, hidden)
        self.v_proj = nn.Linear(hidden, hidden)
        self.out_proj = nn.Linear(hidden, hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query, keyval, key_mask):
        # query (B, Tq, H), keyval (B, Tk, H), key_mask bool (B, Tk)
        b, tq, _ = query.shape
        tk = keyval.shape[1]
        h, d = self.n_heads, self.head_dim
        q = self.q_proj(query).view(b, tq, h, d).transpose(1, 2)
        k = self.k_proj(keyval).view(b, tk, h, d).transpose(1, 2)
        v = self.v_proj(keyval).view(b, tk, h, d).transpose(1, 2)
        scores = (q @ k.transpose(-1, -2)) / (d ** 0.5)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = self.dropout(attn) @ v
        out = out.transpose(1, 2).reshape(b, tq, h * d)
        return self.out_proj(out), attn


class FeedForward(nn.Module):
    def __init__(self, hidden: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(hidden, hidden * 4)
        self.fc2 = nn.Linear(hidden * 4, hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class SelfAttentionLayer(nn.Module):
    def __init__(self, hidden: int, n_heads: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadAttention(hidden, n_heads, dropout)
        self.ffn = FeedForward(hidden, dropout)
        self.norm1 = nn.LayerNorm(hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        out, attn = self.attn(x, x, mask)
        x = self.norm1(x + self.dropout(out))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x, attn


class CrossModalityLayer(nn.Module):
    """One dual-stream fusion layer.

    Language->vision and vision->language cross-attention, then a
    self-attention plus feed-forward block per stream.
    """

    def __init__(self, hidden: int, n_heads: int, dropout: float):
        super().__init__()
        self.cross_l2v = MultiHeadAttention(hidden, n_heads, dropout)
        self.cross_v2l = MultiHeadAttention(hidden, n_heads, dropout)
        self.norm_l_cross = nn.LayerNorm(hidden)
        self.norm_v_cross = nn.LayerNorm(hidden)
        self.self_lang = SelfAttentionLayer(hidden, n_heads, dropout)
        self.self_vis = SelfAttentionLayer(hidden, n_heads, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, lang, vis, lang_mask, vis_mask):
        l_out, attn_l2v = self.cross_l2v(lang, vis, vis_mask)
        v_out, attn_v2l = self.cross_v2l(vis, lang, lang_mask)
        lang = self.norm_l_cross(lang + self.dropout(l_out))
        vis = self.norm_v_cross(vis + self.dropout(v_out))
        lang, attn_l_self = self.self_lang(lang, lang_mask)
        vis, attn_v_self = self.self_vis(vis, vis_mask)
        return lang, vis, attn_l2v, attn_v2l, attn_l_self, attn_v_self


class TextEmbedding(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        max_len = config.max_question_tokens + 1  # + CLS
        self.word = nn.Embedding(config.vocab_size, config.hidden_dim, padding_idx=PAD_ID)
        self.position = nn.Embedding(max_len, config.hidden_dim)
        self.segment = nn.Parameter(torch.zeros(config.hidden_dim))
        self.norm = nn.LayerNorm(config.hidden_dim)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, ids):
        # ids (B, T) with CLS prepended by the caller
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.word(ids) + self.position(positions)[None] + self.segment
        return self.dropout(self.norm(x))


class VisualEmbedding(nn.Module):
    """Region embedding: projected feature + segment + projected box."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.feature_dim = config.feature_dim
        self.feat_proj = nn.Linear(config.feature_dim, config.hidden_dim)
        self.box_proj = nn.Linear(4, config.hidden_dim)
        self.segment = nn.Parameter(torch.zeros(config.hidden_dim))
        self.norm = nn.LayerNorm(config.hidden_dim)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, features, boxes):
        if features.shape[-1] != self.feature_dim:
            raise DimensionMismatch(
                f"feature dim {features.shape[-1]} != configured {self.feature_dim}"
            )
        x = self.feat_proj(features) + self.box_proj(boxes) + self.segment
        return self.dropout(self.norm(x))


class VqaModel(nn.Module):
    """Shared scaffolding: embeddings, answer head, trace plumbing."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.vocab_size <= len(SPECIAL_TOKENS) - 1 or config.n_answers < 1:
            raise ValueError("config must carry vocab_size and n_answers")
        self.config = config
        self.text_embed = TextEmbedding(config)
        self.visual_embed = VisualEmbedding(config)
        self.pooler = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.classifier = nn.Linear(config.hidden_dim, config.n_answers)

    def _prepare(self, question_ids, regions: RegionFeatures):
        device = self.classifier.weight.device
        dtype = self.classifier.weight.dtype
        ids = torch.as_tensor(question_ids, dtype=torch.long, device=device)
        if ids.dim() != 1:
            raise ShapeError("question_ids must be a 1-D id sequence")
        if regions.features.shape[1] != self.config.feature_dim:
            raise DimensionMismatch(
                f"region feature dim {regions.features.shape[1]} != {self.config.feature_dim}"
            )
        ids = torch.cat([torch.tensor([CLS_ID], device=device), ids])[None]  # (1, 1+Tq)
        feats = torch.as_tensor(regions.features, dtype=dtype, device=device)[None]
        boxes = torch.as_tensor(regions.boxes, dtype=dtype, device=device)[None]
        return ids, feats, boxes

    def _head(self, pooled):
        return self.classifier(torch.tanh(self.pooler(pooled)))

    @staticmethod
    def _entry(layer, kind, attn, query_keep, key_keep):
        return AttentionEntry(
            layer=layer,
            kind=kind,
            weights=attn[0].detach().double().cpu().numpy(),
            query_keep=query_keep.cpu().numpy(),
            key_keep=key_keep.cpu().numpy(),
        )


class SingleStreamModel(VqaModel):
    def __init__(self, config: ModelConfig):
        super().__init__(config)
        (depth,) = config.layers
        self.layers = nn.ModuleList(
            SelfAttentionLayer(config.hidden_dim, config.n_heads, config.dropout)
            for _ in range(depth)
        )

    def forward(self, question_ids, regions: RegionFeatures, need_trace: bool = False) -> ForwardResult:
        ids, feats, boxes = self._prepare(question_ids, regions)
        text = self.text_embed(ids)
        vis = self.visual_embed(feats, boxes)
        x = torch.cat([text, vis], dim=1)  # (1, 1+Tq+N, H)

        n = regions.n_regions
        tq = ids.shape[1] - 1
        text_keep = ids[0] != PAD_ID  # includes CLS
        keep = torch.cat([text_keep, torch.ones(n, dtype=torch.bool, device=ids.device)])
        mask = keep[None]

        trace = AttentionTrace("single_stream") if need_trace else None
        for i, layer in enumerate(self.layers):
            x, attn = layer(x, mask)
            if trace is not None:
                trace.entries.append(self._entry(i, "self", attn, keep, keep))

        logits = self._head(x[:, 0])[0]
        token_map = TokenMap(
            total_len=1 + tq + n,
            question_positions=range(1, 1 + int(text_keep[1:].sum())),
            region_positions=range(1 + tq, 1 + tq + n),
            special_positions=[0],
            streams="joint",
        )
        return ForwardResult(logits, trace, token_map)


class DualStreamModel(VqaModel):
    def __init__(self, config: ModelConfig):
        super().__init__(config)
        l_lang, l_vis, l_cross = config.layers
        make = lambda: SelfAttentionLayer(config.hidden_dim, config.n_heads, config.dropout)
        self.lang_layers = nn.ModuleList(make() for _ in range(l_lang))
        self.vis_layers = nn.ModuleList(make() for _ in range(l_vis))
        self.cross_layers = nn.ModuleList(
            CrossModalityLayer(config.hidden_dim, config.n_heads, config.dropout)
            for _ in range(l_cross)
        )

    def forward(self, question_ids, regions: RegionFeatures, need_trace: bool = False) -> ForwardResult:
        ids, feats, boxes = self._prepare(question_ids, regions)
        lang = self.text_embed(ids)
        vis = self.visual_embed(feats, boxes)

        n = regions.n_regions
        tq = ids.shape[1] - 1
        lang_keep = ids[0] != PAD_ID
        vis_keep = torch.ones(n, dtype=torch.bool, device=ids.device)
        lang_mask, vis_mask = lang_keep[None], vis_keep[None]

        trace = AttentionTrace("dual_stream") if need_trace else None
        for i, layer in enumerate(self.lang_layers):
            lang, attn = layer(lang, lang_mask)
            if trace is not None:
                trace.entries.append(self._entry(i, "language", attn, lang_keep, lang_keep))
        for i, layer in enumerate(self.vis_layers):
            vis, attn = layer(vis, vis_mask)
            if trace is not None:
                trace.entries.append(self._entry(i, "vision", attn, vis_keep, vis_keep))
        for i, layer in enumerate(self.cross_layers):
            lang, vis, a_l2v, a_v2l, a_ls, a_vs = layer(lang, vis, lang_mask, vis_mask)
            if trace is not None:
                trace.entries.extend(
                    [
                        self._entry(i, "cross_lang_to_vision", a_l2v, lang_keep, vis_keep),
                        self._entry(i, "cross_vision_to_lang", a_v2l, vis_keep, lang_keep),
                        self._entry(i, "language", a_ls, lang_keep, lang_keep),
                        self._entry(i, "vision", a_vs, vis_keep, vis_keep),
                    ]
                )

        logits = self._head(lang[:, 0])[0]
        token_map = TokenMap(
            total_len=(1 + tq) + n,
            question_positions=range(1, 1 + int(lang_keep[1:].sum())),
            region_positions=range(0, n),
            special_positions=[0],
            streams="dual",
        )
        return ForwardResult(logits, trace, token_map)


def build_model(config: ModelConfig) -> VqaModel:
    """Construct and initialize a model deterministically from config.seed."""
    torch.manual_seed(config.seed)
    cls = SingleStreamModel if config.architecture == "single_stream" else DualStreamModel
    model = cls(config)
    generator = torch.Generator().manual_seed(config.seed)
    with torch.no_grad():
        for name, p in sorted(model.named_parameters()):
            if p.dim() >= 2 or name.endswith("word.weight"):
                # Xavier keeps the visual projection trainable at desk scale;
                # a flat small-std init starves it of gradient signal.
                init = torch.empty_like(p)
                nn.init.xavier_uniform_(init, generator=generator)
                p.copy_(init)
            elif "norm" in name and name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.zero_()
    return model


# --- single-file model artifact ---
# Layout: magic "PGBK" | uint32 version | uint64 header length | header JSON
# | raw float32 tensor blob | sha256 of everything before it.

def save_model(
    model: VqaModel,
    vocab: Vocab,
    answer_labels: list[str],
    path: str,
    extractor_spec: dict | None = None,
) -> None:
    state = model.state_dict()
    manifest = []
    blob = io.BytesIO()
    offset = 0
    for name in sorted(state):
        tensor = state[name].detach().cpu().to(torch.float32).contiguous()
        data = tensor.numpy().tobytes()
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        blob.write(data)
        offset += len(data)
    header = {
        "config": model.config.to_dict(),
        "vocab": vocab.tokens[len(SPECIAL_TOKENS):],
        "answer_space": answer_labels,
        "extractor_spec": extractor_spec,
        "pretrained_import": None,  # reserved for externally converted weights
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = (
        ARTIFACT_MAGIC
        + struct.pack("<I", ARTIFACT_VERSION)
        + struct.pack("<Q", len(header_bytes))
        + header_bytes
        + blob.getvalue()
    )
    digest = hashlib.sha256(body).digest()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(body + digest)
    import os

    os.replace(tmp, path)


def load_model(path: str) -> tuple[VqaModel, Vocab, list[str], dict | None]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(ARTIFACT_MAGIC) + 4 + 8 + 32 or raw[:4] != ARTIFACT_MAGIC:
        raise CorruptArtifact("not a model artifact")
    version = struct.unpack("<I", raw[4:8])[0]
    if version > ARTIFACT_VERSION:
        raise VersionMismatch(f"artifact format version {version} is newer than supported")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptArtifact("checksum mismatch")
    header_len = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    blob = body[16 + header_len :]

    config = ModelConfig.from_dict(header["config"])
    vocab = Vocab(header["vocab"])
    model = build_model(config)
    state = {}
    for item in header["tensors"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = item["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
        state[item["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, vocab, header["answer_space"], header.get("extractor_spec")
