"""The captioning network: CNN audio embedding, caption/meta keyword heads,
BLSTM encoder, sentence-length head, and an LSTM decoder with single-head
keyword attention.

Shape conventions: the feature input is (B, 3, F, T); the audio embedding
A is exposed as (B, D, T_a) with T_a = T / 8; sequences fed to attention
and recurrent layers run batch-first as (B, steps, D).  The decoder state
is (D + D_l)-wide, seeded by the encoder summary concatenated with the
length embedding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .config import ModelConfig


def select_top_indices(scores: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the k largest entries, descending; ties keep lower index."""
    _, idx = torch.sort(scores.detach(), dim=-1, descending=True, stable=True)
    return idx[..., :k]


def subsample_time(x: torch.Tensor) -> torch.Tensor:
    """Drop every second frame (keeps index 0; ceil-halves odd lengths)."""
    return x[:, ::2]


class CnnBlock(nn.Module):
    """conv3x3 -> batch norm -> ReLU -> 2x2 max pool."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=1, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )

    def forward(self, x):
        return self.net(x)


class FcBlock(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, out_dim), nn.ReLU())

    def forward(self, x):
        return self.net(x)


class TransformerBlock(nn.Module):
    """Post-norm encoder block: self-attention + feed-forward, residual."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 4 * dim), nn.ReLU(), nn.Linear(4 * dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x):  # (B, T, D)
        x = self.norm1(x + self.attn(x, x, x, need_weights=False)[0])
        return self.norm2(x + self.ff(x))


class AudioEmbed(nn.Module):
    """Three CNN blocks + two FC blocks; (B, 3, F, T) -> (B, D, T/8)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.cnn_channels
        self.blocks = nn.Sequential(CnnBlock(3, ch), CnnBlock(ch, ch), CnnBlock(ch, ch))
        self.fc1 = FcBlock(ch * (cfg.mel_bins // 8), cfg.hidden_dim)
        self.fc2 = FcBlock(cfg.hidden_dim, cfg.hidden_dim)
        self.mel_bins = cfg.mel_bins

    def forward(self, x):
        b, c, f, t = x.shape
        if c != 3 or f != self.mel_bins or f % 8 or t % 8:
            raise ValueError(f"expected (B, 3, {self.mel_bins}, 8k) input, got {tuple(x.shape)}")
        z = self.blocks(x)                       # (B, ch, F/8, T/8)
        z = z.flatten(1, 2).transpose(1, 2)      # (B, T/8, ch * F/8)
        z = self.fc2(self.fc1(z))                # (B, T/8, D)
        return z.transpose(1, 2)                 # (B, D, T/8)


class TransformerAudioEmbed(nn.Module):
    """Model5 front end: one CNN block, FC to D, one shared transformer
    block applied twice with 2x time sub-sampling after each pass."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.cnn_channels
        self.block = CnnBlock(3, ch)
        self.fc = nn.Linear(ch * (cfg.mel_bins // 2), cfg.hidden_dim)
        self.transformer = TransformerBlock(cfg.hidden_dim, cfg.mhsa_heads)
        self.mel_bins = cfg.mel_bins

    def forward(self, x):
        b, c, f, t = x.shape
        if c != 3 or f != self.mel_bins or f % 2 or t % 2:
            raise ValueError(f"expected (B, 3, {self.mel_bins}, 2k) input, got {tuple(x.shape)}")
        z = self.block(x)                        # (B, ch, F/2, T/2)
        z = z.flatten(1, 2).transpose(1, 2)      # (B, T/2, ch * F/2)
        z = self.fc(z)                           # (B, T/2, D)
        z = subsample_time(self.transformer(z))
        z = subsample_time(self.transformer(z))
        return z.transpose(1, 2)                 # (B, D, ceil(ceil(T/4)/2))


class KeywordHead(nn.Module):
    """MHSA (or an FC block) followed by a projection to keyword logits;
    probabilities come from a sigmoid of the time-max."""

    def __init__(self, cfg: ModelConfig, n_keywords: int, use_fc: bool):
        super().__init__()
        self.mix = FcBlock(cfg.hidden_dim, cfg.hidden_dim) if use_fc else None
        self.attn = None if use_fc else nn.MultiheadAttention(
            cfg.hidden_dim, cfg.mhsa_heads, batch_first=True)
        self.proj = nn.Linear(cfg.hidden_dim, n_keywords)

    def forward(self, a):  # a: (B, D, T_a)
        seq = a.transpose(1, 2)
        if self.mix is not None:
            seq = self.mix(seq)
        else:
            seq = self.attn(seq, seq, seq, need_weights=False)[0]
        logits = self.proj(seq)                  # (B, T_a, C_key)
        return torch.sigmoid(logits.max(dim=1).values)


class MetaKeywordHead(nn.Module):
    """Keyword head plus an embedding of the top-K estimated keywords.

    Selection is non-differentiable; gradients reach the embedding table
    through M and reach the probabilities only through their own loss.
    """

    def __init__(self, cfg: ModelConfig, n_keywords: int):
        super().__init__()
        self.head = KeywordHead(cfg, n_keywords, use_fc=False)
        self.embedding = nn.Embedding(n_keywords, cfg.hidden_dim)
        self.k = min(cfg.top_keywords, n_keywords)

    def forward(self, a):
        p_meta = self.head(a)
        idx = select_top_indices(p_meta, self.k)  # (B, K)
        return p_meta, self.embedding(idx), idx


class LengthHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.to_probs = nn.Linear(2 * cfg.hidden_dim, cfg.max_length)
        self.to_embed = nn.Linear(cfg.max_length, cfg.length_embed_dim)

    def forward(self, h, c):
        p_len = torch.softmax(self.to_probs(torch.cat([h, c], dim=-1)), dim=-1)
        return p_len, self.to_embed(p_len)


class KeywordAttention(nn.Module):
    """Single-head scaled dot-product over the meta keyword embeddings."""

    def __init__(self, state_dim: int, key_dim: int):
        super().__init__()
        self.query = nn.Linear(state_dim, state_dim)
        self.key = nn.Linear(key_dim, state_dim)
        self.value = nn.Linear(key_dim, state_dim)
        self.scale = math.sqrt(state_dim)

    def forward(self, h, m):  # h: (B, S), m: (B, K, D)
        q = self.query(h).unsqueeze(1)                       # (B, 1, S)
        weights = torch.softmax(q @ self.key(m).transpose(1, 2) / self.scale, dim=-1)
        return (weights @ self.value(m)).squeeze(1)          # (B, S)


@dataclass
class EncoderOutput:
    audio_embedding: torch.Tensor          # A: (B, D, T_a)
    p_caption_keywords: torch.Tensor       # (B, C_key)
    p_meta_keywords: torch.Tensor | None   # (B, C_key); None without meta block
    meta_embedding: torch.Tensor | None    # M: (B, K_m, D)
    meta_indices: torch.Tensor | None      # (B, K_m)
    h: torch.Tensor                        # (B, D)
    c: torch.Tensor                        # (B, D)
    p_length: torch.Tensor                 # (B, L_max)
    length_embedding: torch.Tensor         # (B, D_l)
    decoder_state: tuple[torch.Tensor, torch.Tensor]
    encoder_len: int


class CaptionNet(nn.Module):
    def __init__(self, cfg: ModelConfig, word_vocab_size: int, keyword_vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.word_vocab_size = word_vocab_size
        self.keyword_vocab_size = keyword_vocab_size
        d, dl = cfg.hidden_dim, cfg.length_embed_dim

        self.audio_embed = (TransformerAudioEmbed(cfg) if cfg.transformer_audio
                            else AudioEmbed(cfg))
        self.caption_head = KeywordHead(cfg, keyword_vocab_size, use_fc=cfg.caption_head_fc)
        self.meta_head = MetaKeywordHead(cfg, keyword_vocab_size) if cfg.use_meta_block else None
        self.encoder = nn.LSTM(d, d // 2, num_layers=cfg.encoder_blstm_layers,
                               bidirectional=True, batch_first=True)
        self.length_head = LengthHead(cfg)
        self.word_embedding = nn.Embedding(word_vocab_size, d)
        self.decoder_cell = nn.LSTMCell(d, d + dl)
        self.attention = (KeywordAttention(d + dl, d) if cfg.use_meta_block else None)
        self.out_proj = nn.Linear(d + dl, word_vocab_size)

    def encode(self, a: torch.Tensor, m: torch.Tensor | None):
        """BLSTM over (M, A, M) (or A alone); returns summary (h, c, seq_len)."""
        seq = a.transpose(1, 2)                   # (B, T_a, D)
        if m is not None:
            seq = torch.cat([m, seq, m], dim=1)
        _, (h_n, c_n) = self.encoder(seq)
        h = torch.cat([h_n[-2], h_n[-1]], dim=-1)  # last layer fwd+bwd
        c = torch.cat([c_n[-2], c_n[-1]], dim=-1)
        return h, c, seq.shape[1]

    def encode_context(self, x: torch.Tensor) -> EncoderOutput:
        a = self.audio_embed(x)
        p_cap = self.caption_head(a)
        if self.meta_head is not None:
            p_meta, m, idx = self.meta_head(a)
        else:
            p_meta = m = idx = None
        h, c, seq_len = self.encode(a, m)
        p_len, l = self.length_head(h, c)
        state = (torch.cat([h, l], dim=-1), torch.cat([c, l], dim=-1))
        return EncoderOutput(a, p_cap, p_meta, m, idx, h, c, p_len, l, state, seq_len)

    def decode_step(self, prev_word_embedding: torch.Tensor,
                    state: tuple[torch.Tensor, torch.Tensor],
                    meta_embedding: torch.Tensor | None):
        """One LSTM step -> posterior over the word vocabulary."""
        h, c = self.decoder_cell(prev_word_embedding, state)
        out = h
        if self.attention is not None and meta_embedding is not None:
            out = h + torch.tanh(self.attention(h, meta_embedding))
        posterior = torch.softmax(self.out_proj(out), dim=-1)
        return posterior, (h, c)

    def forward_teacher_forced(self, x: torch.Tensor, ids_a: torch.Tensor,
                               ids_b: torch.Tensor | None = None, beta: float = 1.0):
        """Run N teacher-forced steps; step t predicts the token after ids[:, t].

        Word mix-up blends the two embedded input sequences by beta and
        (1 - beta); it is skipped when the variant disables text mix-up,
        in which case the first item's tokens drive the decoder.
        """
        enc = self.encode_context(x)
        emb = self.word_embedding(ids_a)          # (B, N, D)
        if ids_b is not None and self.cfg.text_mixup and beta < 1.0:
            emb = beta * emb + (1.0 - beta) * self.word_embedding(ids_b)
        state = enc.decoder_state
        steps = []
        for t in range(ids_a.shape[1]):
            posterior, state = self.decode_step(emb[:, t], state, enc.meta_embedding)
            steps.append(posterior)
        return enc, torch.stack(steps, dim=1)     # (B, N, C_cap)


def build_model(cfg: ModelConfig, word_vocab_size: int, keyword_vocab_size: int,
                seed: int = 0) -> CaptionNet:
    torch.manual_seed(seed)
    return CaptionNet(cfg, word_vocab_size, keyword_vocab_size)


def save_checkpoint(stem: str | Path, model: CaptionNet, extra: dict | None = None) -> Path:
    """Write <stem>.pt (parameters) and <stem>.json (config manifest)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), stem.with_suffix(".pt"))
    manifest = {
        "model_config": model.cfg.to_dict(),
        "word_vocab_size": model.word_vocab_size,
        "keyword_vocab_size": model.keyword_vocab_size,
    }
    manifest.update(extra or {})
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=1))
    return stem.with_suffix(".json")


def load_checkpoint(path: str | Path) -> tuple[CaptionNet, dict]:
    """Accepts the manifest path or its stem; returns (model, manifest)."""
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    manifest = json.loads(path.read_text())
    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = CaptionNet(cfg, manifest["word_vocab_size"], manifest["keyword_vocab_size"])
    model.load_state_dict(torch.load(path.with_suffix(".pt"), weights_only=True))
    model.eval()
    return model, manifest
