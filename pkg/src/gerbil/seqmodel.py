"""Variational transformer over feature-token sequences.

An encoder maps a token sequence to a Gaussian latent (mean ``m``,
log-scale ``sigma``); a decoder reconstructs the sequence autoregressively
from a latent point; an evaluator MLP regresses subset utility from the
same latent point. The three parts are trained jointly.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.attention import SDPBackend, sdpa_kernel

from .core import EOS, N_SPECIAL, PAD, SOS, ConfigError, GerbilError, SubsetRecord, canonicalize

logger = logging.getLogger(__name__)

KL_FORMS = ("verbatim", "standard")
CHECKPOINT_FORMAT = "gerbil-seqmodel"
CHECKPOINT_VERSION = 1
# the plain attention kernel is much faster than the flash one for short CPU sequences
_ATTENTION = [SDPBackend.MATH]


class SequenceTooLong(GerbilError):
    pass


class UnknownToken(GerbilError):
    pass


class NaNLoss(GerbilError):
    def __init__(self, epoch, batch, components):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {components}")


class CheckpointError(GerbilError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    layers: int = 2
    heads: int = 8
    ff_dim: int = 256
    latent_dim: int = 64
    evaluator_hidden: tuple[int, ...] = (200, 200)
    # None -> n_features + 2
    max_len: int | None = None
    variational: bool = True
    kl_form: str = "verbatim"
    memory_slots: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "evaluator_hidden", tuple(int(h) for h in self.evaluator_hidden))
        dims = (self.d_model, self.layers, self.heads, self.ff_dim, self.latent_dim, self.memory_slots)
        if min(dims) <= 0 or any(h <= 0 for h in self.evaluator_hidden):
            raise ConfigError("model dimensions must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if self.kl_form not in KL_FORMS:
            raise ConfigError(f"kl_form must be one of {KL_FORMS}")
        if self.max_len is not None and self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def resolved_max_len(self, n_features: int) -> int:
        return n_features + 2 if self.max_len is None else self.max_len


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.8
    beta: float = 0.2
    gamma: float = 0.001
    batch_size: int = 1024
    epochs: int = 400
    lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.batch_size <= 0 or self.epochs <= 0 or self.lr <= 0:
            raise ConfigError("batch_size, epochs and lr must be positive")


@dataclass
class LatentPoint:
    m: torch.Tensor
    sigma: torch.Tensor | None = None
    e_star: torch.Tensor | None = None


class SubsetVAE(nn.Module):
    def __init__(self, n_features: int, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.n_features = n_features
        self.cfg = cfg
        self.vocab_size = n_features + N_SPECIAL
        self.max_len = cfg.resolved_max_len(n_features)
        d = cfg.d_model

        self.embed = nn.Embedding(self.vocab_size, d, padding_idx=PAD)
        self.pos = nn.Embedding(self.max_len + 1, d)
        enc_layer = nn.TransformerEncoderLayer(d, cfg.heads, cfg.ff_dim, cfg.dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, cfg.layers, enable_nested_tensor=False)
        self.to_mean = nn.Linear(d, cfg.latent_dim)
        self.to_logscale = nn.Linear(d, cfg.latent_dim) if cfg.variational else None

        self.to_memory = nn.Linear(cfg.latent_dim, cfg.memory_slots * d)
        dec_layer = nn.TransformerDecoderLayer(d, cfg.heads, cfg.ff_dim, cfg.dropout, batch_first=True)
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.layers)
        self.out = nn.Linear(d, self.vocab_size)

        layers: list[nn.Module] = []
        width = cfg.latent_dim
        for h in cfg.evaluator_hidden:
            layers += [nn.Linear(width, h), nn.SiLU()]
            width = h
        layers.append(nn.Linear(width, 1))
        self.evaluator = nn.Sequential(*layers)

    def _embed(self, tokens: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(tokens.shape[1], device=tokens.device)
        return self.embed(tokens) + self.pos(positions)[None]

    def encode_batch(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Mean and log-scale for a PAD-padded (batch, length) token tensor."""
        pad = tokens == PAD
        h = self.encoder(self._embed(tokens), src_key_padding_mask=pad)
        keep = (~pad).unsqueeze(-1).to(h.dtype)
        pooled = (h * keep).sum(dim=1) / keep.sum(dim=1).clamp_min(1.0)
        m = self.to_mean(pooled)
        sigma = self.to_logscale(pooled) if self.to_logscale is not None else None
        return m, sigma

    def decode_batch(self, e: torch.Tensor, dec_in: torch.Tensor) -> torch.Tensor:
        """Next-token logits for every position of ``dec_in`` (which starts with SOS)."""
        T = dec_in.shape[1]
        memory = self.to_memory(e).view(e.shape[0], self.cfg.memory_slots, self.cfg.d_model)
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool, device=dec_in.device), diagonal=1)
        h = self.decoder(
            self._embed(dec_in),
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=dec_in == PAD,
        )
        return self.out(h)

    def evaluate(self, e: torch.Tensor) -> torch.Tensor:
        return self.evaluator(e).squeeze(-1)


def reparameterize(m: torch.Tensor, sigma: torch.Tensor | None, eps: torch.Tensor | None) -> torch.Tensor:
    """``m + eps * exp(sigma)``; returns ``m`` when there is no log-scale or no noise."""
    if sigma is None or eps is None:
        return m
    return m + eps * torch.exp(sigma)


def kl_loss(m: torch.Tensor, sigma: torch.Tensor | None, form: str = "verbatim") -> torch.Tensor:
    """Divergence-to-prior penalty, summed over latent dims and averaged over the batch.

    ``verbatim``: sum(exp(s) - (1 + s) + m^2).
    ``standard``: the Gaussian KL for std = exp(s), 0.5 * sum(exp(2s) - 1 - 2s + m^2).
    """
    if sigma is None:
        return torch.zeros((), dtype=m.dtype)
    if m.dim() == 1:
        m, sigma = m[None], sigma[None]
    if form == "verbatim":
        per = torch.exp(sigma) - (1 + sigma) + m**2
    elif form == "standard":
        per = 0.5 * (torch.exp(2 * sigma) - 1 - 2 * sigma + m**2)
    else:
        raise ConfigError(f"unknown kl_form {form!r}")
    return per.sum(dim=-1).mean()


def joint_loss(l_rec, l_evt, l_kl, cfg: TrainConfig = TrainConfig()):
    return cfg.alpha * l_rec + cfg.beta * l_evt + cfg.gamma * l_kl


def _check_tokens(model: SubsetVAE, seq: Sequence[int]):
    if len(seq) == 0:
        raise ValueError("empty token sequence")
    if len(seq) > model.max_len:
        raise SequenceTooLong(f"sequence of length {len(seq)} exceeds max_len {model.max_len}")
    for t in seq:
        if not N_SPECIAL <= int(t) < model.vocab_size:
            raise UnknownToken(f"token {t} is not a feature token of a {model.vocab_size}-token vocabulary")


def pad_sequences(seqs: Sequence[Sequence[int]], length: int | None = None):
    """Encoder input, decoder input (SOS-prefixed) and EOS-terminated targets, PAD-filled."""
    L = max(len(s) for s in seqs) if length is None else length
    n = len(seqs)
    enc = torch.full((n, L), PAD, dtype=torch.long)
    dec_in = torch.full((n, L + 1), PAD, dtype=torch.long)
    target = torch.full((n, L + 1), PAD, dtype=torch.long)
    dec_in[:, 0] = SOS
    for i, s in enumerate(seqs):
        q = len(s)
        row = torch.as_tensor(list(s), dtype=torch.long)
        enc[i, :q] = row
        dec_in[i, 1 : q + 1] = row
        target[i, :q] = row
        target[i, q] = EOS
    return enc, dec_in, target


def _token_nll(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-example sum of next-token NLL over non-PAD targets."""
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, target.clamp_min(0).unsqueeze(-1)).squeeze(-1)
    return -(picked * (target != PAD).to(picked.dtype)).sum(dim=-1)


def encode(seq: Sequence[int], model: SubsetVAE) -> LatentPoint:
    _check_tokens(model, seq)
    enc, _, _ = pad_sequences([seq])
    m, sigma = model.encode_batch(enc)
    return LatentPoint(m[0], None if sigma is None else sigma[0])


def decode_logits(e_star: torch.Tensor, prefix: Sequence[int], model: SubsetVAE) -> torch.Tensor:
    if len(prefix) == 0 or prefix[0] != SOS:
        raise ValueError("prefix must start with SOS")
    dec_in = torch.as_tensor([list(prefix)], dtype=torch.long)
    return model.decode_batch(e_star[None], dec_in)[0, -1]


def reconstruction_loss(e_star: torch.Tensor, seq: Sequence[int], model: SubsetVAE) -> torch.Tensor:
    """Teacher-forced NLL of ``seq`` followed by EOS given the latent point."""
    _, dec_in, target = pad_sequences([seq])
    return _token_nll(model.decode_batch(e_star[None], dec_in), target)[0]


def evaluator_loss(e_star: torch.Tensor, v, model: SubsetVAE) -> torch.Tensor:
    """Mean squared error of the evaluator on one point (1-D) or a batch (2-D)."""
    v = torch.as_tensor(v, dtype=e_star.dtype)
    pred = model.evaluate(e_star if e_star.dim() == 2 else e_star[None])
    return torch.mean((pred - v.reshape(-1)) ** 2)


@dataclass
class TrainResult:
    model: SubsetVAE
    curve: list[dict] = field(default_factory=list)
    model_cfg: ModelConfig = ModelConfig()
    train_cfg: TrainConfig = TrainConfig()


def _batch_losses(model, enc, dec_in, target, v, eps):
    m, sigma = model.encode_batch(enc)
    e = reparameterize(m, sigma, eps if sigma is not None else None)
    l_rec = _token_nll(model.decode_batch(e, dec_in), target).mean()
    l_evt = torch.mean((model.evaluate(e) - v) ** 2)
    l_kl = kl_loss(m, sigma, model.cfg.kl_form)
    return l_rec, l_evt, l_kl


def build_model(n_features: int, model_cfg: ModelConfig, seed: int) -> SubsetVAE:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return SubsetVAE(n_features, model_cfg)


def train(
    records: Sequence[SubsetRecord],
    n_features: int,
    model_cfg: ModelConfig = ModelConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Minibatch Adam on the weighted joint loss; deterministic for a given seed."""
    if not records:
        raise ValueError("no training records")
    model = build_model(n_features, model_cfg, train_cfg.seed)
    for rec in records:
        _check_tokens(model, rec.tokens)
    enc, dec_in, target = pad_sequences([r.tokens for r in records])
    v = torch.tensor([r.utility for r in records], dtype=torch.float32)
    lengths = torch.tensor([len(r.tokens) for r in records])
    n = len(records)
    bs = min(train_cfg.batch_size, n)
    gen = torch.Generator().manual_seed(train_cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    curve = []
    model.train()
    with sdpa_kernel(_ATTENTION):
        for epoch in range(1, train_cfg.epochs + 1):
            perm = torch.randperm(n, generator=gen)
            sums = np.zeros(4)
            for b, start in enumerate(range(0, n, bs)):
                idx = perm[start : start + bs]
                eps = torch.randn(len(idx), model_cfg.latent_dim, generator=gen)
                # trim to the longest sequence in this batch; padding is fully masked
                L = int(lengths[idx].max())
                l_rec, l_evt, l_kl = _batch_losses(
                    model, enc[idx, :L], dec_in[idx, : L + 1], target[idx, : L + 1], v[idx], eps
                )
                loss = joint_loss(l_rec, l_evt, l_kl, train_cfg)
                parts = [float(x.detach()) for x in (l_rec, l_evt, l_kl, loss)]
                if not all(math.isfinite(x) for x in parts):
                    raise NaNLoss(epoch, b, dict(zip(("L_rec", "L_evt", "L_kl", "joint"), parts)))
                opt.zero_grad()
                loss.backward()
                opt.step()
                sums += np.array(parts) * len(idx)
            row = dict(zip(("epoch", "L_rec", "L_evt", "L_kl", "joint"), [epoch, *(float(x) for x in sums / n)]))
            curve.append(row)
            if on_epoch is not None:
                on_epoch(row)
            if epoch == 1 or epoch % 50 == 0 or epoch == train_cfg.epochs:
                logger.info("epoch %d rec %.4f evt %.5f kl %.3f joint %.4f", epoch, *list(row.values())[1:])
    model.eval()
    return TrainResult(model, curve, model_cfg, train_cfg)


@torch.no_grad()
@sdpa_kernel(_ATTENTION)
def token_accuracy(model: SubsetVAE, seqs: Sequence[Sequence[int]], batch_size: int = 1024) -> float:
    """Teacher-forced next-token accuracy (EOS included) decoding from the mean latent."""
    hits = total = 0
    for start in range(0, len(seqs), batch_size):
        enc, dec_in, target = pad_sequences(seqs[start : start + batch_size])
        m, _ = model.encode_batch(enc)
        pred = model.decode_batch(m, dec_in).argmax(dim=-1)
        mask = target != PAD
        hits += int(((pred == target) & mask).sum())
        total += int(mask.sum())
    return hits / total


@torch.no_grad()
@sdpa_kernel(_ATTENTION)
def generate_raw(model: SubsetVAE, e: torch.Tensor, max_len: int | None = None) -> list[list[int]]:
    """Greedy decoding from each row of ``e`` until EOS or ``max_len`` tokens.

    Returned sequences keep the EOS (when produced) and anything before it.
    """
    max_len = model.max_len if max_len is None else max_len
    if e.dim() == 1:
        e = e[None]
    B = e.shape[0]
    seq = torch.full((B, 1), SOS, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    for _ in range(max_len):
        logits = model.decode_batch(e, seq)[:, -1]
        nxt = logits.argmax(dim=-1)
        nxt = torch.where(done, torch.full_like(nxt, PAD), nxt)
        seq = torch.cat([seq, nxt[:, None]], dim=1)
        done |= nxt == EOS
        if bool(done.all()):
            break
    out = []
    for row in seq[:, 1:].tolist():
        toks = []
        for t in row:
            toks.append(t)
            if t == EOS:
                break
        out.append(toks)
    return out


def generate(e: torch.Tensor, model: SubsetVAE, max_len: int | None = None) -> tuple[int, ...]:
    return canonicalize(generate_raw(model, e, max_len)[0])


def save_checkpoint(result: TrainResult, path) -> None:
    model = result.model
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "n_features": model.n_features,
            "vocab_size": model.vocab_size,
            "model_config": asdict(result.model_cfg),
            "train_config": asdict(result.train_cfg),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path) -> TrainResult:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a sequence-model checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')}")
    model_cfg = ModelConfig(**blob["model_config"])
    train_cfg = TrainConfig(**blob["train_config"])
    n_features = int(blob["n_features"])
    if blob["vocab_size"] != n_features + N_SPECIAL:
        raise CheckpointError("vocabulary size does not match the feature count")
    model = SubsetVAE(n_features, model_cfg)
    try:
        model.load_state_dict(blob["state_dict"], strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"weights do not match the stored configuration: {exc}") from None
    model.eval()
    return TrainResult(model, [], model_cfg, train_cfg)


def write_curve(curve: Sequence[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "L_rec", "L_evt", "L_kl", "joint"])
        for row in curve:
            w.writerow([row["epoch"], *(f"{row[k]:.8g}" for k in ("L_rec", "L_evt", "L_kl", "joint"))])
