"""Stacked 1-D convolutional backbone and masked self-supervised pretraining.

The encoder turns a (channels, L) signal into a (d_enc, T) embedding
sequence through six conv blocks (valid convolution, group norm, GELU);
all channels enter the first block jointly as input channels. Pretraining
masks contiguous spans of encoded steps, substitutes a learned mask
vector, and trains a one-layer transformer to reproduce the original
vectors under a masked cosine loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tensor, fresh_tape
from .adapter import glorot
from .optim import Adam, ModelBundle
from .util import child_rng


@dataclass
class EncoderConfig:
    n_channels: int = 19
    d_enc: int = 64
    kernels: tuple[int, ...] = (3, 2, 2, 2, 2, 2)
    strides: tuple[int, ...] = (3, 2, 2, 2, 2, 2)
    groups: int = 1

    def __post_init__(self):
        self.kernels = tuple(int(k) for k in self.kernels)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.kernels) != len(self.strides):
            raise ValueError("kernels and strides must have equal length")
        if any(k < 1 for k in self.kernels) or any(s < 1 for s in self.strides):
            raise ValueError("kernels and strides must be positive")
        if self.d_enc % self.groups != 0:
            raise ValueError("d_enc must be divisible by norm groups")

    @property
    def n_blocks(self) -> int:
        return len(self.kernels)

    def downsampling(self) -> int:
        return int(np.prod(self.strides))

    def output_length(self, input_len: int) -> int:
        """Per-block length recurrence; raises if any block underflows."""
        length = int(input_len)
        for k, s in zip(self.kernels, self.strides):
            if length < k:
                raise ShapeMismatchError(
                    f"input length {input_len} too short; encoder needs at least "
                    f"{self.min_input_length()} samples"
                )
            length = (length - k) // s + 1
        return length

    def min_input_length(self) -> int:
        """Smallest L for which every block still emits one step."""
        length = 1
        for k, s in zip(reversed(self.kernels), reversed(self.strides)):
            length = (length - 1) * s + k
        return length

    def to_dict(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "d_enc": self.d_enc,
            "kernels": list(self.kernels),
            "strides": list(self.strides),
            "groups": self.groups,
        }


class ConvEncoder:
    """Six-block convolutional feature extractor."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self._params: dict[str, Tensor] = {}
        c_in = config.n_channels
        for i, k in enumerate(config.kernels):
            w = glorot(rng, (config.d_enc, c_in, k), fan_in=c_in * k, fan_out=config.d_enc)
            self._params[f"block{i}.weight"] = Tensor(w, requires_grad=True)
            self._params[f"block{i}.bias"] = Tensor(np.zeros(config.d_enc), requires_grad=True)
            self._params[f"block{i}.gamma"] = Tensor(np.ones(config.d_enc), requires_grad=True)
            self._params[f"block{i}.beta"] = Tensor(np.zeros(config.d_enc), requires_grad=True)
            c_in = config.d_enc

    @classmethod
    def from_params(cls, config: EncoderConfig, params: dict[str, Tensor]) -> "ConvEncoder":
        enc = cls.__new__(cls)
        enc.config = config
        enc._params = dict(params)
        return enc

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def encode(self, x) -> Tensor:
        """(channels, L) signal -> (d_enc, T) embedding sequence."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        cfg = self.config
        if x.ndim != 2 or x.shape[0] != cfg.n_channels:
            raise ShapeMismatchError(
                f"encoder expects ({cfg.n_channels}, L) input, got {x.shape}")
        cfg.output_length(x.shape[1])  # validates minimum length
        h = x
        for i, (k, s) in enumerate(zip(cfg.kernels, cfg.strides)):
            h = ad.conv1d(h, self._params[f"block{i}.weight"], stride=s)
            h = h + self._params[f"block{i}.bias"].reshape(cfg.d_enc, 1)
            h = ad.group_norm(h, self._params[f"block{i}.gamma"],
                              self._params[f"block{i}.beta"], cfg.groups)
            h = ad.gelu(h)
        return h


@dataclass
class PretrainConfig:
    mask_rate: float = 0.1
    mask_span: int = 2
    epochs: int = 2
    batch_size: int = 4
    lr: float = 1e-3
    max_positions: int = 256
    ff_mult: int = 4

    def __post_init__(self):
        if not 0.0 <= self.mask_rate < 1.0:
            raise ValueError(f"mask_rate must be in [0, 1), got {self.mask_rate}")
        if self.mask_span < 1:
            raise ValueError("mask_span must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mask_rate": self.mask_rate,
            "mask_span": self.mask_span,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "max_positions": self.max_positions,
            "ff_mult": self.ff_mult,
        }


def mask_spans(n_steps: int, rate: float, span: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask built from uniformly drawn span starts.

    Starts are drawn without replacement from the positions where a full
    span fits (at least one start exists even when span >= n_steps); spans
    may overlap; drawing stops once the masked fraction reaches ``rate``.
    """
    mask = np.zeros(n_steps, dtype=bool)
    if rate <= 0.0:
        return mask
    n_starts = max(n_steps - span + 1, 1)
    for start in rng.permutation(n_starts):
        if mask.mean() >= rate:
            break
        mask[start:start + span] = True
    return mask


class MaskedPretrainer:
    """Learned mask vector, positional table, and one-layer transformer."""

    def __init__(self, d_enc: int, config: PretrainConfig, rng: np.random.Generator):
        self.d = d_enc
        self.config = config
        d, ff = d_enc, config.ff_mult * d_enc
        self._params = {
            "mask_vector": Tensor(rng.normal(0.0, 0.1, size=d), requires_grad=True),
            "positional": Tensor(rng.normal(0.0, 0.02, size=(config.max_positions, d)),
                                 requires_grad=True),
            "attn.wq": Tensor(glorot(rng, (d, d)), requires_grad=True),
            "attn.wk": Tensor(glorot(rng, (d, d)), requires_grad=True),
            "attn.wv": Tensor(glorot(rng, (d, d)), requires_grad=True),
            "attn.wo": Tensor(glorot(rng, (d, d)), requires_grad=True),
            "ffn.w1": Tensor(glorot(rng, (d, ff)), requires_grad=True),
            "ffn.b1": Tensor(np.zeros(ff), requires_grad=True),
            "ffn.w2": Tensor(glorot(rng, (ff, d)), requires_grad=True),
            "ffn.b2": Tensor(np.zeros(d), requires_grad=True),
        }

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def predict(self, embeddings: Tensor, mask: np.ndarray,
                attention: bool = True) -> Tensor:
        """(T, d) predictions from masked (d_enc, T) embeddings.

        ``attention=False`` bypasses the attention sublayer (diagnostic
        mode for locality checks); the FFN path still runs.
        """
        p = self._params
        t_steps = embeddings.shape[1]
        if t_steps > self.config.max_positions:
            raise ShapeMismatchError(
                f"{t_steps} steps exceed the positional table "
                f"({self.config.max_positions}); raise max_positions")
        x = embeddings.T                                      # (T, d)
        mask_col = Tensor(mask.astype(np.float64).reshape(-1, 1))
        keep_col = Tensor((~mask).astype(np.float64).reshape(-1, 1))
        x_in = x * keep_col + mask_col * p["mask_vector"].reshape(1, self.d)
        x_in = x_in + p["positional"][:t_steps]
        if attention:
            q = x_in @ p["attn.wq"]
            k = x_in @ p["attn.wk"]
            v = x_in @ p["attn.wv"]
            scores = (q @ k.T) * (1.0 / np.sqrt(self.d))
            attn = ad.softmax(scores, axis=1) @ v
            x_in = x_in + attn @ p["attn.wo"]
        hidden = ad.gelu(x_in @ p["ffn.w1"] + p["ffn.b1"])
        return x_in + hidden @ p["ffn.w2"] + p["ffn.b2"]


def masked_cosine_loss(pred: Tensor, target: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over masked steps of (1 - cosine similarity), rows as vectors."""
    n_masked = int(np.count_nonzero(mask))
    if n_masked == 0:
        raise ValueError("cosine loss needs at least one masked step")
    num = ad.mul(pred, target).sum(axis=1)
    sq_p = ad.mul(pred, pred).sum(axis=1)
    sq_t = ad.mul(target, target).sum(axis=1)
    den = ad.sqrt(ad.mul(sq_p, sq_t) + Tensor(np.full(pred.shape[0], 1e-24)))
    cos = ad.div(num, den)
    weights = Tensor(mask.astype(np.float64) / n_masked)
    return ad.mul(weights, 1.0 - cos).sum()


def pretrain_step(batch, encoder: ConvEncoder, pretrainer: MaskedPretrainer,
                  optimizer: Adam, config: PretrainConfig,
                  mask_rng: np.random.Generator) -> float:
    """One masked-reconstruction update over a batch of segments."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if config.mask_rate <= 0.0:
        raise ValueError("pre-training needs mask_rate > 0 (nothing to reconstruct)")
    with fresh_tape() as tape:
        losses = []
        for seg in batch:
            samples = seg.samples if hasattr(seg, "samples") else np.asarray(seg)
            emb = encoder.encode(samples)
            mask = mask_spans(emb.shape[1], config.mask_rate, config.mask_span, mask_rng)
            if not mask.any():
                mask = mask_spans(emb.shape[1], 1.0, config.mask_span, mask_rng)
            pred = pretrainer.predict(emb, mask)
            losses.append(masked_cosine_loss(pred, emb.T, mask))
        total = losses[0]
        for extra in losses[1:]:
            total = total + extra
        loss = total * (1.0 / len(losses))
        value = loss.item()
        tape.backward(loss)
    optimizer.step()
    return value


def pretrain(segments, enc_config: EncoderConfig, config: PretrainConfig,
             seed: int = 0):
    """Full pretraining loop; returns (encoder, pretrainer, per-step losses)."""
    if len(segments) == 0:
        raise ValueError("pretraining needs at least one segment")
    encoder = ConvEncoder(enc_config, child_rng(seed, "encoder-init"))
    pretrainer = MaskedPretrainer(enc_config.d_enc, config, child_rng(seed, "pretrainer-init"))
    bundle = ModelBundle()
    bundle.merge("encoder", encoder.parameters())
    bundle.merge("pretrainer", pretrainer.parameters())
    optimizer = Adam(bundle, lr=config.lr)
    order_rng = child_rng(seed, "pretrain-order")
    mask_rng = child_rng(seed, "pretrain-masks")
    losses = []
    for _ in range(config.epochs):
        order = order_rng.permutation(len(segments))
        for lo in range(0, len(order), config.batch_size):
            batch = [segments[i] for i in order[lo:lo + config.batch_size]]
            losses.append(pretrain_step(batch, encoder, pretrainer, optimizer,
                                        config, mask_rng))
    return encoder, pretrainer, losses
