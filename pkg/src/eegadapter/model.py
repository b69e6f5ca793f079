"""Downstream model assembly: optional adapter, backbone encoder, head."""

from __future__ import annotations

import numpy as np

from .adapter import VARIANTS as ADAPTER_VARIANTS
from .adapter import AdapterConfig, GraphAdapter
from .autodiff import Tensor, no_grad
from .encoder import ConvEncoder, EncoderConfig
from .fileio import Checkpoint
from .heads import ClassifierHead, aggregate
from .montage import MontageGraph, default_graph
from .optim import ModelBundle
from . import autodiff as ad

VARIANTS = ("baseline", "frozen") + ADAPTER_VARIANTS


class IncompatibleCheckpointError(ValueError):
    """Checkpoint dimensions do not match the dataset or configuration."""


class DownstreamModel:
    """Classifier over (channels, L) segments.

    ``baseline``: trainable backbone + head (no adapter).
    ``frozen``: frozen backbone + head only.
    ``gcn`` / ``sage`` / ``gat``: frozen backbone with that trainable
    graph adapter in front, plus the head.
    """

    def __init__(self, variant: str, encoder: ConvEncoder, head: ClassifierHead,
                 adapter: GraphAdapter | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant = variant
        self.encoder = encoder
        self.head = head
        self.adapter = adapter
        self.bundle = ModelBundle()
        if adapter is not None:
            self.bundle.merge("adapter", adapter.parameters())
        self.bundle.merge("encoder", encoder.parameters())
        self.bundle.merge("head", head.parameters())
        if variant != "baseline":
            self.bundle.freeze("encoder.")

    @property
    def backbone_frozen(self) -> bool:
        return self.variant != "baseline"

    def backbone_digest(self) -> str:
        return self.bundle.digest("encoder.")

    def logits_for(self, samples: np.ndarray) -> Tensor:
        x = samples if isinstance(samples, Tensor) else Tensor(samples)
        if self.adapter is not None:
            x = self.adapter.forward(x)
        return self.head.logits(aggregate(self.encoder.encode(x)))

    def predict_proba(self, segments) -> np.ndarray:
        """(n_samples, n_classes) softmax probabilities, gradient-free."""
        probs = []
        with no_grad():
            for seg in segments:
                samples = seg.samples if hasattr(seg, "samples") else np.asarray(seg)
                probs.append(ad.softmax(self.logits_for(samples), axis=-1).data)
        return np.stack(probs)

    def predict(self, segments) -> np.ndarray:
        return np.argmax(self.predict_proba(segments), axis=1)


def _copy_encoder_params(ckpt: Checkpoint) -> dict[str, Tensor]:
    params = {}
    for name, p in ckpt.bundle.items():
        if name.startswith("encoder."):
            params[name[len("encoder."):]] = Tensor(p.data.copy(), requires_grad=True)
    if not params:
        raise IncompatibleCheckpointError("checkpoint holds no encoder parameters")
    return params


def build_model(variant: str, ckpt: Checkpoint, raw_len: int, n_channels: int,
                head_rng: np.random.Generator,
                adapter_rng: np.random.Generator | None = None,
                adapter_config: AdapterConfig | None = None,
                graph: MontageGraph | None = None,
                n_classes: int = 2) -> DownstreamModel:
    """Instantiate a downstream model around a pretraining checkpoint.

    Encoder parameters are copied out of the checkpoint, so several folds
    can be built from one loaded checkpoint without sharing state.
    """
    enc_cfg = EncoderConfig(**ckpt.config["encoder"])
    mismatches = []
    if n_channels != enc_cfg.n_channels:
        mismatches.append(f"channels: dataset {n_channels} vs checkpoint {enc_cfg.n_channels}")
    input_len = int(ckpt.config.get("input_len", raw_len))
    effective_len = input_len if variant in ADAPTER_VARIANTS else raw_len
    if effective_len < enc_cfg.min_input_length():
        mismatches.append(
            f"length: {effective_len} below encoder minimum {enc_cfg.min_input_length()}")
    if mismatches:
        raise IncompatibleCheckpointError("; ".join(mismatches))

    encoder = ConvEncoder.from_params(enc_cfg, _copy_encoder_params(ckpt))
    head = ClassifierHead(enc_cfg.d_enc, n_classes, head_rng)
    adapter = None
    if variant in ADAPTER_VARIANTS:
        cfg = adapter_config if adapter_config is not None else AdapterConfig()
        cfg = AdapterConfig(
            variant=variant,
            hidden=cfg.hidden,
            n_layers=cfg.n_layers,
            gat_heads=cfg.gat_heads,
            input_len=input_len,
            raw_len=raw_len,
            residual=cfg.residual,
            sage_sample_k=cfg.sage_sample_k,
            sage_weighted_mean=cfg.sage_weighted_mean,
            leaky_slope=cfg.leaky_slope,
        )
        if adapter_rng is None:
            raise ValueError("adapter variants need an adapter_rng")
        adapter = GraphAdapter(cfg, graph if graph is not None else default_graph(),
                               adapter_rng)
    return DownstreamModel(variant, encoder, head, adapter)
