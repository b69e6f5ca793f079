"""scikit-learn style estimators wrapping the pipeline and the classifier.

The preprocessing transformers operate on lists of :class:`Recording`
(the Segmenter emits :class:`Segment` lists), so they chain in an sklearn
``Pipeline``. :class:`GraphAdapterClassifier` exposes the adapter
fine-tuning loop through ``fit`` / ``predict`` / ``predict_proba`` and the
usual ``get_params`` / ``set_params`` / ``clone`` machinery.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .adapter import AdapterConfig
from .autodiff import fresh_tape
from .fileio import Checkpoint, load_checkpoint
from .harness import evaluate_model, graph_for_channels
from .heads import cross_entropy
from .model import VARIANTS, build_model
from .optim import Adam
from .signal import (
    Recording,
    bandpass_filter,
    notch_filter,
    resample,
    segment,
    select_channels,
)
from .util import child_rng


def check_segment_arrays(X) -> list[np.ndarray]:
    """Validate classifier input into a list of (channels, length) arrays.

    Accepts an (n, channels, length) array, or a list of 2-D arrays /
    Segment objects. Values must be finite floats.
    """
    if hasattr(X, "samples"):
        X = [X]
    items = []
    for entry in X:
        arr = np.asarray(entry.samples if hasattr(entry, "samples") else entry,
                         dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"each sample must be (channels, length), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples contain non-finite values")
        items.append(arr)
    if not items:
        raise ValueError("empty input")
    return items


def _check_recordings(X) -> list[Recording]:
    if isinstance(X, Recording):
        X = [X]
    bad = [type(r).__name__ for r in X if not isinstance(r, Recording)]
    if bad:
        raise TypeError(f"expected Recording instances, got {sorted(set(bad))}")
    return list(X)


class _RecordingTransform(BaseEstimator, TransformerMixin):
    """Stateless per-recording transform; fit is a no-op."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [self._apply(rec) for rec in _check_recordings(X)]

    def _apply(self, rec: Recording) -> Recording:
        raise NotImplementedError


class Resampler(_RecordingTransform):
    def __init__(self, target_hz: float = 256.0):
        self.target_hz = target_hz

    def _apply(self, rec):
        return resample(rec, self.target_hz)


class NotchFilter(_RecordingTransform):
    def __init__(self, f0: float = 50.0, q: float = 30.0):
        self.f0 = f0
        self.q = q

    def _apply(self, rec):
        return notch_filter(rec, self.f0, self.q)


class BandpassFilter(_RecordingTransform):
    def __init__(self, lo_hz: float = 0.1, hi_hz: float = 100.0, order: int = 4):
        self.lo_hz = lo_hz
        self.hi_hz = hi_hz
        self.order = order

    def _apply(self, rec):
        return bandpass_filter(rec, self.lo_hz, self.hi_hz, self.order)


class ChannelSelector(_RecordingTransform):
    def _apply(self, rec):
        return select_channels(rec)


class Segmenter(BaseEstimator, TransformerMixin):
    """Recordings in, fixed-window labeled segments out."""

    def __init__(self, window_s: float = 60.0, keep_fraction: float = 0.5):
        self.window_s = window_s
        self.keep_fraction = keep_fraction

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        segments = []
        for rec in _check_recordings(X):
            segments.extend(segment(rec, self.window_s, self.keep_fraction))
        return segments


class GraphAdapterClassifier(BaseEstimator, ClassifierMixin):
    """Graph adapter + frozen pretrained backbone as an sklearn classifier.

    ``checkpoint`` is an EGAC path or a loaded :class:`Checkpoint`.
    ``variant`` picks the adapter flavor (or ``baseline`` / ``frozen`` for
    the no-adapter configurations).
    """

    def __init__(self, checkpoint=None, variant: str = "gcn", hidden: int = 64,
                 n_layers: int = 2, epochs: int = 7, lr: float = 1e-5,
                 batch_size: int = 4, seed: int = 0, residual: bool = True,
                 sage_sample_k: int | None = None,
                 sage_weighted_mean: bool = False):
        self.checkpoint = checkpoint
        self.variant = variant
        self.hidden = hidden
        self.n_layers = n_layers
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.residual = residual
        self.sage_sample_k = sage_sample_k
        self.sage_weighted_mean = sage_weighted_mean

    def _resolve_checkpoint(self) -> Checkpoint:
        if self.checkpoint is None:
            raise ValueError("checkpoint is required (EGAC path or Checkpoint)")
        if isinstance(self.checkpoint, Checkpoint):
            return self.checkpoint
        return load_checkpoint(self.checkpoint)

    def fit(self, X, y):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        x = check_segment_arrays(X)
        labels = np.asarray(y, dtype=int)
        if labels.shape != (len(x),):
            raise ValueError(f"y has shape {labels.shape}, expected ({len(x)},)")
        self.classes_ = np.unique(labels)
        if len(self.classes_) != 2 or set(self.classes_) != {0, 1}:
            raise ValueError(f"binary labels {{0,1}} required, got {self.classes_}")
        lengths = {a.shape[1] for a in x}
        if self.variant in ("gcn", "sage", "gat") and len(lengths) != 1:
            raise ValueError(f"adapter variants need one segment length, got {sorted(lengths)}")
        channels = {a.shape[0] for a in x}
        if len(channels) != 1:
            raise ValueError(f"mixed channel counts: {sorted(channels)}")
        n_channels = channels.pop()

        ckpt = self._resolve_checkpoint()
        adapter_cfg = AdapterConfig(
            hidden=self.hidden, n_layers=self.n_layers, residual=self.residual,
            sage_sample_k=self.sage_sample_k,
            sage_weighted_mean=self.sage_weighted_mean,
        )
        self.model_ = build_model(
            self.variant, ckpt, max(lengths), n_channels,
            head_rng=child_rng(self.seed, "estimator-head"),
            adapter_rng=child_rng(self.seed, "estimator-adapter"),
            adapter_config=adapter_cfg,
            graph=graph_for_channels(n_channels),
        )
        optimizer = Adam(self.model_.bundle, lr=self.lr)
        order_rng = child_rng(self.seed, "estimator-batches")
        history = []
        for _ in range(self.epochs):
            order = order_rng.permutation(len(x))
            epoch_losses = []
            for lo in range(0, len(order), self.batch_size):
                batch = order[lo:lo + self.batch_size]
                with fresh_tape() as tape:
                    total = None
                    for i in batch:
                        term = cross_entropy(self.model_.logits_for(x[i]), labels[i])
                        total = term if total is None else total + term
                    loss = total * (1.0 / len(batch))
                    epoch_losses.append(loss.item())
                    tape.backward(loss)
                optimizer.step()
            history.append(float(np.mean(epoch_losses)))
        self.history_ = history
        self.n_features_in_ = n_channels
        return self

    def _ensure_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this GraphAdapterClassifier is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        self._ensure_fitted()
        return self.model_.predict_proba(check_segment_arrays(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def evaluate(self, X, y) -> dict:
        """F1 and AUROC on a labeled set (harness metric definitions)."""
        self._ensure_fitted()
        x = check_segment_arrays(X)
        labels = np.asarray(y, dtype=int)
        f1, auc, auc_err, *_ = evaluate_model(self.model_, x, labels,
                                              np.arange(len(x)))
        return {"f1": f1, "auroc": auc, "auroc_error": auc_err}
