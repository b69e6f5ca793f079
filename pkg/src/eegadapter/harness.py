"""Experiment orchestration: pretraining, k-fold fine-tuning, reporting.

Fine-tuning follows the fixed protocol: per fold, rebuild the model around
the pretraining checkpoint, freeze the backbone for adapter variants
(the ``baseline`` variant trains it, ``frozen`` trains only the head),
run Adam for a fixed number of epochs, evaluate F1/AUROC on the held-out
split each epoch, and report last-epoch metrics. A digest audit asserts
frozen backbones are bitwise unchanged after every fold.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapter import AdapterConfig, GraphAdapter
from .autodiff import fresh_tape
from .encoder import ConvEncoder, EncoderConfig, PretrainConfig, pretrain
from .fileio import Checkpoint, load_checkpoint, load_dataset, save_checkpoint
from .heads import ClassifierHead, cross_entropy
from .metrics import MetricError, auroc, f1_score
from .model import VARIANTS, DownstreamModel, build_model
from .montage import MontageGraph, default_graph, graph_from_weights
from .optim import Adam, ModelBundle
from .signal import PipelineError, Segment
from .synth import SynthSpec, synthesize_dataset
from .util import child_rng


class ConfigError(ValueError):
    """Malformed experiment configuration."""


class KFoldError(ValueError):
    """Fold request incompatible with the label distribution."""


class FreezeAuditError(RuntimeError):
    """A frozen backbone changed during fine-tuning."""


def _from_dict(cls, data: dict, context: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")
    kwargs = dict(data)
    for key in ("kernels", "strides", "band"):
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {context}: {exc}") from exc


@dataclass
class ExperimentConfig:
    task: str = "synthetic"        # "synthetic" or a directory of .eegb segments
    variant: str = "gcn"
    k_folds: int = 5
    epochs: int = 7
    lr: float = 1e-5
    batch_size: int = 4
    seed: int = 0
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key, sub in (("adapter", AdapterConfig), ("encoder", EncoderConfig),
                         ("pretrain", PretrainConfig), ("synth", SynthSpec)):
            if key in kwargs:
                kwargs[key] = _from_dict(sub, kwargs[key], key)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("kernels", "strides"):
            out["encoder"][key] = list(out["encoder"][key])
        out["synth"]["band"] = list(out["synth"]["band"])
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def kfold_split(labels, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold partitions, deterministic per seed.

    Eval sets are disjoint, jointly exhaustive, and per class their sizes
    differ by at most one.
    """
    labels = np.asarray(labels)
    if k > len(labels):
        raise KFoldError(f"k={k} exceeds {len(labels)} samples")
    rng = child_rng(seed, "folds")
    eval_sets: list[list[int]] = [[] for _ in range(k)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            raise KFoldError(f"class {cls} has {len(idx)} samples, fewer than k={k}")
        rng.shuffle(idx)
        for fold, chunk in enumerate(np.array_split(idx, k)):
            eval_sets[fold].extend(chunk.tolist())
    everything = np.arange(len(labels))
    folds = []
    for chunk in eval_sets:
        eval_idx = np.sort(np.array(chunk, dtype=int))
        train_idx = np.setdiff1d(everything, eval_idx)
        folds.append((train_idx, eval_idx))
    return folds


@dataclass
class FoldReport:
    fold: int
    train_size: int
    eval_size: int
    train_loss: list[float]
    eval_f1: list[float]
    eval_auroc: list[float | None]
    f1: float
    auroc: float | None
    auroc_error: str | None
    trainable_params: int
    backbone_unchanged: bool
    wall_clock_s: float
    eval_labels: np.ndarray = field(repr=False, default=None)
    eval_preds: np.ndarray = field(repr=False, default=None)
    eval_scores: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "train_size": self.train_size,
            "eval_size": self.eval_size,
            "train_loss": self.train_loss,
            "eval_f1": self.eval_f1,
            "eval_auroc": self.eval_auroc,
            "f1": self.f1,
            "auroc": self.auroc,
            "auroc_error": self.auroc_error,
            "trainable_params": self.trainable_params,
            "backbone_unchanged": self.backbone_unchanged,
            "wall_clock_s": self.wall_clock_s,
        }


def graph_for_channels(n_channels: int) -> MontageGraph:
    """Canonical montage for 19 channels, uniform complete graph otherwise."""
    if n_channels == 19:
        return default_graph()
    w = np.full((n_channels, n_channels), 0.5)
    np.fill_diagonal(w, 0.0)
    return graph_from_weights(w)


def segments_from_recordings(recordings) -> list[Segment]:
    segments = []
    for rec in recordings:
        if rec.label is None:
            raise PipelineError(f"recording {rec.subject_id!r} has no label")
        segments.append(Segment(rec.samples, rec.label, source=rec.subject_id))
    return segments


def load_segments(config: ExperimentConfig) -> list[Segment]:
    if config.task == "synthetic":
        return synthesize_dataset(config.synth, seed=config.seed)
    return segments_from_recordings(load_dataset(config.task))


def _dataset_arrays(segments):
    labels = np.array([s.label for s in segments], dtype=int)
    x = [np.asarray(s.samples, dtype=np.float64) for s in segments]
    channels = {a.shape[0] for a in x}
    if len(channels) != 1:
        raise PipelineError(f"mixed channel counts in dataset: {sorted(channels)}")
    return x, labels, channels.pop()


def evaluate_model(model: DownstreamModel, x, labels, indices):
    probs = model.predict_proba([x[i] for i in indices])
    preds = np.argmax(probs, axis=1)
    scores = probs[:, 1]
    ref = labels[indices]
    f1 = f1_score(preds, ref)
    try:
        auc, auc_err = auroc(scores, ref), None
    except MetricError as exc:
        auc, auc_err = None, str(exc)
    return f1, auc, auc_err, preds, scores, ref


def _train_one_fold(model: DownstreamModel, x, labels, train_idx, eval_idx,
                    config: ExperimentConfig, fold: int) -> FoldReport:
    t0 = time.perf_counter()
    digest_before = model.backbone_digest()
    optimizer = Adam(model.bundle, lr=config.lr)
    order_rng = child_rng(config.seed, fold, "batches")
    f1_epoch0, auc_epoch0, auc_err, *_ = evaluate_model(model, x, labels, eval_idx)
    train_loss, eval_f1, eval_auroc = [], [f1_epoch0], [auc_epoch0]
    last = (f1_epoch0, auc_epoch0, auc_err, None, None, labels[eval_idx])
    for _ in range(config.epochs):
        order = order_rng.permutation(train_idx)
        batch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            with fresh_tape() as tape:
                total = None
                for i in batch:
                    term = cross_entropy(model.logits_for(x[i]), labels[i])
                    total = term if total is None else total + term
                loss = total * (1.0 / len(batch))
                batch_losses.append(loss.item())
                tape.backward(loss)
            optimizer.step()
        train_loss.append(float(np.mean(batch_losses)))
        last = evaluate_model(model, x, labels, eval_idx)
        eval_f1.append(last[0])
        eval_auroc.append(last[1])
    digest_after = model.backbone_digest()
    unchanged = digest_after == digest_before
    if model.backbone_frozen and not unchanged:
        raise FreezeAuditError(
            f"fold {fold}: frozen backbone parameters changed during fine-tuning")
    f1, auc, auc_err, preds, scores, ref = last
    return FoldReport(
        fold=fold,
        train_size=len(train_idx),
        eval_size=len(eval_idx),
        train_loss=train_loss,
        eval_f1=eval_f1,
        eval_auroc=eval_auroc,
        f1=f1,
        auroc=auc,
        auroc_error=auc_err,
        trainable_params=model.bundle.count_params(trainable_only=True),
        backbone_unchanged=unchanged,
        wall_clock_s=time.perf_counter() - t0,
        eval_labels=ref,
        eval_preds=preds,
        eval_scores=scores,
    )


def finetune(config: ExperimentConfig, segments, ckpt: Checkpoint,
             save_models_dir=None) -> list[FoldReport]:
    """k-fold fine-tuning of one variant around a pretraining checkpoint."""
    x, labels, n_channels = _dataset_arrays(segments)
    lengths = {a.shape[1] for a in x}
    if config.variant in ("gcn", "sage", "gat") and len(lengths) != 1:
        raise PipelineError(
            f"adapter variants need a uniform segment length, got {sorted(lengths)}; "
            "preprocess the dataset to a single length first")
    raw_len = max(lengths)
    graph = graph_for_channels(n_channels)
    folds = kfold_split(labels, config.k_folds, config.seed)
    reports = []
    for fold, (train_idx, eval_idx) in enumerate(folds):
        model = build_model(
            config.variant, ckpt, raw_len, n_channels,
            head_rng=child_rng(config.seed, fold, "head"),
            adapter_rng=child_rng(config.seed, fold, "adapter"),
            adapter_config=config.adapter,
            graph=graph,
        )
        reports.append(_train_one_fold(model, x, labels, train_idx, eval_idx,
                                       config, fold))
        if save_models_dir is not None:
            path = Path(save_models_dir) / f"model_fold{fold}.egac"
            save_model_checkpoint(path, model, config, raw_len, n_channels)
    return reports


def run_pretrain(config: ExperimentConfig, out_path) -> list[float]:
    """Pretrain on the configured task and write an EGAC checkpoint."""
    segments = load_segments(config)
    lengths = {s.samples.shape[1] for s in segments}
    if len(lengths) != 1:
        raise PipelineError(f"pretraining needs a uniform segment length, got {sorted(lengths)}")
    input_len = lengths.pop()
    enc_cfg = config.encoder
    t_steps = enc_cfg.output_length(input_len)
    pre_cfg = config.pretrain
    if pre_cfg.max_positions < t_steps:
        pre_cfg = dataclasses.replace(pre_cfg, max_positions=t_steps)
    encoder, pretrainer, losses = pretrain(segments, enc_cfg, pre_cfg, seed=config.seed)
    bundle = ModelBundle()
    bundle.merge("encoder", encoder.parameters())
    bundle.merge("pretrainer", pretrainer.parameters())
    ckpt_config = {
        "kind": "pretrained-backbone",
        "encoder": enc_cfg.to_dict(),
        "pretrain": pre_cfg.to_dict(),
        "input_len": int(input_len),
        "seed": config.seed,
        "final_loss": losses[-1],
    }
    save_checkpoint(out_path, ckpt_config, bundle, rng_state={"seed": config.seed})
    return losses


def save_model_checkpoint(path, model: DownstreamModel, config: ExperimentConfig,
                          raw_len: int, n_channels: int) -> None:
    """Persist a fine-tuned downstream model (adapter + encoder + head)."""
    adapter_cfg = None
    if model.adapter is not None:
        adapter_cfg = dataclasses.asdict(model.adapter.config)
    ckpt_config = {
        "kind": "downstream-model",
        "variant": model.variant,
        "encoder": model.encoder.config.to_dict(),
        "adapter": adapter_cfg,
        "raw_len": int(raw_len),
        "n_channels": int(n_channels),
        "n_classes": model.head.n_classes,
    }
    save_checkpoint(path, ckpt_config, model.bundle)


def load_model_checkpoint(path) -> DownstreamModel:
    ckpt = load_checkpoint(path)
    cfg = ckpt.config
    if cfg.get("kind") != "downstream-model":
        raise ConfigError(f"{path} is not a downstream model checkpoint")
    enc_cfg = EncoderConfig(**cfg["encoder"])
    enc_params = {n[len("encoder."):]: p for n, p in ckpt.bundle.items()
                  if n.startswith("encoder.")}
    encoder = ConvEncoder.from_params(enc_cfg, enc_params)
    head_params = {n[len("head."):]: p for n, p in ckpt.bundle.items()
                   if n.startswith("head.")}
    head = ClassifierHead.from_params(enc_cfg.d_enc, cfg["n_classes"], head_params)
    adapter = None
    if cfg["adapter"] is not None:
        acfg = _from_dict(AdapterConfig, cfg["adapter"], "adapter")
        graph = graph_for_channels(cfg["n_channels"])
        adapter_params = {n[len("adapter."):]: p for n, p in ckpt.bundle.items()
                          if n.startswith("adapter.")}
        adapter = GraphAdapter.from_params(acfg, graph, adapter_params)
    model = DownstreamModel(cfg["variant"], encoder, head, adapter)
    # restore the exact trainable flags the checkpoint carries
    for name, p in ckpt.bundle.items():
        model.bundle[name].requires_grad = p.requires_grad
    return model


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def report(fold_reports: list[FoldReport], config: ExperimentConfig) -> dict:
    """Aggregate fold metrics: fold mean +/- std plus pooled predictions."""
    if not fold_reports:
        raise ValueError("need at least one fold report")
    f1s = np.array([r.f1 for r in fold_reports], dtype=float)
    aucs = [r.auroc for r in fold_reports if r.auroc is not None]
    pooled_labels = np.concatenate([r.eval_labels for r in fold_reports])
    pooled_preds = np.concatenate([r.eval_preds for r in fold_reports])
    pooled_scores = np.concatenate([r.eval_scores for r in fold_reports])
    try:
        pooled_auc = auroc(pooled_scores, pooled_labels)
    except MetricError:
        pooled_auc = None
    return {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "variant": config.variant,
        "k_folds": config.k_folds,
        "seed": config.seed,
        "trainable_params": fold_reports[0].trainable_params,
        "folds": [r.to_dict() for r in fold_reports],
        "f1_mean": float(f1s.mean()),
        "f1_std": float(f1s.std()),
        "auroc_mean": float(np.mean(aucs)) if aucs else None,
        "auroc_std": float(np.std(aucs)) if aucs else None,
        "auroc_folds_used": len(aucs),
        "pooled_f1": f1_score(pooled_preds, pooled_labels),
        "pooled_auroc": pooled_auc,
        "wall_clock_s": float(sum(r.wall_clock_s for r in fold_reports)),
    }


_REPORT_REQUIRED = {
    "config": dict, "config_hash": str, "variant": str, "k_folds": int,
    "seed": int, "trainable_params": int, "folds": list, "f1_mean": float,
    "f1_std": float, "pooled_f1": float, "wall_clock_s": float,
}
_FOLD_REQUIRED = {
    "fold": int, "train_size": int, "eval_size": int, "train_loss": list,
    "eval_f1": list, "eval_auroc": list, "f1": float,
    "trainable_params": int, "backbone_unchanged": bool, "wall_clock_s": float,
}


def validate_report(data: dict) -> None:
    """Schema check for report dictionaries; raises ValueError on violation."""
    for key, typ in _REPORT_REQUIRED.items():
        if key not in data:
            raise ValueError(f"report missing key {key!r}")
        if not isinstance(data[key], typ):
            raise ValueError(f"report key {key!r} has type {type(data[key]).__name__}, "
                             f"expected {typ.__name__}")
    for bound in ("f1_mean", "pooled_f1"):
        if not 0.0 <= data[bound] <= 1.0:
            raise ValueError(f"{bound} out of [0, 1]: {data[bound]}")
    if data["auroc_mean"] is not None and not 0.0 <= data["auroc_mean"] <= 1.0:
        raise ValueError(f"auroc_mean out of [0, 1]: {data['auroc_mean']}")
    for fold in data["folds"]:
        for key, typ in _FOLD_REQUIRED.items():
            if key not in fold:
                raise ValueError(f"fold report missing key {key!r}")
            if not isinstance(fold[key], typ):
                raise ValueError(f"fold key {key!r} has type {type(fold[key]).__name__}")
        if not 0.0 <= fold["f1"] <= 1.0:
            raise ValueError(f"fold f1 out of [0, 1]: {fold['f1']}")
        if fold["auroc"] is not None and not 0.0 <= fold["auroc"] <= 1.0:
            raise ValueError(f"fold auroc out of [0, 1]: {fold['auroc']}")


def save_report(path, data: dict) -> None:
    validate_report(data)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_table(data: dict) -> str:
    """Aligned text summary of a report dictionary."""
    def fmt(v):
        return "   --- " if v is None else f"{v:7.4f}"

    lines = [
        f"variant={data['variant']}  k={data['k_folds']}  seed={data['seed']}  "
        f"trainable_params={data['trainable_params']}",
        f"config_hash={data['config_hash'][:16]}",
        f"{'fold':>4}  {'train':>5}  {'eval':>4}  {'F1':>7}  {'AUROC':>7}  {'frozen-ok':>9}",
    ]
    for fold in data["folds"]:
        lines.append(
            f"{fold['fold']:>4}  {fold['train_size']:>5}  {fold['eval_size']:>4}  "
            f"{fmt(fold['f1'])}  {fmt(fold['auroc'])}  {str(fold['backbone_unchanged']):>9}"
        )
    lines.append(
        f"mean  F1 {data['f1_mean']:.4f} +/- {data['f1_std']:.4f}   "
        f"AUROC {fmt(data['auroc_mean']).strip()} +/- "
        f"{fmt(data['auroc_std']).strip()}"
    )
    lines.append(
        f"pooled  F1 {data['pooled_f1']:.4f}   AUROC {fmt(data['pooled_auroc']).strip()}"
    )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def parameter_table(input_len: int, *, raw_len: int | None = None,
                    hidden: int = 64, d_enc: int = 64, n_channels: int = 19,
                    n_classes: int = 2,
                    encoder_config: EncoderConfig | None = None) -> dict:
    """Trainable-parameter counts per variant at the given dimensions.

    Counts come from materialized buffers (the same accounting finetune
    uses), never from formulas, so tests can check them against closed-form
    sums independently.
    """
    enc_cfg = encoder_config or EncoderConfig(n_channels=n_channels, d_enc=d_enc)
    rng = np.random.default_rng(0)
    encoder = ConvEncoder(enc_cfg, rng)
    head = ClassifierHead(enc_cfg.d_enc, n_classes, rng)

    def bundle_size(params: dict) -> int:
        b = ModelBundle()
        b.merge("m", params)
        return b.count_params(trainable_only=False)

    encoder_count = bundle_size(encoder.parameters())
    head_count = bundle_size(head.parameters())
    graph = graph_for_channels(n_channels)
    table = {
        "dims": {
            "input_len": input_len,
            "raw_len": raw_len if raw_len is not None else input_len,
            "hidden": hidden,
            "d_enc": enc_cfg.d_enc,
            "n_channels": n_channels,
            "n_classes": n_classes,
        },
        "backbone": encoder_count,
        "head": head_count,
        "variants": {},
    }
    for variant in ("baseline", "frozen", "gcn", "sage", "gat"):
        if variant == "baseline":
            adapter_count, gnn_count = 0, 0
        elif variant == "frozen":
            adapter_count, gnn_count = 0, 0
        else:
            cfg = AdapterConfig(variant=variant, hidden=hidden,
                                input_len=input_len, raw_len=raw_len)
            adapter = GraphAdapter(cfg, graph, np.random.default_rng(0))
            adapter_count = bundle_size(adapter.parameters())
            gnn_count = sum(p.size for name, p in adapter.parameters().items()
                            if name.startswith("gnn"))
        trainable = head_count + adapter_count + (encoder_count if variant == "baseline" else 0)
        table["variants"][variant] = {
            "adapter": adapter_count,
            "gnn_layers": gnn_count,
            "trainable": trainable,
        }
    return table


def render_parameter_table(table: dict) -> str:
    dims = table["dims"]
    lines = [
        f"input_len={dims['input_len']}  hidden={dims['hidden']}  "
        f"d_enc={dims['d_enc']}  channels={dims['n_channels']}",
        f"backbone={table['backbone']}  head={table['head']}",
        f"{'variant':>8}  {'adapter':>10}  {'gnn-layers':>10}  {'trainable':>10}",
    ]
    for name, row in table["variants"].items():
        lines.append(f"{name:>8}  {row['adapter']:>10}  {row['gnn_layers']:>10}  "
                     f"{row['trainable']:>10}")
    return "\n".join(lines)
