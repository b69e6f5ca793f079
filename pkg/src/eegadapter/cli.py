"""Command-line interface.

Subcommands: synth, preprocess, pretrain, finetune, eval, params, gradcheck.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import fileio, signal as sig
from .encoder import EncoderConfig, PretrainConfig
from .gradsuite import GRADIENT_TOLERANCE, run_gradient_suite
from .harness import (
    ExperimentConfig,
    evaluate_model,
    finetune,
    load_model_checkpoint,
    load_segments,
    parameter_table,
    render_parameter_table,
    render_table,
    report,
    run_pretrain,
    save_report,
    segments_from_recordings,
)
from .model import VARIANTS
from .synth import SynthSpec, synthesize_recordings

# desk-scale stand-ins for the two clinical task shapes (subjects per class,
# segments per subject, folds)
SYNTH_PROFILES = {
    "mdd-like": {"n_subjects_per_class": 10, "segments_per_subject": 2, "k": 10},
    "tuab-like": {"n_subjects_per_class": 20, "segments_per_subject": 3, "k": 5},
}


def _add_synth(sub):
    p = sub.add_parser("synth", help="emit a synthetic EEGB dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--profile", choices=sorted(SYNTH_PROFILES), default=None,
                   help="preset dataset shape")
    p.add_argument("--subjects", type=int, default=8, help="subjects per class")
    p.add_argument("--segments-per-subject", type=int, default=2)
    p.add_argument("--channels", type=int, default=19)
    p.add_argument("--length", type=int, default=1024, help="segment length in samples")
    p.add_argument("--rate", type=float, default=256.0)
    p.add_argument("--coupling", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)


def _cmd_synth(args):
    kwargs = {
        "n_subjects_per_class": args.subjects,
        "segments_per_subject": args.segments_per_subject,
    }
    if args.profile:
        kwargs.update({k: v for k, v in SYNTH_PROFILES[args.profile].items() if k != "k"})
    spec = SynthSpec(
        n_channels=args.channels,
        segment_len=args.length,
        sample_rate_hz=args.rate,
        coupling=args.coupling,
        **kwargs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recordings = synthesize_recordings(spec, seed=args.seed)
    for rec in recordings:
        fileio.write_recording(out / f"{rec.subject_id}.eegb", rec)
    print(f"wrote {len(recordings)} recordings to {out}")
    return 0


def _add_preprocess(sub):
    p = sub.add_parser("preprocess", help="filter and segment recordings")
    p.add_argument("--in", dest="src", required=True, help="EEGB/CSV file or directory")
    p.add_argument("--out", required=True, help="output directory for segment EEGB files")
    p.add_argument("--resample-hz", type=float, default=256.0)
    p.add_argument("--notch", type=float, default=50.0)
    p.add_argument("--band", default="0.1:100", help="LO:HI band edges in Hz")
    p.add_argument("--window-s", type=float, default=60.0)
    p.add_argument("--no-channel-select", action="store_true",
                   help="skip 10-20 channel selection (non-clinical fixtures)")


def _cmd_preprocess(args):
    src = Path(args.src)
    paths = sorted(src.glob("*.eegb")) + sorted(src.glob("*.csv")) if src.is_dir() else [src]
    if not paths:
        raise SystemExit(f"no input recordings under {src}")
    lo, hi = (float(v) for v in args.band.split(":"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_segments = 0
    for path in paths:
        rec = (fileio.read_csv_recording(path) if path.suffix == ".csv"
               else fileio.read_recording(path))
        if not args.no_channel_select:
            rec = sig.select_channels(rec)
        rec = sig.resample(rec, args.resample_hz)
        rec = sig.notch_filter(rec, args.notch)
        rec = sig.bandpass_filter(rec, lo, hi)
        for i, seg in enumerate(sig.segment(rec, args.window_s)):
            seg_rec = sig.Recording(rec.channel_names, rec.sample_rate_hz, seg.samples,
                                    label=seg.label, subject_id=seg.source)
            fileio.write_recording(out / f"{path.stem}_seg{i:04d}.eegb", seg_rec)
            n_segments += 1
    print(f"wrote {n_segments} segments to {out}")
    return 0


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_json(args.config)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for flag, field in (("variant", "variant"), ("k", "k_folds"), ("seed", "seed"),
                        ("epochs", "epochs"), ("lr", "lr"),
                        ("batch_size", "batch_size"), ("data", "task")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _add_pretrain(sub):
    p = sub.add_parser("pretrain", help="masked self-supervised pretraining")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="checkpoint path (.egac)")
    p.add_argument("--data", default=None, help="override the config's task/dataset")
    p.add_argument("--seed", type=int, default=None)


def _cmd_pretrain(args):
    cfg = _load_config(args)
    losses = run_pretrain(cfg, args.out)
    print(f"pretrained on task={cfg.task!r}: {len(losses)} steps, "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}; checkpoint at {args.out}")
    return 0


def _add_finetune(sub):
    p = sub.add_parser("finetune", help="k-fold fine-tuning of one variant")
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--ckpt", required=True, help="pretraining checkpoint (.egac)")
    p.add_argument("--data", default=None, help='dataset directory or "synthetic"')
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="experiment config JSON")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--out", default="report.json", help="report path")
    p.add_argument("--save-models", default=None, help="directory for per-fold models")


def _cmd_finetune(args):
    cfg = _load_config(args)
    ckpt = fileio.load_checkpoint(args.ckpt)
    segments = load_segments(cfg)
    if args.save_models:
        Path(args.save_models).mkdir(parents=True, exist_ok=True)
    folds = finetune(cfg, segments, ckpt, save_models_dir=args.save_models)
    data = report(folds, cfg)
    save_report(args.out, data)
    print(render_table(data))
    print(f"report written to {args.out}")
    return 0


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a saved fine-tuned model")
    p.add_argument("--model", required=True, help="downstream model checkpoint (.egac)")
    p.add_argument("--data", required=True, help="dataset directory of .eegb segments")
    p.add_argument("--out", default=None, help="optional metrics JSON path")


def _cmd_eval(args):
    model = load_model_checkpoint(args.model)
    segments = segments_from_recordings(fileio.load_dataset(args.data))
    import numpy as np

    x = [s.samples for s in segments]
    labels = np.array([s.label for s in segments], dtype=int)
    f1, auc, auc_err, *_ = evaluate_model(model, x, labels, np.arange(len(x)))
    print(f"n={len(x)}  F1={f1:.4f}  AUROC={'---' if auc is None else f'{auc:.4f}'}"
          + (f"  ({auc_err})" if auc_err else ""))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"n": len(x), "f1": f1, "auroc": auc, "auroc_error": auc_err},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _add_params(sub):
    p = sub.add_parser("params", help="trainable-parameter counts per variant")
    p.add_argument("--length", type=int, default=1024, help="backbone input length")
    p.add_argument("--raw-len", type=int, default=None, help="raw segment length")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--d-enc", type=int, default=64)
    p.add_argument("--channels", type=int, default=19)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--json", action="store_true", help="machine-readable output")


def _cmd_params(args):
    table = parameter_table(args.length, raw_len=args.raw_len, hidden=args.hidden,
                            d_enc=args.d_enc, n_channels=args.channels,
                            n_classes=args.classes)
    if args.json:
        print(json.dumps(table, indent=2, sort_keys=True))
    else:
        print(render_parameter_table(table))
    return 0


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=10)


def _cmd_gradcheck(args):
    results = run_gradient_suite(n_seeds=args.seeds)
    failed = False
    for name, err in results.items():
        ok = err < GRADIENT_TOLERANCE
        failed |= not ok
        print(f"{name:<24} max_rel_err={err:.3e}  {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


_COMMANDS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "params": _cmd_params,
    "gradcheck": _cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegadapter",
        description="Graph-adapter fine-tuning for frozen convolutional EEG encoders",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_preprocess(sub)
    _add_pretrain(sub)
    _add_finetune(sub)
    _add_eval(sub)
    _add_params(sub)
    _add_gradcheck(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
