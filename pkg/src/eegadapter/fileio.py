"""On-disk formats: EEGB v1 recordings, CSV fixtures, EGAC v1 checkpoints.

EEGB v1: magic ``EEGB``, u32 little-endian header length, UTF-8 JSON header
{version, channel_names, sample_rate_hz, label, subject_id, n_samples},
then channel-major little-endian float32 samples (widened to float64 on
load).

EGAC v1: magic ``EGAC``, u32 little-endian manifest length, canonical JSON
manifest (config, parameter names/shapes/trainable flags, RNG state), then
one raw little-endian float64 buffer per parameter in manifest order.
Save -> load -> save is bitwise exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .optim import ModelBundle
from .signal import PipelineError, Recording

EEGB_MAGIC = b"EEGB"
EGAC_MAGIC = b"EGAC"


class FormatError(ValueError):
    """Corrupt or unsupported file content."""


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


# ---------------------------------------------------------------------------
# EEGB v1
# ---------------------------------------------------------------------------

def write_recording(path, rec: Recording) -> None:
    header = {
        "version": 1,
        "channel_names": list(rec.channel_names),
        "sample_rate_hz": float(rec.sample_rate_hz),
        "label": rec.label,
        "subject_id": rec.subject_id,
        "n_samples": int(rec.n_samples),
    }
    blob = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(EEGB_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(rec.samples, dtype="<f4").tobytes())


def read_recording(path) -> Recording:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EEGB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {EEGB_MAGIC!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise FormatError(f"{path}: unsupported EEGB version {header.get('version')}")
        n_ch = len(header["channel_names"])
        n_samp = int(header["n_samples"])
        raw = fh.read(4 * n_ch * n_samp)
        if len(raw) != 4 * n_ch * n_samp:
            raise FormatError(f"{path}: truncated sample data")
        samples = np.frombuffer(raw, dtype="<f4").reshape(n_ch, n_samp).astype(np.float64)
    if not np.all(np.isfinite(samples)):
        raise PipelineError(f"{path}: non-finite samples")
    label = header["label"]
    return Recording(
        header["channel_names"],
        float(header["sample_rate_hz"]),
        samples,
        label=None if label is None else int(label),
        subject_id=header.get("subject_id", ""),
    )


def read_csv_recording(path, label: int | None = None, subject_id: str = "") -> Recording:
    """CSV fixture: first column a time index, one column per channel."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if len(header) < 2:
        raise FormatError(f"{path}: need a time column plus at least one channel")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = data[:, 0]
    dt = np.diff(times)
    if len(dt) == 0 or np.any(dt <= 0):
        raise FormatError(f"{path}: time index must be strictly increasing")
    rate = 1.0 / float(np.median(dt))
    return Recording(
        [h.strip() for h in header[1:]],
        rate,
        data[:, 1:].T,
        label=label,
        subject_id=subject_id or path.stem,
    )


def load_dataset(directory) -> list[Recording]:
    """All ``*.eegb`` files under ``directory``, sorted by name."""
    directory = Path(directory)
    files = sorted(directory.glob("*.eegb"))
    if not files:
        raise FormatError(f"no .eegb files in {directory}")
    return [read_recording(p) for p in files]


# ---------------------------------------------------------------------------
# EGAC v1
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: dict
    bundle: ModelBundle
    rng_state: dict | None = None


def save_checkpoint(path, config: dict, bundle: ModelBundle,
                    rng_state: dict | None = None) -> None:
    manifest = {
        "format": "EGAC",
        "version": 1,
        "config": config,
        "params": [
            {"name": name, "shape": list(p.shape), "trainable": bool(p.requires_grad)}
            for name, p in bundle.items()
        ],
        "rng_state": rng_state,
    }
    blob = _canonical_json(manifest)
    with open(path, "wb") as fh:
        fh.write(EGAC_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, p in bundle.items():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EGAC_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {EGAC_MAGIC!r}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        if manifest.get("format") != "EGAC" or manifest.get("version") != 1:
            raise FormatError(f"{path}: unsupported checkpoint format")
        bundle = ModelBundle()
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise FormatError(f"{path}: truncated buffer for {entry['name']}")
            data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            bundle.add(entry["name"], Tensor(data), trainable=entry["trainable"])
    return Checkpoint(manifest["config"], bundle, manifest.get("rng_state"))
