"""On-disk formats.

A dataset directory holds ``manifest.json`` (sizes, labels, provenance) and a raw
little-endian float64 blob with one record per sample: the global feature
(d floats) followed by the L x d local feature map, row-major.  Prompt banks
and reports are JSON; training history is JSON Lines; matrices exchanged with
other tools are comma-separated text with ``#`` comment lines.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .alignment import PromptBank
from .data import EmbeddingDataset
from .errors import (
    BlobLengthMismatch,
    DatasetIOError,
    PromptOTError,
    UnsupportedVersion,
    ValidationError,
)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "features.f64"
_F64 = np.dtype("<f8")


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _load_json(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DatasetIOError(f"missing file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def write_dataset(ds: EmbeddingDataset, dir_path, provenance: str = "") -> Path:
    out = Path(dir_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        D, d, L = len(ds), ds.dim, ds.patches
        records = np.concatenate(
            [ds.global_features.reshape(D, d), ds.local_features.reshape(D, L * d)], axis=1
        )
        (out / BLOB_NAME).write_bytes(records.astype(_F64, copy=False).tobytes())
        manifest = {
            "format_version": FORMAT_VERSION,
            "num_samples": D,
            "num_classes": int(ds.num_classes),
            "dim": d,
            "patches": L,
            "feature_blob": BLOB_NAME,
            "labels": [int(v) for v in ds.labels],
            "truth_labels": None if ds.truth is None else [int(v) for v in ds.truth],
            "provenance": provenance,
        }
        _dump_json(manifest, out / MANIFEST_NAME)
    except OSError as exc:
        raise DatasetIOError(f"cannot write dataset to {out}: {exc}") from exc
    return out


def read_dataset(dir_path) -> EmbeddingDataset:
    src = Path(dir_path)
    m = _load_json(src / MANIFEST_NAME)
    if not isinstance(m, dict):
        raise ValidationError("manifest must be a JSON object")
    if m.get("format_version") != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported format_version {m.get('format_version')!r}")
    try:
        D, C, d, L = (int(m[k]) for k in ("num_samples", "num_classes", "dim", "patches"))
        blob_name = str(m["feature_blob"])
        labels = np.asarray(m["labels"], dtype=np.int64)
        truth = m.get("truth_labels")
        truth = None if truth is None else np.asarray(truth, dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed manifest: {exc}") from exc
    if min(D, d, L) < 0 or (D and min(d, L) < 1):
        raise ValidationError("manifest sizes must be positive")
    blob_path = src / blob_name
    try:
        raw = blob_path.read_bytes()
    except FileNotFoundError as exc:
        raise DatasetIOError(f"missing feature blob: {blob_path}") from exc
    except OSError as exc:
        raise DatasetIOError(f"cannot read {blob_path}: {exc}") from exc
    expected = D * (d + L * d) * _F64.itemsize
    if len(raw) != expected:
        raise BlobLengthMismatch(f"blob has {len(raw)} bytes, manifest implies {expected}")
    records = np.frombuffer(raw, dtype=_F64).astype(np.float64).reshape(D, d + L * d)
    try:
        return EmbeddingDataset(
            records[:, :d].copy(), records[:, d:].reshape(D, L, d).copy(), labels, C, truth
        )
    except PromptOTError as exc:
        raise ValidationError(f"invalid dataset in {src}: {exc}") from exc


def bank_to_record(bank: PromptBank) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "num_classes": bank.num_classes,
        "views": bank.views,
        "dim": bank.dim,
        "log_tau": bank.log_tau,
        "clean": bank.clean.tolist(),
        "noisy": bank.noisy.tolist(),
    }


def write_bank(bank: PromptBank, path) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(bank_to_record(bank), path)


def read_bank(path) -> PromptBank:
    rec = _load_json(Path(path))
    if rec.get("format_version") != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported format_version {rec.get('format_version')!r}")
    try:
        bank = PromptBank(rec["clean"], rec["noisy"], float(rec["log_tau"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed prompt bank: {exc}") from exc
    if bank.clean.shape != (rec.get("num_classes"), rec.get("views"), rec.get("dim")):
        raise ValidationError("prompt bank arrays disagree with their declared shape")
    return bank


def write_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, allow_nan=False, sort_keys=True))
            fh.write("\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_record(rec: dict, path) -> None:
    _dump_json(rec, Path(path))


def read_matrix_text(path) -> np.ndarray:
    """Comma-separated rows; blank lines and ``#`` comments are skipped."""
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                rows.append([float(tok) for tok in line.split(",")])
    except FileNotFoundError as exc:
        raise DatasetIOError(f"missing file: {path}") from exc
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from exc
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise ValidationError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)


def format_matrix_text(m, comments: Optional[dict] = None) -> str:
    lines = [f"# {k}={v}" for k, v in (comments or {}).items()]
    for row in np.atleast_2d(m):
        lines.append(",".join(format(float(x), ".17g") for x in row))
    return "\n".join(lines) + "\n"
