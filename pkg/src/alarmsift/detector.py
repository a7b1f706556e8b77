"""Reference anomaly detector: principal-direction reconstruction error
over z-scored flow features, with a nearest-rank percentile threshold
calibrated on a validation split. External scores can be imported so any
black-box IDS's alarms can be rated.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, SchemaError

MODEL_SCHEMA = "alarmsift-detector/1"
SCORES_CSV_SCHEMA = "alarmsift-scores/1"

KIND_BASELINE = "reconstruction-baseline"

TRUTH_NORMAL = "normal"
TRUTH_ATTACK = "attack"
TRUTH_UNKNOWN = "unknown"


@dataclass(frozen=True)
class DetectorModel:
    feature_names: tuple[str, ...]
    mean: np.ndarray          # per raw feature
    std: np.ndarray           # per raw feature (population)
    mask: np.ndarray          # bool; constant training columns are excluded
    basis: np.ndarray         # (d, n_active) top principal directions
    components: int
    seed: int
    threshold: float | None = None
    percentile: float | None = None
    kind: str = KIND_BASELINE

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None


@dataclass(frozen=True)
class ScoredFlow:
    flow_id: str
    score: float
    positive: bool
    truth: str = TRUTH_UNKNOWN


def fit_baseline(
    train: np.ndarray,
    components: int,
    seed: int,
    feature_names: Sequence[str],
) -> DetectorModel:
    """Fits the reconstruction baseline on normal-flow features.

    Features are z-scored with training statistics; constant columns are
    masked out and recorded. The score of a flow is the squared residual
    after projecting its normalized vector onto the top-d principal
    directions of the training data.
    """
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or train.shape[1] != len(feature_names):
        raise DataError("training matrix does not match the feature list")
    if not np.isfinite(train).all():
        raise DataError("training features must be finite")
    if components < 1:
        raise DataError("component count must be >= 1")
    if len(train) <= components:
        raise DataError(f"need more than {components} training flows, got {len(train)}")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    mask = std > 0
    if not mask.any():
        raise DataError("every feature column is constant; nothing to model")
    z = (train[:, mask] - mean[mask]) / std[mask]
    d = min(components, min(z.shape))
    _, _, vt = np.linalg.svd(z, full_matrices=False)
    basis = vt[:d].copy()
    # Deterministic sign convention: largest-magnitude entry positive.
    for row in basis:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    return DetectorModel(
        feature_names=tuple(feature_names),
        mean=mean,
        std=std,
        mask=mask,
        basis=basis,
        components=d,
        seed=seed,
    )


def score_flows(model: DetectorModel, features: np.ndarray) -> np.ndarray:
    """Squared reconstruction error of each normalized feature vector."""
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[None, :]
    if features.shape[1] != len(model.feature_names):
        raise DataError(
            f"feature dimension mismatch: expected {len(model.feature_names)} "
            f"columns (active mask {model.mask.astype(int).tolist()}), got {features.shape[1]}"
        )
    z = (features[:, model.mask] - model.mean[model.mask]) / model.std[model.mask]
    recon = (z @ model.basis.T) @ model.basis
    return ((z - recon) ** 2).sum(axis=1)


def calibrate_threshold(
    model: DetectorModel, validation: np.ndarray, percentile: float
) -> DetectorModel:
    """Sets the decision threshold to the nearest-rank percentile of the
    validation scores. A lower percentile leaves more validation flows
    above the threshold, enriching the false-positive pool used for
    process mining."""
    if not 0.0 < percentile <= 1.0:
        raise DataError(f"percentile must be in (0, 1], got {percentile}")
    validation = np.asarray(validation, dtype=float)
    if len(validation) == 0:
        raise DataError("validation set is empty")
    if len(validation) < 10:
        raise DataError(f"validation set too small ({len(validation)} < 10 flows)")
    scores = np.sort(score_flows(model, validation))
    rank = int(np.ceil(percentile * len(scores)))
    threshold = float(scores[rank - 1])
    return replace(model, threshold=threshold, percentile=percentile)


def classify(
    model: DetectorModel,
    features: np.ndarray,
    flow_ids: Sequence[str],
    truths: Sequence[str] | None = None,
) -> list[ScoredFlow]:
    """Decision rule: positive iff score > threshold (ties are negative)."""
    if not model.calibrated:
        raise DataError("detector model has no calibrated threshold")
    scores = score_flows(model, features)
    if len(scores) != len(flow_ids):
        raise DataError("flow id list does not match the feature matrix")
    truths = truths or [TRUTH_UNKNOWN] * len(flow_ids)
    return [
        ScoredFlow(
            flow_id=fid,
            score=float(s),
            positive=bool(s > model.threshold),
            truth=truth,
        )
        for fid, s, truth in zip(flow_ids, scores, truths)
    ]


# --- external scores -------------------------------------------------------

def read_scores_csv(path: str | Path) -> list[tuple[str, float, str]]:
    """Reads (flow_id, score[, truth]) rows from a scores CSV."""
    path = Path(path)
    with path.open(newline="") as fh:
        pos = fh.tell()
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(pos)
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "flow_id" not in fields or "score" not in fields:
            raise SchemaError(f"{path}: scores CSV needs flow_id and score columns, got {fields}")
        rows = []
        for row in reader:
            rows.append((row["flow_id"], float(row["score"]), row.get("truth") or TRUTH_UNKNOWN))
    return rows


def import_scores(
    path: str | Path,
    threshold: float,
    known_ids: Sequence[str] | None = None,
) -> tuple[list[ScoredFlow], list[str]]:
    """Turns an external score file into classified flows.

    Applies the same decision rule as classify. Rows whose flow id is not
    in known_ids are skipped and reported back.
    """
    rows = read_scores_csv(path)
    known = set(known_ids) if known_ids is not None else None
    skipped = [fid for fid, _, _ in rows if known is not None and fid not in known]
    scored = [
        ScoredFlow(flow_id=fid, score=score, positive=score > threshold, truth=truth)
        for fid, score, truth in rows
        if known is None or fid in known
    ]
    return scored, skipped


def write_scores_csv(scored: Sequence[ScoredFlow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# schema: {SCORES_CSV_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "score", "predicted", "truth"])
        for s in scored:
            writer.writerow(
                [s.flow_id, repr(s.score), "positive" if s.positive else "negative", s.truth]
            )


# --- persistence -----------------------------------------------------------

def save_model(model: DetectorModel, path: str | Path) -> None:
    payload = {
        "schema": MODEL_SCHEMA,
        "kind": model.kind,
        "feature_names": list(model.feature_names),
        "mean": [float(v) for v in model.mean],
        "std": [float(v) for v in model.std],
        "mask": [bool(v) for v in model.mask],
        "basis": [[float(v) for v in row] for row in model.basis],
        "components": model.components,
        "seed": model.seed,
        "threshold": model.threshold,
        "percentile": model.percentile,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_model(path: str | Path) -> DetectorModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema") != MODEL_SCHEMA:
        raise SchemaError(f"{path}: expected schema {MODEL_SCHEMA}")
    return DetectorModel(
        feature_names=tuple(payload["feature_names"]),
        mean=np.array(payload["mean"]),
        std=np.array(payload["std"]),
        mask=np.array(payload["mask"], dtype=bool),
        basis=np.array(payload["basis"]),
        components=payload["components"],
        seed=payload["seed"],
        threshold=payload["threshold"],
        percentile=payload["percentile"],
        kind=payload["kind"],
    )
