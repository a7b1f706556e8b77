"""End-to-end orchestration: training the bundle, rating captures, and the
seeded multi-run evaluation protocol.

Every stage reads and writes documented file artifacts, so any stage can
be rerun from persisted intermediates. All randomness flows from the
master seed via named sub-seeds.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import alignment as al
from . import detector as det
from . import discovery, events
from .config import RunConfig, derive_seed, semantic_echo
from .errors import ConfigError, DataError, SchemaError
from .flowmeter import FEATURE_NAMES, FlowRecord, assemble_flows, read_corpus
from .pcap import CaptureFilter, ingest_pcap
from .petri import PetriNet, export_pnml, import_pnml
from .rating import (
    BAND_NAMES,
    BandedConfusion,
    RatedAlarm,
    SeverityBands,
    banded_metrics,
    cos_sim,
    rate_all,
)

logger = logging.getLogger(__name__)

BUNDLE_SCHEMA = "alarmsift-bundle/1"
REPORT_SCHEMA = "alarmsift-report/1"

KIND_EXTERNAL = "external-scores"


# --- input loading ---------------------------------------------------------

def load_records(config: RunConfig) -> list[FlowRecord]:
    """Loads flow records from the configured corpus or PCAP captures."""
    if config.corpus is not None:
        return read_corpus(config.corpus / "flows.csv", config.corpus / "events.jsonl")
    if not config.captures:
        raise ConfigError("no input configured: set either corpus or captures")
    records: list[FlowRecord] = []
    cap_filter = CaptureFilter(ports=config.server_ports)
    for spec in config.captures:
        result = ingest_pcap(spec.path, cap_filter)
        if result.partial:
            raise DataError(f"{spec.path}: capture is malformed mid-file; refusing partial input")
        flows = assemble_flows(
            result.packets,
            timeout=config.flow_timeout,
            id_prefix=Path(spec.path).stem,
            truth=spec.truth,
        )
        records.extend(events.flow_to_record(f) for f in flows)
    return records


def _features_matrix(records: list[FlowRecord]) -> np.ndarray:
    return np.stack([r.features for r in records]) if records else np.empty((0, 0))


# --- scoring (built-in baseline or imported external scores) ---------------

class _ExternalScorer:
    def __init__(self, path: Path, threshold: float):
        self.threshold = threshold
        self._scores = {fid: score for fid, score, _ in det.read_scores_csv(path)}
        self.skipped: list[str] = []

    def classify(self, records: list[FlowRecord]) -> list[det.ScoredFlow]:
        known = {r.flow_id for r in records}
        self.skipped = sorted(set(self._scores) - known)
        if self.skipped:
            logger.warning("external scores: skipped %d unknown flow id(s)", len(self.skipped))
        missing = [r.flow_id for r in records if r.flow_id not in self._scores]
        if len(missing) == len(records):
            raise DataError("external scores match none of the input flows")
        if missing:
            logger.warning("external scores: %d input flow(s) have no score; excluded", len(missing))
        out = []
        for r in records:
            if r.flow_id in self._scores:
                s = self._scores[r.flow_id]
                out.append(det.ScoredFlow(r.flow_id, s, s > self.threshold, r.truth))
        return out


# --- bundle ----------------------------------------------------------------

@dataclass
class TrainedBundle:
    kind: str
    model: det.DetectorModel | None
    threshold: float
    params: events.ExtractionParams
    nets: dict[int, PetriNet]
    reference: dict[str, float]
    fp_pool: tuple[str, ...]
    logs: dict[int, events.StateEventLog] = field(default_factory=dict)


def split_normals(
    normals: list[FlowRecord], config: RunConfig, seed: int
) -> tuple[list[FlowRecord], list[FlowRecord], list[FlowRecord]]:
    """Seeded (train, validation, rest) partition by the config fractions."""
    rng = np.random.default_rng(derive_seed(seed, "split"))
    order = rng.permutation(len(normals))
    n_train = int(round(config.train_fraction * len(normals)))
    n_val = int(round(config.validation_fraction * len(normals)))
    train = [normals[i] for i in order[:n_train]]
    val = [normals[i] for i in order[n_train:n_train + n_val]]
    rest = [normals[i] for i in order[n_train + n_val:]]
    if not train or not val:
        raise DataError(
            f"split produced {len(train)} training / {len(val)} validation flows"
        )
    return train, val, rest


def train_bundle(records: list[FlowRecord], config: RunConfig, seed: int) -> TrainedBundle:
    """Training phase: detector fit + calibration, then the process-based
    characterization mined from misclassified validation flows."""
    normals = [r for r in records if r.truth == det.TRUTH_NORMAL or r.truth == det.TRUTH_UNKNOWN]
    if not normals:
        raise DataError("training requires normal flows")
    train_recs, val_recs, _ = split_normals(normals, config, seed)
    return _train_from_split(train_recs, val_recs, config, seed)


def _train_from_split(
    train_recs: list[FlowRecord],
    val_recs: list[FlowRecord],
    config: RunConfig,
    seed: int,
) -> TrainedBundle:
    if config.external_scores is not None:
        scorer = _ExternalScorer(config.external_scores, config.external_threshold)
        kind, model = KIND_EXTERNAL, None
        threshold = config.external_threshold
        val_scored = scorer.classify(val_recs)
        fp_records = [r for r, s in zip(val_recs, val_scored) if s.positive]
    else:
        model = det.fit_baseline(
            _features_matrix(train_recs), config.components,
            derive_seed(seed, "detector"), FEATURE_NAMES,
        )
        model = det.calibrate_threshold(model, _features_matrix(val_recs), config.percentile)
        kind, threshold = model.kind, model.threshold
        val_scores = det.score_flows(model, _features_matrix(val_recs))
        fp_records = [r for r, s in zip(val_recs, val_scores) if s > model.threshold]

    if not fp_records:
        raise DataError(
            "no validation false positives available for mining; "
            "apply a more restrictive (lower) percentile"
        )
    traces = [events.Trace(r.flow_id, r.events) for r in fp_records]
    params = events.ExtractionParams(
        clusters=config.clusters, window=config.window, seed=derive_seed(seed, "extraction")
    )
    params = events.fit_states(traces, params)
    logs = events.build_logs(traces, params)
    nets = {
        state: discovery.discover(
            [f.events for f in logs[state].fragments], net_id=f"state_{state}"
        )
        for state in sorted(logs)
    }
    reference = al.profile_reference(logs, nets, budget=config.alignment_budget)
    return TrainedBundle(
        kind=kind,
        model=model,
        threshold=float(threshold),
        params=params,
        nets=nets,
        reference=reference,
        fp_pool=tuple(r.flow_id for r in fp_records),
        logs=logs,
    )


def save_bundle(bundle: TrainedBundle, out_dir: str | Path, config: RunConfig) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "nets").mkdir(parents=True, exist_ok=True)
    (out_dir / "logs").mkdir(exist_ok=True)
    manifest = {
        "schema": BUNDLE_SCHEMA,
        "kind": bundle.kind,
        "threshold": bundle.threshold,
        "states": sorted(bundle.nets),
        "fp_pool": list(bundle.fp_pool),
        "config": semantic_echo(config),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    if bundle.model is not None:
        det.save_model(bundle.model, out_dir / "detector.json")
    events.save_params(bundle.params, out_dir / "extraction.json")
    for state, net in sorted(bundle.nets.items()):
        export_pnml(net, out_dir / "nets" / f"state_{state}.pnml", net_id=f"state_{state}")
    for state, log in sorted(bundle.logs.items()):
        events.export_xes(log, out_dir / "logs" / f"state_{state}.xes")
    events.export_logs_jsonl(bundle.logs, out_dir / "logs" / "state_logs.jsonl")
    al.write_profile_csv(bundle.reference, out_dir / "reference_profile.csv")
    return out_dir


def load_bundle(bundle_dir: str | Path) -> TrainedBundle:
    bundle_dir = Path(bundle_dir)
    manifest_path = bundle_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{bundle_dir}: not a bundle (missing manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema") != BUNDLE_SCHEMA:
        raise SchemaError(f"{bundle_dir}: expected bundle schema {BUNDLE_SCHEMA}")
    model = None
    if manifest["kind"] != KIND_EXTERNAL:
        model = det.load_model(bundle_dir / "detector.json")
    params = events.load_params(bundle_dir / "extraction.json")
    nets = {
        state: import_pnml(bundle_dir / "nets" / f"state_{state}.pnml")
        for state in manifest["states"]
    }
    reference = al.read_profile_csv(bundle_dir / "reference_profile.csv")
    return TrainedBundle(
        kind=manifest["kind"],
        model=model,
        threshold=manifest["threshold"],
        params=params,
        nets=nets,
        reference=reference,
        fp_pool=tuple(manifest["fp_pool"]),
    )


def cmd_train(config: RunConfig) -> Path:
    records = load_records(config)
    bundle = train_bundle(records, config, config.seed)
    return save_bundle(bundle, config.output_dir / "bundle", config)


# --- rating ----------------------------------------------------------------

@dataclass
class RateReport:
    scored: list[det.ScoredFlow]
    alarms: list[RatedAlarm]
    histogram: dict[int, int]
    explanations: list[dict]
    unseen: dict[str, tuple[str, ...]]

    @property
    def negatives(self) -> list[det.ScoredFlow]:
        return [s for s in self.scored if not s.positive]


def rate_records(bundle: TrainedBundle, records: list[FlowRecord], config: RunConfig) -> RateReport:
    """Inference phase: classify, then rate the positives only."""
    bands = SeverityBands(config.band_boundaries)
    if bundle.kind == KIND_EXTERNAL:
        if config.external_scores is None:
            raise ConfigError("bundle was trained on external scores; configure external_scores")
        scorer = _ExternalScorer(config.external_scores, bundle.threshold)
        scored = scorer.classify(records)
    else:
        scored = det.classify(
            bundle.model,
            _features_matrix(records),
            [r.flow_id for r in records],
            [r.truth for r in records],
        )
    by_id = {r.flow_id: r for r in records}
    rows = []
    explanations = []
    unseen: dict[str, tuple[str, ...]] = {}
    for s in scored:
        if not s.positive:
            continue
        record = by_id[s.flow_id]
        trace = events.Trace(record.flow_id, record.events)
        fragments = events.split_by_state(trace, bundle.params)
        profile, aligned = al.profile_flow(fragments, bundle.nets, budget=config.alignment_budget)
        novel = events.unseen_labels(trace, bundle.params)
        if novel:
            unseen[s.flow_id] = novel
        rows.append((s.flow_id, profile, s.truth))
        for fa in aligned:
            rec = al.fragment_alignment_record(fa)
            rec["unseen_labels"] = list(novel)
            explanations.append(rec)
    alarms, histogram = rate_all(bundle.reference, rows, bands)
    return RateReport(
        scored=scored, alarms=alarms, histogram=histogram,
        explanations=explanations, unseen=unseen,
    )


def write_rate_report(report: RateReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "rated_alarms.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "cos_sim", "band", "band_name", "truth"])
        for alarm in report.alarms:
            writer.writerow(
                [alarm.flow_id, repr(alarm.cos_sim), alarm.band, alarm.band_name, alarm.truth]
            )
    with (out_dir / "band_histogram.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "band_name", "count"])
        for band in sorted(report.histogram):
            writer.writerow([band, BAND_NAMES[band], report.histogram[band]])
    al.write_alignments_jsonl(report.explanations, out_dir / "alignments.jsonl")
    det.write_scores_csv(report.scored, out_dir / "scores.csv")
    _write_band_profiles(report.alarms, out_dir / "band_mean_profiles.csv")


def _write_band_profiles(alarms: list[RatedAlarm], path: Path) -> None:
    """Mean misalignment profile per (band, truth): the explanation data
    behind per-band bar plots."""
    groups: dict[tuple[int, str], list[RatedAlarm]] = {}
    for alarm in alarms:
        groups.setdefault((alarm.band, alarm.truth), []).append(alarm)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "truth", "event_type", "mean_count"])
        for (band, truth) in sorted(groups):
            members = groups[(band, truth)]
            labels = sorted({label for a in members for label in a.profile})
            for label in labels:
                mean = sum(a.profile.get(label, 0.0) for a in members) / len(members)
                writer.writerow([band, truth, label, repr(mean)])


def cmd_rate(config: RunConfig, bundle_dir: str | Path) -> RateReport:
    bundle = load_bundle(bundle_dir)
    if bundle.kind != KIND_EXTERNAL and tuple(bundle.model.feature_names) != FEATURE_NAMES:
        raise SchemaError("bundle feature list does not match this build")
    records = load_records(config)
    report = rate_records(bundle, records, config)
    write_rate_report(report, config.output_dir / "rating")
    return report


# --- evaluation ------------------------------------------------------------

@dataclass
class RunOutcome:
    seed: int
    confusion: BandedConfusion
    recall: dict[int, float]
    precision: dict[int, float | None]
    positives: int
    fp_pool: int
    artifacts: dict[str, str] = field(default_factory=dict)  # paths relative to the output dir


@dataclass
class ExperimentReport:
    runs: list[RunOutcome]
    aggregate: dict


def _confusion_from(report: RateReport) -> BandedConfusion:
    tp: dict[int, int] = {}
    fp: dict[int, int] = {}
    for alarm in report.alarms:
        target = tp if alarm.truth == det.TRUTH_ATTACK else fp
        target[alarm.band] = target.get(alarm.band, 0) + 1
    fn = sum(1 for s in report.negatives if s.truth == det.TRUTH_ATTACK)
    return BandedConfusion(tp=tp, fp=fp, fn=fn)


def evaluate(config: RunConfig) -> ExperimentReport:
    """Repeats train + rate over seeded splits and aggregates mean +/- std."""
    records = load_records(config)
    unknown = [r.flow_id for r in records if r.truth not in (det.TRUTH_NORMAL, det.TRUTH_ATTACK)]
    if unknown:
        raise DataError(
            f"evaluation requires truth labels; {len(unknown)} flow(s) are unlabeled"
        )
    normals = [r for r in records if r.truth == det.TRUTH_NORMAL]
    attacks = [r for r in records if r.truth == det.TRUTH_ATTACK]
    if not normals or not attacks:
        raise DataError("evaluation requires both normal and attack flows")

    outcomes: list[RunOutcome] = []
    out_root = Path(config.output_dir)
    for run in range(config.runs):
        run_seed = derive_seed(config.seed, f"run-{run}")
        train_recs, val_recs, test_normals = split_normals(normals, config, run_seed)
        bundle = _train_from_split(train_recs, val_recs, config, run_seed)
        run_dir = out_root / "runs" / f"run_{run}"
        save_bundle(bundle, run_dir / "bundle", config)
        report = rate_records(bundle, test_normals + attacks, config)
        write_rate_report(report, run_dir / "rating")
        confusion = _confusion_from(report)
        recall, precision = {}, {}
        for k in range(1, 6):
            r, p = banded_metrics(confusion, k)
            recall[k] = r
            precision[k] = p
        outcomes.append(
            RunOutcome(
                seed=run_seed,
                confusion=confusion,
                recall=recall,
                precision=precision,
                positives=len(report.alarms),
                fp_pool=len(bundle.fp_pool),
                artifacts={
                    "bundle": f"runs/run_{run}/bundle",
                    "rating": f"runs/run_{run}/rating",
                },
            )
        )
    report = ExperimentReport(runs=outcomes, aggregate=_aggregate(outcomes))
    _write_experiment(report, config, out_root)
    return report


def _mean_std(values: list[float]) -> dict:
    if not values:
        return {"mean": None, "std": None, "n": 0}
    arr = np.array(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(values)}


def _aggregate(outcomes: list[RunOutcome]) -> dict:
    agg: dict = {"recall": {}, "precision": {}, "tp_band": {}, "fp_band": {}}
    for k in range(1, 6):
        agg["recall"][k] = _mean_std([o.recall[k] for o in outcomes])
        agg["precision"][k] = _mean_std(
            [o.precision[k] for o in outcomes if o.precision[k] is not None]
        )
        agg["tp_band"][k] = _mean_std([o.confusion.tp_at(k) for o in outcomes])
        agg["fp_band"][k] = _mean_std([o.confusion.fp_at(k) for o in outcomes])
    agg["fn"] = _mean_std([o.confusion.fn for o in outcomes])
    return agg


def _write_experiment(report: ExperimentReport, config: RunConfig, out_root: Path) -> None:
    out_root.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema": REPORT_SCHEMA,
        "config": semantic_echo(config),
        "runs": [
            {
                "seed": o.seed,
                "tp": o.confusion.tp,
                "fp": o.confusion.fp,
                "fn": o.confusion.fn,
                "recall": o.recall,
                "precision": o.precision,
                "positives": o.positives,
                "fp_pool": o.fp_pool,
                "artifacts": o.artifacts,
            }
            for o in report.runs
        ],
        "aggregate": report.aggregate,
    }
    (out_root / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    with (out_root / "metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["band", "k", "tp_mean", "tp_std", "fp_mean", "fp_std",
             "recall_mean", "recall_std", "precision_mean", "precision_std"]
        )
        for k in (5, 4, 3, 2, 1):
            agg = report.aggregate
            prec = agg["precision"][k]
            writer.writerow([
                BAND_NAMES[k], k,
                repr(agg["tp_band"][k]["mean"]), repr(agg["tp_band"][k]["std"]),
                repr(agg["fp_band"][k]["mean"]), repr(agg["fp_band"][k]["std"]),
                repr(agg["recall"][k]["mean"]), repr(agg["recall"][k]["std"]),
                repr(prec["mean"]) if prec["n"] else "absent",
                repr(prec["std"]) if prec["n"] else "absent",
            ])
    with (out_root / "fig_performance.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "band", "recall_mean", "precision_mean", "tp_share", "fp_share"])
        total_tp = sum(report.aggregate["tp_band"][k]["mean"] for k in range(1, 6)) or 1.0
        total_fp = sum(report.aggregate["fp_band"][k]["mean"] for k in range(1, 6)) or 1.0
        for k in range(1, 6):
            agg = report.aggregate
            prec = agg["precision"][k]
            writer.writerow([
                k, BAND_NAMES[k],
                repr(agg["recall"][k]["mean"]),
                repr(prec["mean"]) if prec["n"] else "absent",
                repr(agg["tp_band"][k]["mean"] / total_tp),
                repr(agg["fp_band"][k]["mean"] / total_fp),
            ])


# --- explain ---------------------------------------------------------------

def explain_flows(
    config: RunConfig, bundle_dir: str | Path, flow_ids: list[str] | None = None
) -> list[dict]:
    """Per-flow alignment explanations (any flow, not just positives)."""
    bundle = load_bundle(bundle_dir)
    records = load_records(config)
    if flow_ids:
        wanted = set(flow_ids)
        records = [r for r in records if r.flow_id in wanted]
        missing = wanted - {r.flow_id for r in records}
        if missing:
            raise DataError(f"unknown flow id(s): {sorted(missing)}")
    out = []
    bands = SeverityBands(config.band_boundaries)
    for record in records:
        trace = events.Trace(record.flow_id, record.events)
        fragments = events.split_by_state(trace, bundle.params)
        profile, aligned = al.profile_flow(fragments, bundle.nets, budget=config.alignment_budget)
        score = cos_sim(bundle.reference, profile)
        out.append({
            "flow_id": record.flow_id,
            "truth": record.truth,
            "cos_sim": score,
            "band": bands.band_of(score),
            "profile": profile,
            "unseen_labels": list(events.unseen_labels(trace, bundle.params)),
            "fragments": [al.fragment_alignment_record(fa) for fa in aligned],
        })
    return out
