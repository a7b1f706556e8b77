"""Bidirectional TCP flow assembly and per-flow feature statistics.

A flow is a bidirectional conversation keyed by its unordered endpoint
pair. The client side is the sender of the first SYN-bearing packet,
falling back to the sender of the first packet when no SYN was captured.
A flow terminates on RST, on the final ACK after both directions sent
FIN, or when the idle gap exceeds the configured timeout (the next packet
with the same key starts a new flow).
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError
from .pcap import PacketRecord

logger = logging.getLogger(__name__)

DEFAULT_FLOW_TIMEOUT = 120.0

FLOWS_CSV_SCHEMA = "alarmsift-flows/1"
FLOW_EVENTS_SCHEMA = "alarmsift-flow-events/1"


class Direction(str, Enum):
    CLIENT_TO_SERVER = "C_to_S"
    SERVER_TO_CLIENT = "S_to_C"


Endpoint = tuple[str, int]


def pair_key(a: Endpoint, b: Endpoint) -> tuple[Endpoint, Endpoint]:
    """Canonical unordered endpoint pair: pair_key(A, B) == pair_key(B, A)."""
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class FlowPacket:
    """A packet inside a flow, tagged with its direction."""

    direction: Direction
    flags: frozenset[str]
    timestamp: float
    payload_len: int
    total_len: int


@dataclass
class Flow:
    """One bidirectional TCP conversation.

    Attributes:
        flow_id: stable identifier, assigned in first-packet order.
        client: (ip, port) of the flow initiator.
        server: (ip, port) of the responder.
        packets: the flow's packets in capture order.
        truth: ground-truth label ("normal" | "attack" | "unknown").
    """

    flow_id: str
    client: Endpoint
    server: Endpoint
    packets: tuple[FlowPacket, ...]
    truth: str = "unknown"

    @property
    def first_ts(self) -> float:
        return self.packets[0].timestamp

    @property
    def last_ts(self) -> float:
        return self.packets[-1].timestamp

    @property
    def duration(self) -> float:
        return self.last_ts - self.first_ts


class _FlowBuilder:
    __slots__ = ("packets", "fin_sides", "closed", "arrival")

    def __init__(self, arrival: int):
        self.packets: list[PacketRecord] = []
        self.fin_sides: set[Endpoint] = set()
        self.closed = False
        self.arrival = arrival

    def add(self, pkt: PacketRecord) -> None:
        both_fins_before = len(self.fin_sides) >= 2
        self.packets.append(pkt)
        if "RST" in pkt.flags:
            self.closed = True
            return
        if "FIN" in pkt.flags:
            self.fin_sides.add((pkt.src_ip, pkt.src_port))
        if both_fins_before and "ACK" in pkt.flags:
            # Final ACK of the close handshake.
            self.closed = True

    def finalize(self, flow_id: str, truth: str) -> Flow:
        client: Endpoint | None = None
        for pkt in self.packets:
            if "SYN" in pkt.flags:
                client = (pkt.src_ip, pkt.src_port)
                break
        if client is None:
            first = self.packets[0]
            client = (first.src_ip, first.src_port)
        first = self.packets[0]
        endpoints = {(first.src_ip, first.src_port), (first.dst_ip, first.dst_port)}
        endpoints.discard(client)
        server = endpoints.pop() if endpoints else client
        packets = tuple(
            FlowPacket(
                direction=(
                    Direction.CLIENT_TO_SERVER
                    if (pkt.src_ip, pkt.src_port) == client
                    else Direction.SERVER_TO_CLIENT
                ),
                flags=pkt.flags,
                timestamp=pkt.timestamp,
                payload_len=pkt.payload_len,
                total_len=pkt.total_len,
            )
            for pkt in self.packets
        )
        return Flow(flow_id=flow_id, client=client, server=server, packets=packets, truth=truth)


def assemble_flows(
    packets: list[PacketRecord],
    timeout: float = DEFAULT_FLOW_TIMEOUT,
    id_prefix: str = "flow",
    truth: str = "unknown",
) -> list[Flow]:
    """Partitions packets into flows; every packet lands in exactly one flow.

    Flows are returned ordered by first packet timestamp (arrival order
    breaking ties) and numbered in that order.
    """
    if timeout <= 0:
        raise DataError("flow timeout must be > 0")
    active: dict[tuple[Endpoint, Endpoint], _FlowBuilder] = {}
    done: list[_FlowBuilder] = []
    arrival = 0
    for pkt in packets:
        key = pair_key((pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port))
        builder = active.get(key)
        if builder is not None and pkt.timestamp - builder.packets[-1].timestamp > timeout:
            done.append(builder)
            builder = None
        if builder is None:
            builder = _FlowBuilder(arrival)
            arrival += 1
            active[key] = builder
        builder.add(pkt)
        if builder.closed:
            done.append(builder)
            del active[key]
    done.extend(active.values())
    done.sort(key=lambda b: (b.packets[0].timestamp, b.arrival))
    return [
        builder.finalize(f"{id_prefix}-{i:06d}", truth)
        for i, builder in enumerate(done)
    ]


# Fixed per-flow feature list. Cross-flow rates (flows per source per
# minute) are deliberately excluded: they are not a per-flow statistic.
FEATURE_NAMES: tuple[str, ...] = (
    "duration",
    "packets_total", "packets_c2s", "packets_s2c",
    "bytes_total", "bytes_c2s", "bytes_s2c",
    "payload_total", "payload_c2s", "payload_s2c",
    "syn_count", "ack_count", "fin_count", "rst_count", "psh_count", "urg_count",
    "pkt_len_mean", "pkt_len_std", "pkt_len_min", "pkt_len_max",
    "pkt_len_c2s_mean", "pkt_len_c2s_std", "pkt_len_c2s_min", "pkt_len_c2s_max",
    "pkt_len_s2c_mean", "pkt_len_s2c_std", "pkt_len_s2c_min", "pkt_len_s2c_max",
    "iat_mean", "iat_std",
    "iat_c2s_mean", "iat_c2s_std",
    "iat_s2c_mean", "iat_s2c_std",
    "packets_per_s", "bytes_per_s",
    "packet_ratio_s2c_c2s", "byte_ratio_s2c_c2s",
    "payload_mean_c2s", "payload_mean_s2c",
)


def _len_stats(lengths: np.ndarray) -> tuple[float, float, float, float]:
    if lengths.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    return (
        float(lengths.mean()),
        float(lengths.std()),
        float(lengths.min()),
        float(lengths.max()),
    )


def _iat_stats(times: np.ndarray) -> tuple[float, float]:
    if times.size < 2:
        return 0.0, 0.0
    gaps = np.diff(times)
    return float(gaps.mean()), float(gaps.std())


def featurize(flow: Flow) -> np.ndarray:
    """Computes the FEATURE_NAMES vector for one flow. Deterministic; the
    std of a single observation is 0."""
    if not flow.packets:
        raise DataError("cannot featurize an empty flow")
    c2s = [p for p in flow.packets if p.direction is Direction.CLIENT_TO_SERVER]
    s2c = [p for p in flow.packets if p.direction is Direction.SERVER_TO_CLIENT]
    lens = np.array([p.total_len for p in flow.packets], dtype=float)
    lens_c = np.array([p.total_len for p in c2s], dtype=float)
    lens_s = np.array([p.total_len for p in s2c], dtype=float)
    times = np.array([p.timestamp for p in flow.packets], dtype=float)
    times_c = np.array([p.timestamp for p in c2s], dtype=float)
    times_s = np.array([p.timestamp for p in s2c], dtype=float)
    duration = flow.duration
    payload_c = float(sum(p.payload_len for p in c2s))
    payload_s = float(sum(p.payload_len for p in s2c))
    flag_count = lambda f: float(sum(1 for p in flow.packets if f in p.flags))

    values = {
        "duration": duration,
        "packets_total": float(len(flow.packets)),
        "packets_c2s": float(len(c2s)),
        "packets_s2c": float(len(s2c)),
        "bytes_total": float(lens.sum()),
        "bytes_c2s": float(lens_c.sum()) if lens_c.size else 0.0,
        "bytes_s2c": float(lens_s.sum()) if lens_s.size else 0.0,
        "payload_total": payload_c + payload_s,
        "payload_c2s": payload_c,
        "payload_s2c": payload_s,
        "syn_count": flag_count("SYN"),
        "ack_count": flag_count("ACK"),
        "fin_count": flag_count("FIN"),
        "rst_count": flag_count("RST"),
        "psh_count": flag_count("PSH"),
        "urg_count": flag_count("URG"),
    }
    for prefix, arr in (("pkt_len", lens), ("pkt_len_c2s", lens_c), ("pkt_len_s2c", lens_s)):
        mean, std, lo, hi = _len_stats(arr)
        values[f"{prefix}_mean"] = mean
        values[f"{prefix}_std"] = std
        values[f"{prefix}_min"] = lo
        values[f"{prefix}_max"] = hi
    for prefix, arr in (("iat", times), ("iat_c2s", times_c), ("iat_s2c", times_s)):
        mean, std = _iat_stats(arr)
        values[f"{prefix}_mean"] = mean
        values[f"{prefix}_std"] = std
    values["packets_per_s"] = len(flow.packets) / duration if duration > 0 else 0.0
    values["bytes_per_s"] = float(lens.sum()) / duration if duration > 0 else 0.0
    values["packet_ratio_s2c_c2s"] = len(s2c) / max(len(c2s), 1)
    values["byte_ratio_s2c_c2s"] = float(lens_s.sum() if lens_s.size else 0.0) / max(
        float(lens_c.sum()) if lens_c.size else 0.0, 1.0
    )
    values["payload_mean_c2s"] = payload_c / max(len(c2s), 1)
    values["payload_mean_s2c"] = payload_s / max(len(s2c), 1)
    return np.array([values[name] for name in FEATURE_NAMES], dtype=float)


@dataclass
class FlowRecord:
    """The per-flow artifact the pipeline operates on: features + trace."""

    flow_id: str
    truth: str
    features: np.ndarray
    events: tuple[str, ...]
    client: Endpoint = ("", 0)
    server: Endpoint = ("", 0)
    first_ts: float = 0.0
    last_ts: float = 0.0


def _fmt(value: float) -> str:
    return repr(float(value))


def write_flows_csv(records: list[FlowRecord], path: str | Path) -> None:
    """Writes the documented flows CSV (one row per flow, schema versioned)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema: {FLOWS_CSV_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["flow_id", "client_ip", "client_port", "server_ip", "server_port",
             "first_ts", "last_ts", "truth", *FEATURE_NAMES]
        )
        for rec in records:
            writer.writerow(
                [rec.flow_id, rec.client[0], rec.client[1], rec.server[0], rec.server[1],
                 _fmt(rec.first_ts), _fmt(rec.last_ts), rec.truth,
                 *(_fmt(v) for v in rec.features)]
            )


def write_flow_events(flows: list[Flow], path: str | Path) -> None:
    """Writes the flow-id -> ordered (direction, flags, timestamp) mapping."""
    from .events import flags_label  # local import: events depends on this module

    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"schema": FLOW_EVENTS_SCHEMA}) + "\n")
        for flow in flows:
            row = {
                "flow_id": flow.flow_id,
                "truth": flow.truth,
                "events": [
                    [p.direction.value, flags_label(p.flags), p.timestamp]
                    for p in flow.packets
                ],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_corpus(flows_csv: str | Path, events_path: str | Path) -> list[FlowRecord]:
    """Loads FlowRecords back from the flows CSV plus the events file."""
    flows_csv, events_path = Path(flows_csv), Path(events_path)
    events: dict[str, tuple[str, ...]] = {}
    with events_path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != FLOW_EVENTS_SCHEMA:
            raise SchemaError(f"{events_path}: expected schema {FLOW_EVENTS_SCHEMA}")
        for line in fh:
            row = json.loads(line)
            events[row["flow_id"]] = tuple(
                f"{direction}_{flags}" for direction, flags, _ts in row["events"]
            )
    records: list[FlowRecord] = []
    with flows_csv.open(newline="") as fh:
        first = fh.readline()
        if not first.startswith(f"# schema: {FLOWS_CSV_SCHEMA}"):
            raise SchemaError(f"{flows_csv}: expected schema {FLOWS_CSV_SCHEMA}")
        reader = csv.DictReader(fh)
        for row in reader:
            flow_id = row["flow_id"]
            if flow_id not in events:
                raise DataError(f"{flows_csv}: flow {flow_id} missing from events file")
            records.append(
                FlowRecord(
                    flow_id=flow_id,
                    truth=row["truth"],
                    features=np.array([float(row[name]) for name in FEATURE_NAMES]),
                    events=events[flow_id],
                    client=(row["client_ip"], int(row["client_port"])),
                    server=(row["server_ip"], int(row["server_port"])),
                    first_ts=float(row["first_ts"]),
                    last_ts=float(row["last_ts"]),
                )
            )
    return records
