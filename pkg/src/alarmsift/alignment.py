"""Optimal trace/net alignments and misalignment profiles.

Alignments are computed with best-first search over the synchronous
product of a workflow net and a trace. Costs are the standard unit
scheme: synchronous and silent-model moves are free, log-only and
model-only moves cost 1. The admissible heuristic is the number of
remaining trace labels that no net transition can ever match.

Tie-breaking is deterministic: successors are generated preferring
synchronous moves, then silent model moves, then visible model moves in
label order, then the log move; equal-cost frontier entries pop in
generation order.
"""
from __future__ import annotations

import heapq
import json
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import BudgetError, DataError
from .events import Fragment, StateEventLog
from .petri import PetriNet

DEFAULT_BUDGET = 1_000_000


class MoveKind(str, Enum):
    SYNCHRONOUS = "sync"
    LOG_ONLY = "log"
    MODEL_ONLY = "model"
    MODEL_SILENT = "model-silent"


_MOVE_COST = {
    MoveKind.SYNCHRONOUS: 0,
    MoveKind.LOG_ONLY: 1,
    MoveKind.MODEL_ONLY: 1,
    MoveKind.MODEL_SILENT: 0,
}


@dataclass(frozen=True)
class Move:
    kind: MoveKind
    label: str | None = None
    tid: str | None = None  # firing transition; absent for log-only moves

    @property
    def cost(self) -> int:
        return _MOVE_COST[self.kind]


@dataclass(frozen=True)
class Alignment:
    moves: tuple[Move, ...]
    cost: int

    def log_projection(self) -> tuple[str, ...]:
        return tuple(
            m.label for m in self.moves
            if m.kind in (MoveKind.SYNCHRONOUS, MoveKind.LOG_ONLY)
        )

    def model_labels(self) -> tuple[str | None, ...]:
        return tuple(
            m.label for m in self.moves
            if m.kind in (MoveKind.SYNCHRONOUS, MoveKind.MODEL_ONLY, MoveKind.MODEL_SILENT)
        )

    def misaligned(self) -> tuple[Move, ...]:
        return tuple(
            m for m in self.moves
            if m.kind in (MoveKind.LOG_ONLY, MoveKind.MODEL_ONLY)
        )


def _suffix_unmatchable(trace: Sequence[str], net_labels: frozenset[str]) -> list[int]:
    # h[i] = number of events at positions >= i that no transition matches;
    # each of those must eventually be a log move, so h is admissible and
    # consistent.
    h = [0] * (len(trace) + 1)
    for i in range(len(trace) - 1, -1, -1):
        h[i] = h[i + 1] + (0 if trace[i] in net_labels else 1)
    return h


def align(net: PetriNet, trace: Sequence[str], budget: int = DEFAULT_BUDGET) -> Alignment:
    """Minimal-cost alignment between a trace and a workflow net.

    Raises BudgetError (carrying the best known cost lower bound) when the
    expansion budget is exhausted, and DataError when the final marking is
    unreachable altogether.
    """
    trace = tuple(trace)
    net_labels = net.labels
    h = _suffix_unmatchable(trace, net_labels)
    start = (net.initial_tuple, 0)
    goal_pos = len(trace)
    final = net.final_tuple

    counter = 0
    frontier: list[tuple[int, int, int, tuple]] = []
    heapq.heappush(frontier, (h[0], h[0], counter, start))
    best_g: dict[tuple, int] = {start: 0}
    came_from: dict[tuple, tuple[tuple, Move]] = {}
    expansions = 0

    while frontier:
        f, _, _, state = heapq.heappop(frontier)
        marking, pos = state
        g = best_g[state]
        if f > g + h[pos]:
            continue  # stale entry
        if pos == goal_pos and marking == final:
            moves: list[Move] = []
            cur = state
            while cur != start:
                prev, move = came_from[cur]
                moves.append(move)
                cur = prev
            moves.reverse()
            return Alignment(moves=tuple(moves), cost=g)
        expansions += 1
        if expansions > budget:
            raise BudgetError(
                f"alignment search exceeded {budget} expansions",
                cost_lower_bound=f,
            )

        succs: list[tuple[tuple, Move]] = []
        enabled = net.enabled_indexes(marking)
        if pos < goal_pos:
            for j in enabled:
                t = net.transitions[j]
                if t.label == trace[pos]:
                    succs.append(
                        ((net.fire_index(marking, j), pos + 1),
                         Move(MoveKind.SYNCHRONOUS, trace[pos], t.tid))
                    )
        for j in enabled:
            t = net.transitions[j]
            if t.silent:
                succs.append(
                    ((net.fire_index(marking, j), pos), Move(MoveKind.MODEL_SILENT, None, t.tid))
                )
        for j in sorted(enabled, key=lambda j: net.transitions[j].label or ""):
            t = net.transitions[j]
            if t.label is not None:
                succs.append(
                    ((net.fire_index(marking, j), pos), Move(MoveKind.MODEL_ONLY, t.label, t.tid))
                )
        if pos < goal_pos:
            succs.append(((marking, pos + 1), Move(MoveKind.LOG_ONLY, trace[pos])))

        for nxt, move in succs:
            ng = g + move.cost
            if ng < best_g.get(nxt, ng + 1):
                best_g[nxt] = ng
                came_from[nxt] = (state, move)
                counter += 1
                nh = h[nxt[1]]
                heapq.heappush(frontier, (ng + nh, nh, counter, nxt))

    raise DataError("final marking is unreachable from the initial marking")


@dataclass
class FragmentAlignment:
    """One aligned fragment: the per-analyst explanation unit."""

    flow_id: str
    state: int
    index: int
    events: tuple[str, ...]
    alignment: Alignment
    missing_net: bool = False


def _all_log_moves(events: Sequence[str]) -> Alignment:
    moves = tuple(Move(MoveKind.LOG_ONLY, e) for e in events)
    return Alignment(moves=moves, cost=len(moves))


def align_fragments(
    fragments: Iterable[Fragment],
    nets: Mapping[int, PetriNet],
    budget: int = DEFAULT_BUDGET,
    missing_net_ok: bool = True,
) -> list[FragmentAlignment]:
    out: list[FragmentAlignment] = []
    for frag in fragments:
        net = nets.get(frag.state)
        if net is None:
            if not missing_net_ok:
                raise DataError(f"no net for populated state {frag.state}")
            out.append(
                FragmentAlignment(
                    flow_id=frag.flow_id,
                    state=frag.state,
                    index=frag.index,
                    events=frag.events,
                    alignment=_all_log_moves(frag.events),
                    missing_net=True,
                )
            )
            continue
        out.append(
            FragmentAlignment(
                flow_id=frag.flow_id,
                state=frag.state,
                index=frag.index,
                events=frag.events,
                alignment=align(net, frag.events, budget=budget),
            )
        )
    return out


def _accumulate(profile: dict[str, float], alignment: Alignment) -> None:
    for move in alignment.misaligned():
        profile[move.label] = profile.get(move.label, 0.0) + 1.0


def profile_flow(
    fragments: Iterable[Fragment],
    nets: Mapping[int, PetriNet],
    budget: int = DEFAULT_BUDGET,
) -> tuple[dict[str, float], list[FragmentAlignment]]:
    """Raw per-flow misaligned-move counts plus the fragment alignments.

    A fragment whose state has no net (empty training log) contributes all
    of its events as log-only moves, flagged in the explanation.
    """
    aligned = align_fragments(fragments, nets, budget=budget, missing_net_ok=True)
    profile: dict[str, float] = {}
    for fa in aligned:
        _accumulate(profile, fa.alignment)
    return profile, aligned


def profile_reference(
    logs: Mapping[int, StateEventLog],
    nets: Mapping[int, PetriNet],
    budget: int = DEFAULT_BUDGET,
) -> dict[str, float]:
    """Reference profile: misaligned-move counts per label, averaged over
    source traces. Silent model moves are never counted."""
    counts: dict[str, float] = defaultdict(float)
    sources: set[str] = set()
    for state in sorted(logs):
        log = logs[state]
        if log.fragments and state not in nets:
            raise DataError(f"no net for populated state {state}")
        for frag in log.fragments:
            sources.add(frag.flow_id)
            _accumulate(counts, align(nets[state], frag.events, budget=budget))
    if not sources:
        return {}
    return {label: counts[label] / len(sources) for label in sorted(counts)}


# --- persistence ----------------------------------------------------------

PROFILE_CSV_SCHEMA = "alarmsift-profile/1"
ALIGNMENTS_SCHEMA = "alarmsift-alignments/1"


def write_profile_csv(profile: Mapping[str, float], path: str | Path) -> None:
    lines = [f"# schema: {PROFILE_CSV_SCHEMA}", "event_type,count"]
    for label in sorted(profile):
        lines.append(f"{label},{float(profile[label])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_profile_csv(path: str | Path) -> dict[str, float]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(f"# schema: {PROFILE_CSV_SCHEMA}"):
        raise DataError(f"{path}: expected schema {PROFILE_CSV_SCHEMA}")
    profile: dict[str, float] = {}
    for line in lines[2:]:
        if not line:
            continue
        label, value = line.rsplit(",", 1)
        profile[label] = float(value)
    return profile


def fragment_alignment_record(fa: FragmentAlignment) -> dict:
    return {
        "flow_id": fa.flow_id,
        "state": fa.state,
        "fragment": fa.index,
        "cost": fa.alignment.cost,
        "missing_net": fa.missing_net,
        "moves": [
            {"kind": m.kind.value, "label": m.label, "tid": m.tid}
            for m in fa.alignment.moves
        ],
    }


def write_alignments_jsonl(records: Iterable[dict], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        fh.write(json.dumps({"schema": ALIGNMENTS_SCHEMA}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
