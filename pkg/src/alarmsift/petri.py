"""Petri net data model: firing semantics, workflow-shape and soundness
checks, and PNML serialization.

Nets here are workflow nets: a unique source place carrying the single
initial token, a unique sink place carrying the single final token, and
every node on a path between them. Arcs have unit weight.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataError, SchemaError

PNML_NET_TYPE = "http://www.pnml.org/version-2009/grammar/ptnet"


@dataclass(frozen=True)
class Transition:
    tid: str
    label: str | None = None  # None = silent

    @property
    def silent(self) -> bool:
        return self.label is None


Marking = dict[str, int]


class PetriNet:
    """Immutable place/transition net with unit-weight arcs."""

    def __init__(
        self,
        places: Iterable[str],
        transitions: Iterable[Transition],
        arcs: Iterable[tuple[str, str]],
        initial_marking: Mapping[str, int],
        final_marking: Mapping[str, int],
    ):
        self.places: tuple[str, ...] = tuple(places)
        self.transitions: tuple[Transition, ...] = tuple(transitions)
        self.arcs: tuple[tuple[str, str], ...] = tuple(arcs)
        self.initial_marking: Marking = {p: c for p, c in initial_marking.items() if c}
        self.final_marking: Marking = {p: c for p, c in final_marking.items() if c}

        place_set = set(self.places)
        tid_set = {t.tid for t in self.transitions}
        if len(place_set) != len(self.places) or len(tid_set) != len(self.transitions):
            raise DataError("duplicate place or transition ids")
        if place_set & tid_set:
            raise DataError("place and transition ids must be disjoint")
        for src, dst in self.arcs:
            ok = (src in place_set and dst in tid_set) or (src in tid_set and dst in place_set)
            if not ok:
                raise DataError(f"arc ({src}, {dst}) is not place<->transition")
        for marking in (self.initial_marking, self.final_marking):
            for p in marking:
                if p not in place_set:
                    raise DataError(f"marking references unknown place {p}")

        self._place_idx = {p: i for i, p in enumerate(self.places)}
        self._tid_idx = {t.tid: j for j, t in enumerate(self.transitions)}
        self._pre: list[tuple[int, ...]] = [() for _ in self.transitions]
        self._post: list[tuple[int, ...]] = [() for _ in self.transitions]
        pre: dict[int, list[int]] = {j: [] for j in range(len(self.transitions))}
        post: dict[int, list[int]] = {j: [] for j in range(len(self.transitions))}
        for src, dst in self.arcs:
            if src in self._place_idx:
                pre[self._tid_idx[dst]].append(self._place_idx[src])
            else:
                post[self._tid_idx[src]].append(self._place_idx[dst])
        for j in range(len(self.transitions)):
            self._pre[j] = tuple(sorted(pre[j]))
            self._post[j] = tuple(sorted(post[j]))
        self._label_map: dict[str, tuple[int, ...]] = {}
        for j, t in enumerate(self.transitions):
            if t.label is not None:
                self._label_map.setdefault(t.label, ())
                self._label_map[t.label] += (j,)

    # --- tuple-marking fast path (used by replay and alignment search) ----

    def marking_tuple(self, marking: Mapping[str, int]) -> tuple[int, ...]:
        return tuple(marking.get(p, 0) for p in self.places)

    def marking_dict(self, m: tuple[int, ...]) -> Marking:
        return {p: c for p, c in zip(self.places, m) if c}

    @property
    def initial_tuple(self) -> tuple[int, ...]:
        return self.marking_tuple(self.initial_marking)

    @property
    def final_tuple(self) -> tuple[int, ...]:
        return self.marking_tuple(self.final_marking)

    def is_enabled_index(self, m: tuple[int, ...], j: int) -> bool:
        return all(m[p] >= 1 for p in self._pre[j])

    def enabled_indexes(self, m: tuple[int, ...]) -> list[int]:
        return [j for j in range(len(self.transitions)) if self.is_enabled_index(m, j)]

    def fire_index(self, m: tuple[int, ...], j: int) -> tuple[int, ...]:
        out = list(m)
        for p in self._pre[j]:
            out[p] -= 1
        for p in self._post[j]:
            out[p] += 1
        return tuple(out)

    def labeled_indexes(self, label: str) -> tuple[int, ...]:
        return self._label_map.get(label, ())

    @property
    def labels(self) -> frozenset[str]:
        return frozenset(self._label_map)

    # --- spec-facing marking API ------------------------------------------

    def enabled(self, marking: Mapping[str, int]) -> list[Transition]:
        """Transitions enabled under the marking, in deterministic (id) order."""
        m = self.marking_tuple(marking)
        js = self.enabled_indexes(m)
        return sorted((self.transitions[j] for j in js), key=lambda t: t.tid)

    def fire(self, marking: Mapping[str, int], tid: str) -> Marking:
        """Fires one transition; raises DataError if it is not enabled."""
        if tid not in self._tid_idx:
            raise DataError(f"unknown transition {tid!r}")
        j = self._tid_idx[tid]
        m = self.marking_tuple(marking)
        if not self.is_enabled_index(m, j):
            raise DataError(f"transition {tid!r} is not enabled")
        return self.marking_dict(self.fire_index(m, j))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PetriNet):
            return NotImplemented
        return (
            sorted(self.places) == sorted(other.places)
            and sorted(self.transitions, key=lambda t: t.tid)
            == sorted(other.transitions, key=lambda t: t.tid)
            and sorted(self.arcs) == sorted(other.arcs)
            and self.initial_marking == other.initial_marking
            and self.final_marking == other.final_marking
        )

    def __repr__(self) -> str:
        return (
            f"PetriNet(|P|={len(self.places)}, |T|={len(self.transitions)}, "
            f"|F|={len(self.arcs)})"
        )


def workflow_shape_errors(net: PetriNet) -> list[str]:
    """Checks the workflow-net shape; returns human-readable violations."""
    errors: list[str] = []
    incoming: dict[str, int] = {p: 0 for p in net.places}
    outgoing: dict[str, int] = {p: 0 for p in net.places}
    for src, dst in net.arcs:
        if dst in incoming:
            incoming[dst] += 1
        if src in outgoing:
            outgoing[src] += 1
    sources = [p for p in net.places if incoming[p] == 0]
    sinks = [p for p in net.places if outgoing[p] == 0]
    if len(sources) != 1:
        errors.append(f"expected one source place, found {sources}")
    if len(sinks) != 1:
        errors.append(f"expected one sink place, found {sinks}")
    if sources and net.initial_marking != {sources[0]: 1}:
        errors.append("initial marking is not one token on the source place")
    if sinks and net.final_marking != {sinks[0]: 1}:
        errors.append("final marking is not one token on the sink place")
    if sources and sinks:
        fwd = _graph_reach(net, sources[0], forward=True)
        bwd = _graph_reach(net, sinks[0], forward=False)
        nodes = set(net.places) | {t.tid for t in net.transitions}
        off_path = sorted(nodes - (fwd & bwd))
        if off_path:
            errors.append(f"nodes not on a source-to-sink path: {off_path}")
    return errors


def is_workflow_net(net: PetriNet) -> bool:
    return not workflow_shape_errors(net)


def _graph_reach(net: PetriNet, start: str, forward: bool) -> set[str]:
    adj: dict[str, list[str]] = {}
    for src, dst in net.arcs:
        a, b = (src, dst) if forward else (dst, src)
        adj.setdefault(a, []).append(b)
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


@dataclass
class SoundnessReport:
    bounded: bool
    sound: bool
    issues: list[str]


def check_soundness(net: PetriNet, max_markings: int = 50_000) -> SoundnessReport:
    """Reachability-based soundness check for desk-scale nets.

    Verifies the option to complete (the final marking is reachable from
    every reachable marking), proper completion (no reachable marking
    strictly covers the final marking), and absence of dead transitions.
    Exploration is capped at max_markings states.
    """
    issues: list[str] = []
    initial = net.initial_tuple
    final = net.final_tuple
    edges: dict[tuple[int, ...], list[tuple[int, tuple[int, ...]]]] = {}
    seen = {initial}
    queue = deque([initial])
    fired: set[int] = set()
    bounded = True
    while queue:
        if len(seen) > max_markings:
            bounded = False
            issues.append(f"exploration cap of {max_markings} markings exceeded")
            break
        m = queue.popleft()
        succs = []
        for j in net.enabled_indexes(m):
            fired.add(j)
            nxt = net.fire_index(m, j)
            succs.append((j, nxt))
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
        edges[m] = succs
    if bounded:
        if final not in seen:
            issues.append("final marking unreachable from the initial marking")
        for m in seen:
            if m != final and all(a >= b for a, b in zip(m, final)) and any(
                a > b for a, b in zip(m, final)
            ):
                issues.append(f"improper completion: marking {m} covers the final marking")
                break
        # Option to complete: reverse reachability from the final marking.
        rev: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
        for m, succs in edges.items():
            for _, nxt in succs:
                rev.setdefault(nxt, []).append(m)
        can_finish = {final} if final in seen else set()
        queue = deque(can_finish)
        while queue:
            m = queue.popleft()
            for prev in rev.get(m, ()):
                if prev not in can_finish:
                    can_finish.add(prev)
                    queue.append(prev)
        stuck = [m for m in seen if m not in can_finish]
        if stuck:
            issues.append(f"{len(stuck)} reachable marking(s) cannot reach the final marking")
        dead = [net.transitions[j].tid for j in range(len(net.transitions)) if j not in fired]
        if dead:
            issues.append(f"dead transitions: {sorted(dead)}")
    return SoundnessReport(bounded=bounded, sound=bounded and not issues, issues=issues)


# --- PNML ----------------------------------------------------------------

def export_pnml(net: PetriNet, path: str | Path, net_id: str = "net0") -> None:
    """Deterministic PNML with a finalmarkings extension element."""
    root = ET.Element("pnml")
    net_el = ET.SubElement(root, "net", {"id": net_id, "type": PNML_NET_TYPE})
    page = ET.SubElement(net_el, "page", {"id": "page0"})
    for p in sorted(net.places):
        p_el = ET.SubElement(page, "place", {"id": p})
        name = ET.SubElement(p_el, "name")
        ET.SubElement(name, "text").text = p
        if net.initial_marking.get(p):
            im = ET.SubElement(p_el, "initialMarking")
            ET.SubElement(im, "text").text = str(net.initial_marking[p])
    for t in sorted(net.transitions, key=lambda t: t.tid):
        t_el = ET.SubElement(page, "transition", {"id": t.tid})
        if t.label is not None:
            name = ET.SubElement(t_el, "name")
            ET.SubElement(name, "text").text = t.label
    for i, (src, dst) in enumerate(sorted(net.arcs)):
        ET.SubElement(page, "arc", {"id": f"a{i}", "source": src, "target": dst})
    finals = ET.SubElement(net_el, "finalmarkings")
    marking_el = ET.SubElement(finals, "marking")
    for p in sorted(net.final_marking):
        ref = ET.SubElement(marking_el, "place", {"idref": p})
        ET.SubElement(ref, "text").text = str(net.final_marking[p])
    ET.indent(root)
    Path(path).write_bytes(ET.tostring(root, xml_declaration=True, encoding="utf-8"))


def import_pnml(path: str | Path) -> PetriNet:
    try:
        root = ET.parse(Path(path)).getroot()
    except ET.ParseError as exc:
        raise SchemaError(f"{path}: not parseable PNML: {exc}") from exc
    net_el = root.find("net")
    if net_el is None:
        raise SchemaError(f"{path}: missing <net> element")
    page = net_el.find("page")
    container = page if page is not None else net_el
    places: list[str] = []
    transitions: list[Transition] = []
    arcs: list[tuple[str, str]] = []
    initial: Marking = {}
    for p_el in container.findall("place"):
        pid = p_el.attrib["id"]
        places.append(pid)
        im = p_el.find("initialMarking/text")
        if im is not None and im.text and int(im.text):
            initial[pid] = int(im.text)
    for t_el in container.findall("transition"):
        label_el = t_el.find("name/text")
        label = label_el.text if label_el is not None else None
        transitions.append(Transition(tid=t_el.attrib["id"], label=label))
    for a_el in container.findall("arc"):
        arcs.append((a_el.attrib["source"], a_el.attrib["target"]))
    final: Marking = {}
    for ref in net_el.findall("finalmarkings/marking/place"):
        text = ref.find("text")
        final[ref.attrib["idref"]] = int(text.text) if text is not None else 1
    if not final:
        # Fall back to the structural sink place.
        outgoing = {src for src, _ in arcs}
        sinks = [p for p in places if p not in outgoing]
        if len(sinks) != 1:
            raise SchemaError(f"{path}: no final marking and no unique sink place")
        final = {sinks[0]: 1}
    return PetriNet(places, transitions, arcs, initial, final)
