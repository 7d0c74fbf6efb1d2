"""Pipeline graphs: elements, pads, links, validation, negotiation.

A PipelineGraph is a mutable description.  validate() checks structure,
negotiates one concrete spec per pad in a single source-to-sink pass, and
returns diagnostics instead of raising; the graph itself is not mutated,
so validate is idempotent.  A passing ValidationResult doubles as the
immutable execution plan the runtime consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from .elements import base
from .errors import (DirectionError, DuplicateName, IncompatibleSpecs,
                     PadOccupied, StreamError, UnknownPad)
from .tensors import Spec, intersect_specs, specs_compatible

PadRef = tuple[str, str]  # (element name, pad name)


@dataclass(frozen=True)
class PadInfo:
    name: str
    direction: str
    presence: str


class ElementDescriptor:
    """One element instance in a graph: kind class, name, props, pads."""

    def __init__(self, kind: type[base.RuntimeElement], name: str,
                 props: dict[str, Any]):
        self.kind = kind
        self.name = name
        self.props = props
        self.pads: dict[str, PadInfo] = {}
        for tpl in kind.PADS:
            if not tpl.is_request:
                self.pads[tpl.name] = PadInfo(tpl.name, tpl.direction, "static")

    def sink_pad_names(self) -> list[str]:
        return [p.name for p in self.pads.values() if p.direction == base.SINK]

    def source_pad_names(self) -> list[str]:
        return [p.name for p in self.pads.values() if p.direction == base.SRC]

    def pad_names(self) -> "base.PadNames":
        return base.PadNames(tuple(self.sink_pad_names()),
                             tuple(self.source_pad_names()))

    def _request_template(self, direction: str | None = None,
                          instance: str | None = None) -> base.PadTemplate | None:
        for tpl in self.kind.PADS:
            if not tpl.is_request:
                continue
            if direction and tpl.direction != direction:
                continue
            if instance and not tpl.matches_instance(instance):
                continue
            return tpl
        return None

    def request_pad(self, instance: str | None = None,
                    direction: str | None = None) -> PadInfo:
        """Create a request pad, by explicit name or next free index."""
        tpl = self._request_template(direction, instance)
        if tpl is None:
            what = instance or direction or "pad"
            raise UnknownPad(f"{self.name} ({self.kind.KIND}) has no request {what}")
        if instance is None:
            index = 0
            while tpl.instance_name(index) in self.pads:
                index += 1
            instance = tpl.instance_name(index)
        if instance in self.pads:
            raise PadOccupied(f"{self.name}.{instance} already exists")
        info = PadInfo(instance, tpl.direction, "request")
        self.pads[instance] = info
        return info

    def get_pad(self, name: str) -> PadInfo:
        try:
            return self.pads[name]
        except KeyError:
            raise UnknownPad(f"{self.name} has no pad {name!r}") from None

    def template_spec(self, pad: str, direction: str) -> Spec | None:
        return self.kind.template_spec(self.props, pad, direction)


@dataclass(frozen=True)
class Link:
    src: PadRef
    sink: PadRef
    filter: Spec | None = None


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding; serializes to a single text line."""

    code: str
    element: str
    pad: str | None = None
    message: str = ""

    def __str__(self) -> str:
        where = f"{self.element}.{self.pad}" if self.pad else self.element
        return f"{self.code}: {where}: {self.message}" if self.message \
            else f"{self.code}: {where}"


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    diagnostics: tuple[Diagnostic, ...]
    specs: dict[PadRef, Spec] = field(default_factory=dict)

    def spec_of(self, element: str, pad: str) -> Spec | None:
        return self.specs.get((element, pad))


class PipelineGraph:
    """Mutable pipeline description with named elements and typed links."""

    def __init__(self):
        self.elements: dict[str, ElementDescriptor] = {}
        self.links: list[Link] = []

    # --- construction -------------------------------------------------------

    def add_element(self, kind_name: str, name: str | None = None,
                    props: dict[str, Any] | None = None) -> ElementDescriptor:
        kind = base.get_kind(kind_name)
        props = base.coerce_props(kind, dict(props or {}))
        if name is None:
            name = self._auto_name(kind.KIND)
        if name in self.elements:
            raise DuplicateName(f"element name {name!r} already in use")
        desc = ElementDescriptor(kind, name, props)
        self.elements[name] = desc
        return desc

    def _auto_name(self, kind_name: str) -> str:
        index = 0
        while f"{kind_name}{index}" in self.elements:
            index += 1
        return f"{kind_name}{index}"

    def element(self, name: str) -> ElementDescriptor:
        try:
            return self.elements[name]
        except KeyError:
            raise UnknownPad(f"no element named {name!r}") from None

    # --- linking --------------------------------------------------------------

    def _linked_src_pads(self) -> set[PadRef]:
        return {l.src for l in self.links}

    def _linked_sink_pads(self) -> set[PadRef]:
        return {l.sink for l in self.links}

    def _resolve_end(self, end, direction: str) -> PadRef:
        """Resolve an element/padref into a concrete free pad.

        Accepts an ElementDescriptor, an element name, or (element, pad).
        When the pad is unspecified, picks the first free pad of the right
        direction, requesting a new one if the kind allows it.
        """
        if isinstance(end, ElementDescriptor):
            desc, pad = end, None
        elif isinstance(end, tuple):
            desc = end[0] if isinstance(end[0], ElementDescriptor) else self.element(end[0])
            pad = end[1]
        else:
            name, _, pad = str(end).partition(".")
            desc = self.element(name)
            pad = pad or None
        occupied = self._linked_src_pads() if direction == base.SRC else self._linked_sink_pads()
        if pad is None:
            existing = (desc.source_pad_names() if direction == base.SRC
                        else desc.sink_pad_names())
            for cand in existing:
                if (desc.name, cand) not in occupied:
                    pad = cand
                    break
            if pad is None:
                if existing and desc._request_template(direction=direction) is None:
                    raise PadOccupied(
                        f"every {direction} pad of {desc.name} is already linked")
                pad = desc.request_pad(direction=direction).name
        else:
            if pad not in desc.pads:
                # explicit request instance, e.g. mux.sink_1
                desc.request_pad(instance=pad)
        info = desc.get_pad(pad)
        if info.direction != direction:
            raise DirectionError(f"{desc.name}.{pad} is not a {direction} pad")
        return (desc.name, pad)

    def link(self, src, sink, filter: Spec | None = None) -> Link:
        """Link a source pad to a sink pad, optionally through a spec filter."""
        src_ref = self._resolve_end(src, base.SRC)
        sink_ref = self._resolve_end(sink, base.SINK)
        if src_ref in self._linked_src_pads():
            raise PadOccupied(f"{src_ref[0]}.{src_ref[1]} already linked")
        if sink_ref in self._linked_sink_pads():
            raise PadOccupied(f"{sink_ref[0]}.{sink_ref[1]} already linked")
        src_tpl = self.element(src_ref[0]).template_spec(src_ref[1], base.SRC)
        sink_tpl = self.element(sink_ref[0]).template_spec(sink_ref[1], base.SINK)
        try:
            merged = intersect_specs(src_tpl, sink_tpl)
            intersect_specs(merged, filter)
        except ValueError as e:
            raise IncompatibleSpecs(str(e)) from None
        link = Link(src_ref, sink_ref, filter)
        self.links.append(link)
        return link

    def remove_link(self, src: PadRef, sink: PadRef) -> None:
        for i, link in enumerate(self.links):
            if link.src == src and link.sink == sink:
                del self.links[i]
                return
        raise UnknownPad(f"no link {src} -> {sink}")

    # --- validation -------------------------------------------------------------

    def _topo_order(self) -> tuple[list[str], list[str]]:
        """Kahn topological sort; returns (ordered names, names on cycles)."""
        indeg = {name: 0 for name in self.elements}
        out_edges: dict[str, list[str]] = {name: [] for name in self.elements}
        for link in self.links:
            out_edges[link.src[0]].append(link.sink[0])
            indeg[link.sink[0]] += 1
        ready = [n for n in self.elements if indeg[n] == 0]
        order: list[str] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for m in out_edges[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    ready.append(m)
        stuck = [n for n in self.elements if n not in order]
        return order, stuck

    def validate(self) -> ValidationResult:
        diags: list[Diagnostic] = []
        specs: dict[PadRef, Spec] = {}
        incoming: dict[PadRef, Link] = {l.sink: l for l in self.links}
        outgoing: dict[PadRef, Link] = {l.src: l for l in self.links}

        linked = self._linked_src_pads() | self._linked_sink_pads()
        for desc in self.elements.values():
            for pad in desc.pads.values():
                if (desc.name, pad.name) not in linked:
                    diags.append(Diagnostic("UnlinkedPad", desc.name, pad.name,
                                            "pad is not linked"))

        order, stuck = self._topo_order()
        if stuck:
            diags.append(Diagnostic("IllegalCycle", ",".join(sorted(stuck)), None,
                                    "cycle without a repo sink/source pair"))

        slot_specs: dict[str, Spec] = {}
        slot_parties: dict[str, dict[str, list[str]]] = {}

        for name in order:
            desc = self.elements[name]
            kind = desc.kind

            inputs: dict[str, Spec] = {}
            missing_input = False
            for pad in desc.sink_pad_names():
                link = incoming.get((name, pad))
                if link is None:
                    missing_input = True
                    continue
                upstream = specs.get(link.src)
                if upstream is None:
                    missing_input = True
                    continue
                inputs[pad] = upstream

            constraints: dict[str, Spec | None] = {}
            for pad in desc.source_pad_names():
                link = outgoing.get((name, pad))
                c = None
                if link is not None:
                    sink_desc = self.elements[link.sink[0]]
                    try:
                        c = intersect_specs(
                            link.filter,
                            sink_desc.template_spec(link.sink[1], base.SINK))
                    except ValueError as e:
                        diags.append(Diagnostic("IncompatibleSpecs", name, pad, str(e)))
                constraints[pad] = c

            props = desc.props
            if kind.KIND == "tensor_reposrc":
                slot = props.get("slot")
                slot_parties.setdefault(slot, {}).setdefault("src", []).append(name)
                if slot in slot_specs:
                    props = dict(props, _slot_spec=slot_specs[slot])

            try:
                outs = kind.infer_outputs(props, inputs, constraints,
                                          desc.pad_names())
            except StreamError as e:
                diags.append(Diagnostic(type(e).__name__, name, None, str(e)))
                continue

            for pad in desc.sink_pad_names():
                if pad in inputs:
                    specs[(name, pad)] = inputs[pad]

            if kind.KIND == "tensor_reposink":
                slot = props.get("slot")
                slot_parties.setdefault(slot, {}).setdefault("sink", []).append(name)
                spec_in = inputs.get("sink")
                if spec_in is not None:
                    prior = slot_specs.get(slot)
                    if prior is not None and not specs_compatible(prior, spec_in):
                        diags.append(Diagnostic(
                            "IncompatibleSpecs", name, "sink",
                            f"slot {slot!r} bound to {prior.to_string()} elsewhere"))
                    slot_specs[slot] = spec_in

            for pad in desc.source_pad_names():
                raw = outs.get(pad)
                try:
                    final = intersect_specs(raw, constraints.get(pad))
                except ValueError as e:
                    diags.append(Diagnostic("IncompatibleSpecs", name, pad, str(e)))
                    continue
                if final is None:
                    if not missing_input:
                        diags.append(Diagnostic("UnresolvedSpec", name, pad,
                                                "no concrete spec negotiated"))
                    continue
                specs[(name, pad)] = final
                link = outgoing.get((name, pad))
                if link is not None:
                    specs[link.sink] = final

        for slot, parties in slot_parties.items():
            sinks = parties.get("sink", [])
            srcs = parties.get("src", [])
            if len(sinks) != 1 or len(srcs) != 1:
                where = ",".join(sorted(sinks + srcs))
                diags.append(Diagnostic(
                    "SlotError", where, None,
                    f"slot {slot!r} needs exactly one reposink and one reposrc "
                    f"(found {len(sinks)} sink(s), {len(srcs)} source(s))"))

        for name in self.elements:
            desc = self.elements[name]
            if desc.kind.KIND == "tensor_reposrc":
                slot = desc.props.get("slot")
                declared = specs.get((name, "src"))
                bound = slot_specs.get(slot)
                if (declared is not None and bound is not None
                        and not specs_compatible(declared, bound)):
                    diags.append(Diagnostic(
                        "IncompatibleSpecs", name, "src",
                        f"declared spec {declared.to_string()} does not match "
                        f"slot {slot!r} spec {bound.to_string()}"))

        return ValidationResult(not diags, tuple(diags), specs)
