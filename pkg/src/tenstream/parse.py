"""Textual pipeline descriptions.

Grammar::

    pipeline := chain (ws chain)*
    chain    := node (ws "!" ws node)*
    node     := element | padref | specfilter
    element  := KIND (ws KEY "=" VALUE)*
    padref   := NAME "." [PAD]

A spec string between two "!" tokens (recognized by the "/" in its media
type, e.g. ``video/x-raw,width=64``) constrains the link it sits on
instead of adding a node.  Values may be double-quoted to carry spaces.
Property values are parsed against each element kind's schema.

All links resolve after the whole text is read, in textual order, so an
element may be referenced by name before its definition.  Request pads
are created in that same order, which makes auto-numbered pad names
deterministic.

unparse() renders a graph back into canonical text: every element gets an
explicit name=, properties are sorted, and request pads always appear as
explicit pad references.  parse(unparse(g)) reproduces g exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .elements import base
from .errors import (BadProperty, DirectionError, DuplicateName, ParseError,
                     StreamError, UnknownFramework, UnknownKind, UnknownPad)
from .graph import ElementDescriptor, PipelineGraph
from .tensors import DataType, parse_any_spec, spec_to_string

_PADREF_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_\-]*)\.([A-Za-z0-9_]*)$")
_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    col: int
    offset: int
    quoted: bool = False

    def error(self, message: str, code: str = "SyntaxError") -> ParseError:
        return ParseError(message, line=self.line, column=self.col,
                          offset=self.offset, code=code)


@dataclass(frozen=True)
class ParsedPipeline:
    graph: PipelineGraph
    source_text: str
    spans: dict[str, tuple[int, int]]  # element name -> [start, end) offsets


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == "!":
            tokens.append(Token("!", line, col, i))
            i += 1
            col += 1
            continue
        start_line, start_col, start = line, col, i
        parts: list[str] = []
        quoted = False
        while i < n and not text[i].isspace() and text[i] != "!":
            if text[i] == '"':
                quoted = True
                i += 1
                col += 1
                qstart = i
                while i < n and text[i] != '"':
                    if text[i] == "\n":
                        break
                    i += 1
                    col += 1
                if i >= n or text[i] != '"':
                    raise ParseError("unterminated quote",
                                     line=start_line, column=start_col,
                                     offset=start, code="SyntaxError")
                parts.append(text[qstart:i])
                i += 1
                col += 1
            else:
                parts.append(text[i])
                i += 1
                col += 1
        tokens.append(Token("".join(parts), start_line, start_col, start,
                            quoted))
    return tokens


def _is_spec_filter(token: Token) -> bool:
    text = token.text
    slash = text.find("/")
    if slash < 1:
        return False
    eq = text.find("=")
    return eq < 0 or slash < eq


def _is_property(token: Token) -> bool:
    eq = token.text.find("=")
    if eq < 1:
        return False
    return bool(_KEY_RE.match(token.text[:eq]))


@dataclass
class _Node:
    """A chain node: a new element or a reference to a named pad."""

    token: Token
    element: str | None = None  # resolved element name
    pad: str | None = None
    is_ref: bool = False


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.graph = PipelineGraph()
        self.spans: dict[str, tuple[int, int]] = {}
        # (src node, sink node, filter spec, filter token, bang token)
        self.pending: list[tuple[_Node, _Node, Any, Token | None, Token]] = []

    def parse(self) -> ParsedPipeline:
        tokens = tokenize(self.text)
        if not tokens:
            raise ParseError("empty description", line=1, column=1, offset=0)
        self._walk(tokens)
        self._resolve_links()
        return ParsedPipeline(self.graph, self.text, dict(self.spans))

    # --- first pass: elements and chain structure ------------------------------

    def _walk(self, tokens: list[Token]):
        prev: _Node | None = None       # last node of the open chain
        bang: Token | None = None       # pending "!" awaiting its right node
        filt = None                     # spec filter collected for that link
        filt_token: Token | None = None
        need_bang_token: Token | None = None  # filter seen, "!" required next

        i = 0
        while i < len(tokens):
            token = tokens[i]
            if token.text == "!" and not token.quoted:
                if need_bang_token is not None:
                    need_bang_token = None
                    i += 1
                    continue
                if prev is None or bang is not None:
                    raise token.error("link with no source element")
                bang = token
                i += 1
                continue
            if need_bang_token is not None:
                raise need_bang_token.error(
                    "spec filter must be followed by '!'")
            if _is_spec_filter(token):
                if bang is None:
                    raise token.error("spec filter outside a link")
                if filt is not None:
                    raise token.error("second spec filter on one link")
                try:
                    filt = parse_any_spec(token.text)
                except StreamError as e:
                    raise token.error(str(e)) from None
                filt_token = token
                need_bang_token = token
                i += 1
                continue
            node, i = self._read_node(tokens, i)
            if bang is not None:
                self.pending.append((prev, node, filt, filt_token, bang))
                bang = None
                filt = None
                filt_token = None
            prev = node
        if need_bang_token is not None:
            raise need_bang_token.error("spec filter must be followed by '!'")
        if bang is not None:
            raise bang.error("dangling '!' at end of description")

    def _read_node(self, tokens: list[Token], i: int) -> tuple[_Node, int]:
        token = tokens[i]
        m = _PADREF_RE.match(token.text)
        if m and not token.quoted:
            return _Node(token, element=m.group(1), pad=m.group(2) or None,
                         is_ref=True), i + 1
        if _is_property(token):
            raise token.error("property where an element was expected")
        kind_token = token
        raw_props: dict[str, Any] = {}
        prop_tokens: dict[str, Token] = {}
        end = kind_token.offset + len(kind_token.text)
        i += 1
        while i < len(tokens) and _is_property(tokens[i]) \
                and not (tokens[i].text == "!" and not tokens[i].quoted):
            ptok = tokens[i]
            key, _, value = ptok.text.partition("=")
            if key in raw_props:
                raise ptok.error(f"property {key!r} given twice",
                                 code="PropertyTypeError")
            raw_props[key] = value
            prop_tokens[key] = ptok
            end = ptok.offset + len(ptok.text)
            i += 1
        name = raw_props.pop("name", None)
        prop_tokens.pop("name", None)
        desc = self._add_element(kind_token, name, raw_props, prop_tokens)
        self.spans[desc.name] = (kind_token.offset, end)
        return _Node(kind_token, element=desc.name), i

    def _add_element(self, kind_token: Token, name, raw_props,
                     prop_tokens) -> ElementDescriptor:
        try:
            return self.graph.add_element(kind_token.text, name, raw_props)
        except UnknownKind as e:
            raise kind_token.error(str(e), code="UnknownElement") from None
        except UnknownFramework as e:
            raise kind_token.error(str(e), code="UnknownElement") from None
        except DuplicateName as e:
            raise kind_token.error(str(e), code="DuplicateName") from None
        except BadProperty as e:
            raise self._locate_bad_prop(kind_token, raw_props, prop_tokens,
                                        str(e)) from None
        except StreamError as e:
            raise kind_token.error(str(e), code="PropertyTypeError") from None

    def _locate_bad_prop(self, kind_token: Token, raw_props, prop_tokens,
                         message: str) -> ParseError:
        """Attribute a property failure to the token that caused it."""
        try:
            kind = base.get_kind(kind_token.text)
        except StreamError:
            return kind_token.error(message, code="PropertyTypeError")
        schema = base.property_schema(kind)
        alias = {"frame": "framework", "m": "model"} \
            if kind.KIND == "tensor_filter" else {}
        for key, value in raw_props.items():
            token = prop_tokens.get(key, kind_token)
            pspec = schema.get(alias.get(key, key))
            if pspec is None:
                return token.error(f"{kind.KIND} has no property {key!r}",
                                   code="PropertyTypeError")
            try:
                pspec.coerce(value)
            except StreamError as e:
                return token.error(str(e), code="PropertyTypeError")
        return kind_token.error(message, code="PropertyTypeError")

    # --- second pass: links -----------------------------------------------------

    def _end_ref(self, node: _Node):
        if node.is_ref and node.element not in self.graph.elements:
            raise node.token.error(f"no element named {node.element!r}",
                                   code="UnknownPad")
        return (node.element, node.pad)

    def _resolve_links(self):
        for src, sink, filt, filt_token, bang in self.pending:
            src_end = self._end_ref(src)
            sink_end = self._end_ref(sink)
            try:
                self.graph.link(src_end, sink_end, filt)
            except (UnknownPad, DirectionError) as e:
                raise self._blame(str(e), src, sink, bang,
                                  code="UnknownPad") from None
            except StreamError as e:
                raise self._blame(str(e), src, sink, bang) from None

    def _blame(self, message: str, src: _Node, sink: _Node, bang: Token,
               code: str = "SyntaxError") -> ParseError:
        for node in (sink, src):
            if node.element and node.element in message:
                return node.token.error(message, code=code)
        return bang.error(message, code=code)


def parse(text: str) -> ParsedPipeline:
    """Parse a description into a graph plus source spans."""
    return _Parser(text).parse()


def parse_description(text: str) -> PipelineGraph:
    return parse(text).graph


# --- unparse --------------------------------------------------------------------

def _needs_quotes(text: str) -> bool:
    return text == "" or "!" in text or '"' in text \
        or any(c.isspace() for c in text)


def _value_text(pspec: base.PropertySpec | None, value: Any) -> str:
    if isinstance(value, bool):
        text = "true" if value else "false"
    elif isinstance(value, DataType):
        text = value.value
    elif isinstance(value, Fraction):
        text = str(value)
    elif hasattr(value, "to_string"):
        text = value.to_string()
    elif pspec is not None and pspec.kind == "dim":
        text = ":".join(str(v) for v in value)
    elif pspec is not None and pspec.kind in ("intlist", "strlist"):
        text = ",".join(str(v) for v in value)
    else:
        text = str(value)
    return f'"{text}"' if _needs_quotes(text) else text


def _element_text(desc: ElementDescriptor) -> str:
    schema = base.property_schema(desc.kind)
    parts = [desc.kind.KIND, f"name={_value_text(None, desc.name)}"]
    for key in sorted(desc.props):
        if key.startswith("_"):
            continue
        parts.append(f"{key}={_value_text(schema.get(key), desc.props[key])}")
    return " ".join(parts)


def _pad_static(desc: ElementDescriptor, pad: str) -> bool:
    return desc.pads[pad].presence == "static"


def unparse(graph: PipelineGraph) -> str:
    """Render a graph as canonical description text."""
    emitted: set[str] = set()
    used: set[int] = set()  # indices into graph.links
    chains: list[str] = []

    def extend(tokens: list[str], current: str):
        while True:
            pick = None
            for idx, link in enumerate(graph.links):
                if idx in used or link.src[0] != current:
                    continue
                if not _pad_static(graph.elements[current], link.src[1]):
                    continue
                pick = (idx, link)
                break
            if pick is None:
                return
            idx, link = pick
            used.add(idx)
            tokens.append("!")
            if link.filter is not None:
                tokens.append(spec_to_string(link.filter))
                tokens.append("!")
            target, pad = link.sink
            target_desc = graph.elements[target]
            if target in emitted or not _pad_static(target_desc, pad):
                tokens.append(f"{target}.{pad}")
                return
            tokens.append(_element_text(target_desc))
            emitted.add(target)
            current = target

    for name, desc in graph.elements.items():
        if name in emitted:
            continue
        tokens = [_element_text(desc)]
        emitted.add(name)
        extend(tokens, name)
        chains.append(" ".join(tokens))

    for idx, link in enumerate(graph.links):
        if idx in used:
            continue
        used.add(idx)
        tokens = [f"{link.src[0]}.{link.src[1]}", "!"]
        if link.filter is not None:
            tokens.append(spec_to_string(link.filter))
            tokens.append("!")
        target, pad = link.sink
        target_desc = graph.elements[target]
        if target in emitted or not _pad_static(target_desc, pad):
            tokens.append(f"{target}.{pad}")
        else:
            tokens.append(_element_text(target_desc))
            emitted.add(target)
            extend(tokens, target)
        chains.append(" ".join(tokens))

    return " ".join(chains)
