"""Self-describing value model and the canonical XML envelope.

Encoding is hand-written so the byte output is canonical: no whitespace
between elements, a fixed attribute order, ids assigned in pre-order from 1
across a whole document.  A Struct or List node met a second time during
encoding (shared or cyclic graph) is written as ``<backref target="N"/>``;
decoding re-links those to the very same node.

Decoding uses :mod:`xml.etree.ElementTree`.
"""

from __future__ import annotations

import functools
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Mapping, Union

from .errors import DanglingBackref, Malformed
from .registry import GUID_RE, MethodSignature

PRIM_KINDS = ("i32", "i64", "f64", "bool")
DIST_FAULT_CODES = ("SERVICE_NOT_FOUND", "METHOD_NOT_FOUND", "BAD_ARGUMENTS", "TRANSPORT", "INTERNAL")
MAX_EMBEDDED_METHODS = 16

_INT_RE = re.compile(r"^-?[0-9]+$")
_I32 = (-(2**31), 2**31 - 1)
_I64 = (-(2**63), 2**63 - 1)
# XML 1.0 Char production; anything else cannot be carried by the document
_NON_XML_CHAR = re.compile("[^\t\n\r\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")


# -- values -----------------------------------------------------------------

@dataclass(frozen=True)
class Null:
    def __repr__(self):
        return "NULL"


NULL = Null()


@dataclass(frozen=True)
class Prim:
    kind: str
    lexical: str

    def __post_init__(self):
        if self.kind not in PRIM_KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if not _valid_lexical(self.kind, self.lexical):
            raise ValueError(f"bad {self.kind} lexical form {self.lexical!r}")

    @classmethod
    def i32(cls, n: int) -> "Prim":
        return cls("i32", str(int(n)))

    @classmethod
    def i64(cls, n: int) -> "Prim":
        return cls("i64", str(int(n)))

    @classmethod
    def f64(cls, x: float) -> "Prim":
        return cls.trusted("f64", repr(float(x)))

    @classmethod
    def bool(cls, b: bool) -> "Prim":
        return _TRUE if b else _FALSE

    @classmethod
    def trusted(cls, kind: str, lexical: str) -> "Prim":
        """Skip validation; for lexical forms produced by this module's own rules."""
        p = object.__new__(cls)
        object.__setattr__(p, "kind", kind)
        object.__setattr__(p, "lexical", lexical)
        return p

    def to_python(self):
        if self.kind == "bool":
            return self.lexical == "true"
        if self.kind == "f64":
            return float(self.lexical)
        return int(self.lexical)


_TRUE = Prim.trusted("bool", "true")
_FALSE = Prim.trusted("bool", "false")


def _valid_lexical(kind: str, lex: str) -> bool:
    if not isinstance(lex, str):
        return False
    if kind == "bool":
        return lex in ("true", "false")
    if kind == "f64":
        try:
            return repr(float(lex)) == lex
        except ValueError:
            return False
    if not _INT_RE.match(lex) or lex.lstrip("-").startswith("0") and lex.lstrip("-") != "0" or lex == "-0":
        return False
    lo, hi = _I32 if kind == "i32" else _I64
    return lo <= int(lex) <= hi


@dataclass(frozen=True)
class Text:
    value: str

    def __post_init__(self):
        if not isinstance(self.value, str):
            raise TypeError("Text holds str")
        if _NON_XML_CHAR.search(self.value):
            raise ValueError("text contains characters XML 1.0 cannot carry")


@dataclass(eq=False)
class Struct:
    type_name: str
    fields: list = field(default_factory=list)
    id: int = 0

    def get(self, name: str):
        for fname, v in self.fields:
            if fname == name:
                return v
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, Struct):
            return NotImplemented
        return graph_equal(self, other)

    __hash__ = None

    def __repr__(self):
        return f"Struct({self.type_name!r}, id={self.id}, fields={[n for n, _ in self.fields]})"


@dataclass(eq=False)
class ListValue:
    elem_type: str
    items: list = field(default_factory=list)
    id: int = 0

    def __eq__(self, other):
        if not isinstance(other, ListValue):
            return NotImplemented
        return graph_equal(self, other)

    __hash__ = None

    def __repr__(self):
        return f"ListValue({self.elem_type!r}, id={self.id}, n={len(self.items)})"


@dataclass(frozen=True)
class CachedField:
    name: str
    getter: MethodSignature
    setter: MethodSignature | None = None


@dataclass(frozen=True, eq=False)
class RemoteObjectRef:
    """Serializable remote reference.

    ``methods`` is the remote type's signature list, or ``None`` when it was
    too long to embed and must be fetched from the exposing node.
    """

    host: str
    port: int
    guid: str
    remote_type: str
    real_class: str
    methods: tuple[MethodSignature, ...] | None = ()
    cached_fields: tuple[CachedField, ...] = ()
    cached_methods: tuple[MethodSignature, ...] = ()
    cached_values: Mapping[str, "Value"] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port!r}")
        if not GUID_RE.match(self.guid):
            raise ValueError(f"bad guid {self.guid!r}")
        if self.methods is not None:
            object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "cached_fields", tuple(self.cached_fields))
        object.__setattr__(self, "cached_methods", tuple(self.cached_methods))
        names = [c.name for c in self.cached_fields]
        if set(names) != set(self.cached_values) or len(names) != len(set(names)):
            raise ValueError("cached_values keys must match cached_fields exactly")

    def same_target(self, other: "RemoteObjectRef") -> bool:
        """Equal in everything but the cached values."""
        return (
            self.host == other.host and self.port == other.port and self.guid == other.guid
            and self.remote_type == other.remote_type and self.real_class == other.real_class
            and self.methods == other.methods and self.cached_fields == other.cached_fields
            and self.cached_methods == other.cached_methods
        )

    def __eq__(self, other):
        if not isinstance(other, RemoteObjectRef):
            return NotImplemented
        return graph_equal(Ref(self), Ref(other))

    __hash__ = None


@dataclass(frozen=True)
class Ref:
    ior: RemoteObjectRef


@dataclass(frozen=True)
class BackRef:
    target: int


Value = Union[Null, Prim, Text, Struct, ListValue, Ref, BackRef]


def graph_equal(a, b) -> bool:
    """Structural equality that also requires the same aliasing pattern.

    Containers are numbered in pre-order as both graphs are walked in
    lockstep; a revisited node (or an explicit BackRef) must point at the
    same number on both sides.  The walk uses an explicit stack, so long
    chains do not exhaust the interpreter's recursion limit.
    """
    na: dict[int, int] = {}
    nb: dict[int, int] = {}
    counter = 0

    def seen(x, table):
        if type(x) is BackRef:
            return x.target
        if type(x) is Struct or type(x) is ListValue:
            return table.get(id(x))
        return None

    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        kx, ky = seen(x, na), seen(y, nb)
        if kx is not None or ky is not None:
            if kx != ky:
                return False
            continue
        if type(x) is not type(y):
            return False
        if type(x) is Struct:
            if x.type_name != y.type_name or len(x.fields) != len(y.fields):
                return False
            counter += 1
            na[id(x)] = nb[id(y)] = counter
            for (fx, vx), (fy, vy) in zip(reversed(x.fields), reversed(y.fields)):
                if fx != fy:
                    return False
                stack.append((vx, vy))
        elif type(x) is ListValue:
            if x.elem_type != y.elem_type or len(x.items) != len(y.items):
                return False
            counter += 1
            na[id(x)] = nb[id(y)] = counter
            stack.extend(zip(reversed(x.items), reversed(y.items)))
        elif type(x) is Ref:
            ix, iy = x.ior, y.ior
            if not ix.same_target(iy):
                return False
            # cached values join the same walk: they may alias enclosing nodes
            stack.extend((ix.cached_values[cf.name], iy.cached_values[cf.name]) for cf in reversed(ix.cached_fields))
        elif x != y:
            return False
    return True


# -- envelopes --------------------------------------------------------------

@dataclass(frozen=True)
class CallEnvelope:
    service: str
    method: str
    signature: tuple[str, ...]
    request_id: str
    args: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "signature", tuple(self.signature))
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) != len(self.signature):
            raise ValueError("args length must equal signature length")


@dataclass(frozen=True)
class Result:
    value: Value = NULL


@dataclass(frozen=True)
class AppFault:
    type_name: str
    message: str = ""


@dataclass(frozen=True)
class DistFault:
    code: str
    message: str = ""

    def __post_init__(self):
        if self.code not in DIST_FAULT_CODES:
            raise ValueError(f"unknown fault code {self.code!r}")


@dataclass(frozen=True)
class ReplyEnvelope:
    request_id: str
    body: Union[Result, AppFault, DistFault]


# -- encoding ---------------------------------------------------------------

def escape_text(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace("\r", "&#13;")


@functools.lru_cache(maxsize=4096)
def escape_attr(s: str) -> str:
    if _NON_XML_CHAR.search(s):
        raise ValueError("attribute contains characters XML 1.0 cannot carry")
    return (
        s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
        .replace("\t", "&#9;").replace("\n", "&#10;").replace("\r", "&#13;")
    )


class _Encoder:
    """One document's worth of id state."""

    def __init__(self):
        self.out: list[str] = []
        self.ids: dict[int, int] = {}
        self.next_id = 1

    def value(self, root) -> None:
        # plain str items on the stack are markup ready to emit
        out = self.out
        stack = [root]
        while stack:
            v = stack.pop()
            cls = type(v)
            if cls is str:
                out.append(v)
            elif cls is Prim:
                out.append(f'<prim type="{v.kind}">{v.lexical}</prim>')
            elif cls is Text:
                out.append(f"<text>{escape_text(v.value)}</text>")
            elif cls is Null:
                out.append("<null/>")
            elif cls is Struct or cls is ListValue:
                prior = self.ids.get(id(v))
                if prior is not None:
                    out.append(f'<backref target="{prior}"/>')
                    continue
                n = self.next_id
                self.next_id += 1
                self.ids[id(v)] = n
                if cls is Struct:
                    out.append(f'<struct class="{escape_attr(v.type_name)}" id="{n}">')
                    stack.append("</struct>")
                    for fname, fv in reversed(v.fields):
                        stack += ("</field>", fv, f'<field name="{escape_attr(fname)}">')
                else:
                    out.append(f'<list elem-class="{escape_attr(v.elem_type)}" id="{n}">')
                    stack.append("</list>")
                    stack.extend(reversed(v.items))
            elif cls is Ref:
                out.append("<ref>")
                stack.append("</ref>")
                stack.extend(reversed(self._ior_parts(v.ior)))
            elif cls is BackRef:
                if not 1 <= v.target < self.next_id:
                    raise ValueError(f"backref to unassigned id {v.target}")
                out.append(f'<backref target="{v.target}"/>')
            else:
                raise TypeError(f"not a wire value: {v!r}")

    @staticmethod
    def _ior_parts(ior: RemoteObjectRef) -> list:
        embed = ior.methods is not None and len(ior.methods) <= MAX_EMBEDDED_METHODS
        lazy = "" if embed else ' lazy-methods="true"'
        parts: list = [
            f'<ior host="{escape_attr(ior.host)}" port="{ior.port}" guid="{ior.guid}" '
            f'remote-type="{escape_attr(ior.remote_type)}" real-class="{escape_attr(ior.real_class)}"{lazy}>'
        ]
        if embed:
            parts += [_method_el("method", m) for m in ior.methods]
        for cf in ior.cached_fields:
            setter = f' setter="{escape_attr(cf.setter.full)}"' if cf.setter else ""
            parts += (
                f'<cached-field name="{escape_attr(cf.name)}" getter="{escape_attr(cf.getter.full)}"{setter}>',
                ior.cached_values[cf.name],
                "</cached-field>",
            )
        parts += [_method_el("cached-method", m) for m in ior.cached_methods]
        parts.append("</ior>")
        return parts

    def bytes(self) -> bytes:
        return "".join(self.out).encode("utf-8")


def _method_el(tag: str, m: MethodSignature) -> str:
    return f'<{tag} name="{m.name}" sig="{escape_attr(m.param_text)}" returns="{escape_attr(m.returns)}"/>'


def encode_value(v: Value) -> bytes:
    enc = _Encoder()
    enc.value(v)
    return enc.bytes()


def encode_ior(ior: RemoteObjectRef) -> bytes:
    """The ``<ref>`` fragment for one reference."""
    return encode_value(Ref(ior))


def encode_call(c: CallEnvelope) -> bytes:
    enc = _Encoder()
    out = enc.out
    out.append('<rrt-envelope version="1">')
    head = (
        f'<call service="{escape_attr(c.service)}" method="{escape_attr(c.method)}" '
        f'sig="{escape_attr(",".join(c.signature))}" request-id="{escape_attr(c.request_id)}"'
    )
    if not c.args:
        out.append(head + "/>")
    else:
        out.append(head + ">")
        for i, a in enumerate(c.args):
            out.append(f'<arg index="{i}">')
            enc.value(a)
            out.append("</arg>")
        out.append("</call>")
    out.append("</rrt-envelope>")
    return enc.bytes()


def encode_reply(r: ReplyEnvelope) -> bytes:
    enc = _Encoder()
    out = enc.out
    rid = escape_attr(r.request_id)
    out.append('<rrt-envelope version="1">')
    body = r.body
    if isinstance(body, Result):
        out.append(f'<result request-id="{rid}">')
        enc.value(body.value)
        out.append("</result>")
    elif isinstance(body, AppFault):
        out.append(
            f'<app-fault class="{escape_attr(body.type_name)}" request-id="{rid}">{escape_text(body.message)}</app-fault>'
        )
    elif isinstance(body, DistFault):
        out.append(
            f'<dist-fault code="{body.code}" request-id="{rid}">{escape_text(body.message)}</dist-fault>'
        )
    else:
        raise TypeError(f"bad reply body {body!r}")
    out.append("</rrt-envelope>")
    return enc.bytes()


# -- decoding ---------------------------------------------------------------

def _parse(b: bytes) -> ET.Element:
    try:
        return ET.fromstring(b)
    except ET.ParseError as e:
        raise Malformed(f"not well-formed XML: {e}") from None


def _attr(el: ET.Element, name: str) -> str:
    v = el.get(name)
    if v is None:
        raise Malformed(f"<{el.tag}> lacks attribute {name!r}")
    return v


def _int_attr(el: ET.Element, name: str) -> int:
    v = _attr(el, name)
    if not _INT_RE.match(v):
        raise Malformed(f"<{el.tag}> {name}={v!r} is not an integer")
    return int(v)


def _sig(el: ET.Element) -> MethodSignature:
    sig = _attr(el, "sig")
    try:
        return MethodSignature(_attr(el, "name"), tuple(sig.split(",")) if sig else (), _attr(el, "returns"))
    except ValueError as e:
        raise Malformed(str(e)) from None


def _sig_text(text: str) -> MethodSignature:
    try:
        return MethodSignature.parse(text)
    except ValueError as e:
        raise Malformed(str(e)) from None


class _Decoder:
    def __init__(self):
        self.nodes: dict[int, Struct | ListValue] = {}

    def _register(self, el: ET.Element, node) -> None:
        n = _int_attr(el, "id")
        if n < 1 or n in self.nodes:
            raise Malformed(f"duplicate or invalid id {n}")
        node.id = n
        self.nodes[n] = node

    def value(self, root: ET.Element):
        # pending items are (element, put, key); children are pushed in reverse
        # so ids are still assigned in document order
        out = [None]
        stack = [(root, out.__setitem__, 0)]
        while stack:
            el, put, key = stack.pop()
            put(key, self._one(el, stack))
        return out[0]

    def _one(self, el: ET.Element, stack: list):
        tag = el.tag
        try:
            if tag == "prim":
                if len(el):
                    raise Malformed("<prim> has children")
                return Prim(_attr(el, "type"), el.text or "")
            if tag == "text":
                if len(el):
                    raise Malformed("<text> has children")
                return Text(el.text or "")
        except ValueError as e:
            raise Malformed(str(e)) from None
        if tag == "null":
            if len(el) or (el.text or "").strip():
                raise Malformed("<null> must be empty")
            return NULL
        if tag == "struct":
            node = Struct(_attr(el, "class"))
            self._register(el, node)
            for child in el:
                if child.tag != "field" or len(child) != 1:
                    raise Malformed("<struct> children must be <field> with one value")
            node.fields = [(_attr(child, "name"), NULL) for child in el]
            put = functools.partial(_set_field, node.fields)
            stack.extend((child[0], put, i) for i, child in reversed(list(enumerate(el))))
            return node
        if tag == "list":
            node = ListValue(_attr(el, "elem-class"))
            self._register(el, node)
            node.items = [NULL] * len(el)
            stack.extend((child, node.items.__setitem__, i) for i, child in reversed(list(enumerate(el))))
            return node
        if tag == "backref":
            target = _int_attr(el, "target")
            node = self.nodes.get(target)
            if node is None:
                raise DanglingBackref(f"backref to unseen id {target}")
            return node
        if tag == "ref":
            if len(el) != 1 or el[0].tag != "ior":
                raise Malformed("<ref> must hold exactly one <ior>")
            return Ref(self.ior(el[0], stack))
        raise Malformed(f"unknown element <{tag}>")

    def ior(self, el: ET.Element, stack: list) -> RemoteObjectRef:
        """Build the reference; its cached values are queued on ``stack``."""
        lazy = el.get("lazy-methods") == "true"
        methods: list[MethodSignature] = []
        cached_fields: list[CachedField] = []
        cached_methods: list[MethodSignature] = []
        values = {}
        pending: list = []
        for child in el:
            if child.tag == "method":
                methods.append(_sig(child))
            elif child.tag == "cached-field":
                if len(child) != 1:
                    raise Malformed("<cached-field> must hold one value")
                setter = child.get("setter")
                cf = CachedField(
                    _attr(child, "name"),
                    _sig_text(_attr(child, "getter")),
                    _sig_text(setter) if setter else None,
                )
                cached_fields.append(cf)
                values[cf.name] = NULL  # placeholder until decoded
                pending.append((child[0], cf.name))
            elif child.tag == "cached-method":
                cached_methods.append(_sig(child))
            else:
                raise Malformed(f"unknown <ior> child <{child.tag}>")
        try:
            ior = RemoteObjectRef(
                host=_attr(el, "host"),
                port=_int_attr(el, "port"),
                guid=_attr(el, "guid"),
                remote_type=_attr(el, "remote-type"),
                real_class=_attr(el, "real-class"),
                methods=None if lazy else tuple(methods),
                cached_fields=tuple(cached_fields),
                cached_methods=tuple(cached_methods),
                cached_values=values,
            )
        except ValueError as e:
            raise Malformed(str(e)) from None
        stack.extend((vel, values.__setitem__, name) for vel, name in reversed(pending))
        return ior


def _set_field(fields: list, i: int, v) -> None:
    fields[i] = (fields[i][0], v)


def decode_value(b: bytes) -> Value:
    return _Decoder().value(_parse(b))


def decode_ior(b: bytes) -> RemoteObjectRef:
    v = decode_value(b)
    if not isinstance(v, Ref):
        raise Malformed("expected a <ref> fragment")
    return v.ior


def _envelope(b: bytes) -> ET.Element:
    root = _parse(b)
    if root.tag != "rrt-envelope" or root.get("version") != "1" or len(root) != 1:
        raise Malformed("expected <rrt-envelope version=\"1\"> with one child")
    return root[0]


def decode_call(b: bytes) -> CallEnvelope:
    el = _envelope(b)
    if el.tag != "call":
        raise Malformed(f"expected <call>, got <{el.tag}>")
    sig = _attr(el, "sig")
    signature = tuple(sig.split(",")) if sig else ()
    dec = _Decoder()
    args = []
    for i, child in enumerate(el):
        if child.tag != "arg" or _int_attr(child, "index") != i or len(child) != 1:
            raise Malformed("<call> children must be consecutive <arg> elements with one value")
        args.append(dec.value(child[0]))
    try:
        return CallEnvelope(_attr(el, "service"), _attr(el, "method"), signature, _attr(el, "request-id"), args)
    except ValueError as e:
        raise Malformed(str(e)) from None


def decode_reply(b: bytes) -> ReplyEnvelope:
    el = _envelope(b)
    rid = _attr(el, "request-id")
    if el.tag == "result":
        if len(el) != 1:
            raise Malformed("<result> must hold one value")
        return ReplyEnvelope(rid, Result(_Decoder().value(el[0])))
    if el.tag in ("app-fault", "dist-fault") and len(el):
        raise Malformed(f"<{el.tag}> holds text only")
    if el.tag == "app-fault":
        return ReplyEnvelope(rid, AppFault(_attr(el, "class"), el.text or ""))
    if el.tag == "dist-fault":
        try:
            return ReplyEnvelope(rid, DistFault(_attr(el, "code"), el.text or ""))
        except ValueError as e:
            raise Malformed(str(e)) from None
    raise Malformed(f"unknown reply element <{el.tag}>")
