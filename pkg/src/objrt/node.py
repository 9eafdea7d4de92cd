"""The runtime node: one per address space.

A node owns a service registry, a transmission policy manager and a proxy
table, serves calls over HTTP, and makes calls to other nodes.  Calls are
POSTed to ``http://host:port/<serviceName|GUID>`` as wire envelopes; a GET
on the same URL returns a browser page, or the service's reference
fragment when the client asks for ``application/xml``.
"""

from __future__ import annotations

import enum
import functools
import html
import http.client
import itertools
import logging
import os
import secrets
import socket
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import quote, unquote, urlsplit

from . import wire
from .errors import (
    DistributionError, MarshalError, NotFound, ObjrtError, RemoteApplicationError, Unadaptable,
    UnknownType, WireError,
)
from .policy import BY_REFERENCE, BY_VALUE, UNBOUNDED, TransmissionPolicyManager
from .registry import (
    ClassSpec, MethodSignature, Registry, RemoteType, ServiceAdaptor, ServiceRecord, TypeCatalog, catalog,
)
from .remoteref import ProxyHandle, ProxyTable, make_ior
from .wire import (
    NULL, AppFault, CallEnvelope, DistFault, ListValue, Prim, Ref, RemoteObjectRef, ReplyEnvelope, Result,
    Struct, Text,
)

log = logging.getLogger(__name__)

POLICY_BYPASS_ENV = "OBJRT_POLICY_BYPASS"
_BUILD = object()  # stack marker for deferred construction
XML = "application/xml"


class FailureMode(enum.Enum):
    SUPPRESS_WITH_DEFAULTS = "suppress"
    PROPAGATE = "propagate"


@dataclass
class NodeConfig:
    host: str = "127.0.0.1"
    port: int = 0  # 0 binds an ephemeral port
    failure_mode: FailureMode = FailureMode.PROPAGATE
    browse_details: bool = False
    policy_file: str | None = None
    timeout: float = 30.0

    def __post_init__(self):
        if not isinstance(self.port, int) or not 0 <= self.port <= 65535:
            raise ValueError(f"bad port {self.port!r}")
        if isinstance(self.failure_mode, str):
            self.failure_mode = FailureMode(self.failure_mode)


class Direction(enum.Enum):
    ARGUMENT = "argument"
    RETURN = "return"
    NESTED = "nested"


@dataclass
class MarshalContext:
    direction: Direction
    owner: str = ""
    method: MethodSignature | None = None
    index: int = 0
    remaining_depth: int | None = UNBOUNDED
    seen: dict = field(default_factory=dict)


def default_for(type_name: str):
    """Value handed back for a failed call when failures are suppressed."""
    if type_name in ("i32", "i64"):
        return 0
    if type_name == "f64":
        return 0.0
    if type_name == "bool":
        return False
    return None


def parse_target(target) -> tuple[str, int]:
    if isinstance(target, str):
        host, _, port = target.rpartition(":")
        return host, int(port)
    host, port = target
    return host, int(port)


class _NoDelayConnection(http.client.HTTPConnection):
    def connect(self):
        super().connect()
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class HttpTransport:
    """HTTP/1.1 client keeping one persistent connection per thread and peer.

    ``calls`` counts every request sent; ``tap``, when set, sees
    ``(method, url, body)`` for each one.
    """

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout
        self.calls = 0
        self.tap: Callable[[str, str, bytes], None] | None = None
        self._local = threading.local()

    def _conn(self, host: str, port: int) -> http.client.HTTPConnection:
        conns = getattr(self._local, "conns", None)
        if conns is None:
            conns = self._local.conns = {}
        conn = conns.get((host, port))
        if conn is None:
            conn = conns[(host, port)] = _NoDelayConnection(host, port, timeout=self.timeout)
        return conn

    def _drop(self, host: str, port: int) -> None:
        conn = self._local.conns.pop((host, port), None)
        if conn is not None:
            conn.close()

    def request(self, method: str, host: str, port: int, path: str, body: bytes | None = None,
                accept: str = XML) -> tuple[int, bytes]:
        self.calls += 1
        if self.tap is not None:
            self.tap(method, f"http://{host}:{port}{path}", body or b"")
        headers = {"Accept": accept}
        if body is not None:
            headers["Content-Type"] = XML
        for attempt in (0, 1):
            conn = self._conn(host, port)
            fresh = conn.sock is None
            try:
                conn.request(method, path, body=body, headers=headers)
            except OSError as e:
                self._drop(host, port)
                if fresh or attempt:
                    raise DistributionError("TRANSPORT", str(e)) from None
                continue  # stale keep-alive socket; the request never left
            try:
                resp = conn.getresponse()
                data = resp.read()
            except (OSError, http.client.HTTPException) as e:
                self._drop(host, port)
                if isinstance(e, http.client.RemoteDisconnected) and not fresh and not attempt:
                    continue  # server closed an idle connection before reading
                raise DistributionError("TRANSPORT", str(e) or type(e).__name__) from None
            if resp.will_close:
                self._drop(host, port)
            return resp.status, data
        raise AssertionError("unreachable")

    def close(self) -> None:
        for conn in getattr(self._local, "conns", {}).values():
            conn.close()
        self._local.conns = {}


class Node:
    """A runtime node.

    Server side: ``expose``, ``associate_class_with_remote_type``, the
    ``policy`` manager.  Client side: ``get_remote_reference`` and
    ``remote_call``.  ``policy_bypass`` (initialised from the
    ``OBJRT_POLICY_BYPASS`` environment variable) skips policy evaluation
    and passes every object by reference.
    """

    def __init__(self, config: NodeConfig | None = None, types: TypeCatalog = catalog):
        self.config = config or NodeConfig()
        self.types = types
        self.registry = Registry()
        self.policy = TransmissionPolicyManager()
        self.proxies = ProxyTable()
        self.transport = HttpTransport(self.config.timeout)
        self.policy_bypass = os.environ.get(POLICY_BYPASS_ENV, "") not in ("", "0")
        self._local_impls: dict[tuple[str, MethodSignature], Callable] = {}
        self._rid = itertools.count(1)
        self._rid_prefix = secrets.token_hex(4)
        self._server: _Server | None = None
        self._thread: threading.Thread | None = None
        if self.config.policy_file:
            with open(self.config.policy_file, "rb") as f:
                self.policy.load_rules(f.read())

    # -- lifecycle ----------------------------------------------------------

    @property
    def address(self) -> tuple[str, int]:
        return self.config.host, self.config.port

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.config.port}"

    def start(self) -> "Node":
        server = _Server((self.config.host, self.config.port), _Handler)
        server.node = self
        self.config.port = server.server_address[1]
        self._server = server
        self._thread = threading.Thread(target=server.serve_forever, args=(0.05,),
                                        name=f"node-{self.config.port}", daemon=True)
        self._thread.start()
        log.info("node listening on %s", self.url)
        return self

    def bind(self) -> "Node":
        """Reserve the address without serving; useful for a pure client."""
        if not self.config.port:
            with socket.socket() as s:
                s.bind((self.config.host, 0))
                self.config.port = s.getsockname()[1]
        return self

    def stop(self) -> None:
        server = self._server
        if server is None:
            return
        server.shutdown()
        server.close_connections()
        server.server_close()
        self._server = None
        self.transport.close()

    def serve_forever(self) -> None:
        self.start()
        self._thread.join()

    def __enter__(self):
        if self._server is None:
            self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    # -- server-side API ----------------------------------------------------

    def adaptor_for(self, obj) -> ServiceAdaptor:
        if isinstance(obj, ServiceAdaptor):
            return obj
        spec = self.types.spec_for(obj)
        if spec is None:
            raise Unadaptable(f"no class spec registered for {type(obj).__name__}")
        return spec.adaptor(obj)

    def expose(self, obj, remote_type: RemoteType | None, name: str) -> ServiceRecord:
        record = self.registry.expose(self.adaptor_for(obj), remote_type, name)
        log.info("exposed %s as %s (%s)", record.adaptor.real_class, name, record.remote_type.name)
        return record

    def associate_class_with_remote_type(self, cls, remote_type: RemoteType) -> None:
        self.registry.associate_class_with_remote_type(self.types.class_name(cls), remote_type)

    def auto_expose(self, obj) -> ServiceRecord:
        if isinstance(obj, ServiceAdaptor):
            return self.registry.auto_expose(obj)
        spec = self.types.spec_for(obj)
        if spec is None:
            raise Unadaptable(f"no class spec registered for {type(obj).__name__}")
        return self.registry.auto_expose(spec.adaptor(obj), spec.remote_type())

    def register_local_impl(self, cls, method, fn: Callable) -> None:
        """Client-side body for a cached method; called as ``fn(proxy, *args)``."""
        self._local_impls[(self.types.class_name(cls), MethodSignature.parse(method))] = fn

    def local_impl(self, class_name: str, sig: MethodSignature) -> Callable | None:
        return self._local_impls.get((class_name, sig))

    def make_ior(self, record: ServiceRecord, seen: dict | None = None) -> RemoteObjectRef:
        seen = {} if seen is None else seen
        return make_ior(record, self.policy, self.config.host, self.config.port,
                        lambda v: self._nested_snapshot(v, seen))

    def _nested_snapshot(self, value, seen: dict):
        ctx = MarshalContext(Direction.NESTED, seen=seen)
        return self._marshal(value, ctx, True, UNBOUNDED)

    def local_target(self, ior: RemoteObjectRef):
        """The exposed object itself if ``ior`` points into this node, else None."""
        if (ior.host, ior.port) != self.address:
            return None
        try:
            return self.registry.lookup(ior.guid).adaptor.underlying
        except NotFound:
            return None

    # -- marshalling --------------------------------------------------------

    def marshal(self, obj, ctx: MarshalContext):
        return self._marshal(obj, ctx, ctx.direction is Direction.NESTED, ctx.remaining_depth)

    def marshal_argument(self, obj, owner: str, method: MethodSignature, index: int):
        return self.marshal(obj, MarshalContext(Direction.ARGUMENT, owner, method, index))

    def marshal_return(self, obj, owner: str, method: MethodSignature):
        return self.marshal(obj, MarshalContext(Direction.RETURN, owner, method))

    def _marshal(self, root, ctx: MarshalContext, nested: bool, budget):
        """``budget`` is the remaining by-value depth for structs met here.

        Containers are filled from an explicit stack in pre-order, the same
        order a recursive walk would take, so deep chains are fine.
        """
        out = [None]
        stack = [(root, nested, budget, out.__setitem__, 0)]
        while stack:
            obj, nested, budget, put, key = stack.pop()
            put(key, self._marshal_one(obj, ctx, nested, budget, stack))
        return out[0]

    def _marshal_one(self, obj, ctx: MarshalContext, nested: bool, budget, stack: list):
        cls = type(obj)
        if obj is None:
            return NULL
        if cls is bool:
            return Prim.bool(obj)
        if cls is int:
            if -(2**63) <= obj < 2**63:
                return Prim.trusted("i32" if -(2**31) <= obj < 2**31 else "i64", str(obj))
            raise Unadaptable(f"integer {obj} exceeds 64 bits")
        if cls is float:
            return Prim.f64(obj)
        if cls is str:
            return Text(obj)
        seen = ctx.seen
        prior = seen.get(id(obj))
        if prior is not None:
            return prior[1]
        if cls is ProxyHandle:
            ref = Ref(obj.current_ior(lambda v: self._nested_snapshot(v, seen)))
            seen[id(obj)] = (obj, ref)
            return ref
        if cls is list or cls is tuple:
            lv = ListValue(_elem_type(obj, self.types))
            seen[id(obj)] = (obj, lv)
            lv.items = [NULL] * len(obj)
            put = lv.items.__setitem__
            stack.extend((obj[i], nested, budget, put, i) for i in range(len(obj) - 1, -1, -1))
            return lv
        spec = self.types.spec_for(obj)
        if spec is None:
            raise Unadaptable(f"cannot marshal {cls.__name__}: no class spec registered")
        if self.policy_bypass:
            mechanism, depth = BY_REFERENCE, UNBOUNDED
        else:
            if nested:
                decision = self.policy.resolve_nested(spec.name)
            elif ctx.direction is Direction.RETURN:
                decision = self.policy.resolve_return(ctx.owner, ctx.method, spec.name)
            else:
                decision = self.policy.resolve_argument(ctx.owner, ctx.method, ctx.index, spec.name)
            mechanism = decision.mechanism
            depth = decision.remaining_depth if not nested else budget
            if nested and mechanism is BY_VALUE and budget == 0:
                mechanism = BY_REFERENCE
        if mechanism is BY_REFERENCE:
            record = self.registry.auto_expose(spec.adaptor(obj), spec.remote_type())
            ref = Ref(self.make_ior(record, seen))
            seen[id(obj)] = (obj, ref)
            return ref
        child_budget = depth if not nested or depth is None else depth - 1
        names = spec.value_fields(obj)
        st = Struct(spec.name, [(f, NULL) for f in names])
        seen[id(obj)] = (obj, st)
        put = functools.partial(wire._set_field, st.fields)
        stack.extend((getattr(obj, names[i]), True, child_budget, put, i) for i in range(len(names) - 1, -1, -1))
        return st

    def unmarshal(self, value, memo: dict | None = None):
        return self._unmarshal(value, {} if memo is None else memo)

    def _unmarshal(self, root, memo: dict):
        # items are (value, put, key); _BUILD items construct factory-made
        # objects once all their fields are decoded
        out = [None]
        stack: list = [(root, out.__setitem__, 0)]
        while stack:
            item = stack.pop()
            if item[0] is _BUILD:
                _, spec, v, kwargs, put, key = item
                obj = spec.factory(**kwargs)
                memo[id(v)] = (v, obj)
                put(key, obj)
                continue
            v, put, key = item
            put(key, self._unmarshal_one(v, memo, stack, put, key))
        return out[0]

    def _unmarshal_one(self, v, memo: dict, stack: list, put, key):
        cls = type(v)
        if cls is Prim:
            return v.to_python()
        if cls is Text:
            return v.value
        if cls is wire.Null:
            return None
        if cls is Struct or cls is ListValue:
            done = memo.get(id(v))
            if done is not None:
                return done[1]
            if cls is ListValue:
                items = v.items
                lst: list = [None] * len(items)
                memo[id(v)] = (v, lst)
                stack.extend((items[i], lst.__setitem__, i) for i in range(len(items) - 1, -1, -1))
                return lst
            spec: ClassSpec | None = self.types.spec_named(v.type_name)
            if spec is None:
                raise UnknownType(f"no by-value factory for {v.type_name}")
            fields = v.fields
            if spec.factory is not None:
                # placeholder: a cycle back into a factory-made object reads None
                memo[id(v)] = (v, None)
                kwargs: dict = {}
                stack.append((_BUILD, spec, v, kwargs, put, key))
                stack.extend((fv, kwargs.__setitem__, name) for name, fv in reversed(fields))
                return None
            obj = spec.cls.__new__(spec.cls)
            memo[id(v)] = (v, obj)
            setter = functools.partial(object.__setattr__, obj)
            stack.extend((fv, setter, name) for name, fv in reversed(fields))
            return obj
        if cls is Ref:
            return self.proxies.resolve(v.ior, self, lambda x: self._unmarshal(x, memo))
        if cls is wire.BackRef:
            for node, obj in memo.values():
                if getattr(node, "id", None) == v.target:
                    return obj
            raise wire.DanglingBackref(f"backref to unseen id {v.target}")
        raise TypeError(f"not a wire value: {v!r}")

    # -- dispatch (server side) ---------------------------------------------

    def dispatch(self, call: CallEnvelope) -> ReplyEnvelope:
        rid = call.request_id
        try:
            record = self.registry.lookup(call.service)
        except NotFound:
            return ReplyEnvelope(rid, DistFault("SERVICE_NOT_FOUND", f"no service {call.service!r}"))
        try:
            sig = record.remote_type.get(MethodSignature(call.method, call.signature))
        except ValueError as e:
            return ReplyEnvelope(rid, DistFault("BAD_ARGUMENTS", str(e)))
        if sig is None:
            return ReplyEnvelope(rid, DistFault(
                "METHOD_NOT_FOUND", f"{call.method}({','.join(call.signature)}) not in {record.remote_type.name}"
            ))
        memo: dict = {}
        try:
            args = [self._unmarshal(a, memo) for a in call.args]
        except (MarshalError, WireError) as e:
            return ReplyEnvelope(rid, DistFault("BAD_ARGUMENTS", str(e)))
        try:
            result = record.adaptor.invoke(sig, args)
        except Exception as e:  # application fault, always handed back
            return ReplyEnvelope(rid, AppFault(type(e).__name__, str(e)))
        try:
            value = self.marshal_return(result, record.adaptor.real_class, sig)
        except Exception as e:
            log.exception("marshalling the result of %s failed", sig)
            return ReplyEnvelope(rid, DistFault("INTERNAL", f"{type(e).__name__}: {e}"))
        return ReplyEnvelope(rid, Result(value))

    def handle_post(self, key: str, body: bytes) -> bytes:
        try:
            call = wire.decode_call(body)
        except WireError as e:
            return wire.encode_reply(ReplyEnvelope("", DistFault("BAD_ARGUMENTS", str(e))))
        if call.service != key:
            reply = ReplyEnvelope(call.request_id, DistFault(
                "BAD_ARGUMENTS", f"envelope names {call.service!r} but was posted to {key!r}"))
        else:
            reply = self.dispatch(call)
        try:
            return wire.encode_reply(reply)
        except ValueError as e:
            return wire.encode_reply(ReplyEnvelope(call.request_id, DistFault("INTERNAL", str(e))))

    # -- client side --------------------------------------------------------

    def remote_call(self, target, service: str, method, args: list, owner: str = "") -> Any:
        """Call ``method`` on ``service`` at ``target`` (``(host, port)`` or ``"host:port"``).

        Application faults are re-raised as :class:`RemoteApplicationError`.
        Distribution faults return the return type's default value under
        ``SUPPRESS_WITH_DEFAULTS`` and raise :class:`DistributionError`
        under ``PROPAGATE``.
        """
        sig = MethodSignature.parse(method)
        host, port = parse_target(target)
        values = []
        for i, a in enumerate(args):
            values.append(self.marshal_argument(a, owner, sig, i))
        call = CallEnvelope(service, sig.name, sig.params, f"{self._rid_prefix}-{next(self._rid)}", values)
        try:
            status, data = self.transport.request("POST", host, port, "/" + quote(service, safe=""),
                                                  wire.encode_call(call))
            reply = wire.decode_reply(data)
        except DistributionError as e:
            return self._failed(sig, e.code, e.message)
        except WireError as e:
            return self._failed(sig, "TRANSPORT", f"unreadable reply: {e}")
        body = reply.body
        if isinstance(body, AppFault):
            raise RemoteApplicationError(body.type_name, body.message)
        if isinstance(body, DistFault):
            return self._failed(sig, body.code, body.message)
        return self._unmarshal(body.value, {})

    def _failed(self, sig: MethodSignature, code: str, message: str):
        if self.config.failure_mode is FailureMode.SUPPRESS_WITH_DEFAULTS:
            log.debug("suppressed %s on %s: %s", code, sig, message)
            return default_for(sig.returns)
        raise DistributionError(code, message)

    def get_remote_reference(self, target, key: str):
        """Handle for the service named ``key`` (name or GUID) at ``target``."""
        host, port = parse_target(target)
        status, data = self.transport.request("GET", host, port, "/" + quote(key, safe=""), accept=XML)
        if status == 404:
            raise NotFound(key)
        if status != 200:
            raise DistributionError("TRANSPORT", f"HTTP {status}")
        try:
            ior = wire.decode_ior(data)
        except WireError as e:
            raise DistributionError("TRANSPORT", f"unreadable reference: {e}") from None
        return self.proxies.resolve(ior, self, lambda x: self._unmarshal(x, {}))

    def fetch_remote_type(self, ior: RemoteObjectRef) -> RemoteType:
        status, data = self.transport.request("GET", ior.host, ior.port, f"/{ior.guid}?remote-type")
        if status != 200:
            raise DistributionError("TRANSPORT", f"remote type fetch failed: HTTP {status}")
        return decode_remote_type(data)

    # -- browsing -----------------------------------------------------------

    def browse_index(self) -> str:
        rows = []
        for r in sorted(self.registry.records(), key=lambda r: (r.automatic, r.name)):
            url = f"{self.url}/{quote(r.name, safe='')}"
            rows.append(
                "<tr>"
                f"<td>{html.escape(r.name)}</td>"
                f"<td>{html.escape(r.remote_type.name)}</td>"
                f'<td><a href="{html.escape(url)}">{html.escape(url)}</a></td>'
                f"<td>{html.escape(r.adaptor.real_class)}</td>"
                f"<td>{html.escape(_safe_str(r.adaptor.underlying))}</td>"
                "</tr>"
            )
        return _page(
            f"Services at {self.url}",
            "<table><tr><th>Service</th><th>Remote type</th><th>URL</th><th>Real class</th>"
            "<th>Object</th></tr>" + "".join(rows) + "</table>",
        )

    def browse_service(self, key: str) -> str:
        r = self.registry.lookup(key)
        parts = [
            f"<p>Service <b>{html.escape(r.name)}</b>, GUID <code>{r.guid}</code></p>",
            f"<h2>Remote type {html.escape(r.remote_type.name)}</h2><ul>",
        ]
        parts += [f"<li><code>{html.escape(m.full)}</code></li>" for m in r.remote_type.methods]
        parts.append("</ul>")
        if self.config.browse_details:
            obj = r.adaptor.underlying
            parts.append(f"<h2>Class {html.escape(r.adaptor.real_class)}</h2><h3>Methods</h3><ul>")
            parts += [f"<li><code>{html.escape(m.full)}</code></li>" for m in r.adaptor.dispatch]
            parts.append("</ul><h3>Fields</h3><table><tr><th>Field</th><th>Value</th></tr>")
            for fname, fval in _field_state(obj):
                parts.append(f"<tr><td>{html.escape(fname)}</td><td>{html.escape(_safe_str(fval))}</td></tr>")
            parts.append("</table>")
        return _page(f"Service {r.name}", "".join(parts))


def _field_state(obj) -> list[tuple[str, Any]]:
    try:
        return list(vars(obj).items())
    except TypeError:
        return [(n, getattr(obj, n)) for n in getattr(obj, "__slots__", ())]


def _safe_str(obj) -> str:
    try:
        return str(obj)
    except Exception as e:
        return f"<unprintable {type(e).__name__}>"


def _page(title: str, body: str) -> str:
    return (f"<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>{html.escape(title)}</title></head>"
            f"<body><h1>{html.escape(title)}</h1>{body}</body></html>")


def _elem_type(items, types: TypeCatalog) -> str:
    names = set()
    for item in items:
        if item is None:
            continue
        if isinstance(item, bool):
            names.add("bool")
        elif isinstance(item, int):
            names.add("i64")
        elif isinstance(item, float):
            names.add("f64")
        elif isinstance(item, str):
            names.add("text")
        elif isinstance(item, ProxyHandle):
            names.add(item.ior.real_class)
        else:
            spec = types.spec_for(item)
            names.add(spec.name if spec else "object")
    return names.pop() if len(names) == 1 else "object"


def encode_remote_type(rt: RemoteType) -> bytes:
    parts = [f'<remote-type name="{wire.escape_attr(rt.name)}">']
    parts += [wire._method_el("method", m) for m in rt.methods]
    parts.append("</remote-type>")
    return "".join(parts).encode("utf-8")


def decode_remote_type(data: bytes) -> RemoteType:
    try:
        root = ET.fromstring(data)
        return RemoteType(root.attrib["name"], [wire._sig(el) for el in root])
    except (ET.ParseError, KeyError, ValueError, WireError) as e:
        raise DistributionError("TRANSPORT", f"unreadable remote type: {e}") from None


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    node: Node

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()

    def track(self, sock, alive: bool) -> None:
        with self._conns_lock:
            (self._conns.add if alive else self._conns.discard)(sock)

    def handle_error(self, request, client_address):
        log.debug("connection from %s ended abruptly", client_address, exc_info=True)

    def close_connections(self) -> None:
        with self._conns_lock:
            conns = list(self._conns)
        for s in conns:
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # headers and body leave in one segment; flushed after each request
    wbufsize = 64 * 1024
    disable_nagle_algorithm = True
    server: _Server

    def setup(self):
        super().setup()
        self.server.track(self.connection, True)

    def finish(self):
        try:
            super().finish()
        finally:
            self.server.track(self.connection, False)

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, ctype: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _key(self) -> tuple[str, str]:
        parts = urlsplit(self.path)
        return unquote(parts.path.lstrip("/")), parts.query

    def do_POST(self):
        key, _ = self._key()
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        self._send(200, self.server.node.handle_post(key, body), XML)

    def do_GET(self):
        node = self.server.node
        key, query = self._key()
        wants_xml = XML in (self.headers.get("Accept") or "")
        try:
            if not key:
                self._send(200, node.browse_index().encode("utf-8"), "text/html; charset=utf-8")
                return
            record = node.registry.lookup(key)
            if query == "remote-type":
                self._send(200, encode_remote_type(record.remote_type), XML)
            elif wants_xml:
                self._send(200, wire.encode_ior(node.make_ior(record)), XML)
            else:
                self._send(200, node.browse_service(key).encode("utf-8"), "text/html; charset=utf-8")
        except NotFound:
            self._send(404, _page("Not found", f"<p>No service {html.escape(key)}</p>").encode("utf-8"),
                       "text/html; charset=utf-8")
        except ObjrtError as e:
            log.exception("GET %s failed", self.path)
            self._send(500, html.escape(str(e)).encode("utf-8"), "text/plain; charset=utf-8")
