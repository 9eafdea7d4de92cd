"""Remote references, proxy handles and the proxy table.

A proxy answers cached-field accessors from its local cache, runs cached
methods through a client-registered local implementation, and forwards
everything else to the exposing node.  There is no coherency control: a
cached setter only changes the local copy.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable

from .errors import AccessorMissing, MethodNotInRemoteType, NoLocalImpl
from .registry import MethodSignature, RemoteType, ServiceRecord
from .wire import CachedField, RemoteObjectRef, Value, decode_ior, encode_ior

if TYPE_CHECKING:
    from .node import Node
    from .policy import TransmissionPolicyManager

__all__ = [
    "RemoteObjectRef", "CachedField", "encode_ior", "decode_ior", "make_ior",
    "ProxyConfig", "ProxyHandle", "ProxyTable",
]

log = logging.getLogger(__name__)


def make_ior(record: ServiceRecord, policy: "TransmissionPolicyManager", host: str, port: int,
             snapshot: Callable[[Any], Value]) -> RemoteObjectRef:
    """Build a reference to ``record``, capturing current cached field values.

    ``snapshot`` marshals one field value.
    """
    adaptor = record.adaptor
    field_rules, cached_methods = policy.cached_members(adaptor.real_class)
    cached_fields = []
    values = {}
    for rule in field_rules:
        name = rule.key.field
        accessor = adaptor.field_accessors.get(name)
        if accessor is None:
            raise AccessorMissing(f"{adaptor.real_class}.{name} has no getter")
        cached_fields.append(CachedField(name, rule.getter, rule.setter))
        values[name] = snapshot(accessor[0]())
    return RemoteObjectRef(
        host=host,
        port=port,
        guid=record.guid,
        remote_type=record.remote_type.name,
        real_class=adaptor.real_class,
        methods=record.remote_type.methods,
        cached_fields=tuple(cached_fields),
        cached_methods=tuple(cached_methods),
        cached_values=values,
    )


@dataclass(frozen=True)
class ProxyConfig:
    """The proxy "class": shared by every handle with the same view and cache shape."""

    remote_type: str
    cached_fields: tuple[CachedField, ...]
    cached_methods: frozenset[MethodSignature]

    def getter_of(self, sig: MethodSignature) -> str | None:
        for cf in self.cached_fields:
            if cf.getter == sig:
                return cf.name
        return None

    def setter_of(self, sig: MethodSignature) -> str | None:
        for cf in self.cached_fields:
            if cf.setter == sig:
                return cf.name
        return None


class ProxyHandle:
    """Client-side stand-in for a remote object.

    ``invoke`` takes a signature (or a bare method name when unambiguous);
    attribute access falls back to it, so ``proxy.route(k, m)`` works.
    """

    def __init__(self, ior: RemoteObjectRef, config: ProxyConfig, runtime: "Node", local_cache: dict):
        self.ior = ior
        self.config = config
        self.local_cache = local_cache
        self._runtime = runtime
        self._lock = threading.Lock()
        self._accessors = {cf.getter: cf for cf in config.cached_fields}
        self._accessors.update({cf.setter: cf for cf in config.cached_fields if cf.setter})

    @property
    def guid(self) -> str:
        return self.ior.guid

    @property
    def methods(self) -> tuple[MethodSignature, ...]:
        if self.ior.methods is None:
            rt = self._runtime.fetch_remote_type(self.ior)
            self.ior = _with_methods(self.ior, rt)
        return self.ior.methods

    def remote_type(self) -> RemoteType:
        return RemoteType(self.ior.remote_type, self.methods)

    def _signature(self, method) -> MethodSignature:
        if isinstance(method, MethodSignature):
            return method
        if "(" in method:
            return MethodSignature.parse(method)
        matches = [s for s in self.methods if s.name == method]
        matches += [s for s in self._accessors if s.name == method and s not in matches]
        if len(matches) != 1:
            raise MethodNotInRemoteType(
                f"{method!r} is {'ambiguous' if matches else 'not in'} remote type {self.ior.remote_type}"
            )
        return matches[0]

    def invoke(self, method, *args) -> Any:
        sig = self._signature(method)
        cf = self._accessors.get(sig)
        if cf is not None:
            if sig == cf.getter:
                return self.local_cache[cf.name]
            (value,) = args
            with self._lock:
                self.local_cache[cf.name] = value
            return None
        declared = next((s for s in self.methods if s == sig), None)
        if declared is None:
            raise MethodNotInRemoteType(f"{sig} is not in remote type {self.ior.remote_type}")
        if sig in self.config.cached_methods:
            impl = self._runtime.local_impl(self.ior.real_class, sig)
            if impl is None:
                raise NoLocalImpl(f"no local implementation of {self.ior.real_class}.{sig}")
            return impl(self, *args)
        return self._runtime.remote_call(
            (self.ior.host, self.ior.port), self.ior.guid, declared, list(args), owner=self.ior.real_class
        )

    def refresh(self, values: dict) -> None:
        with self._lock:
            self.local_cache.update(values)

    def current_ior(self, snapshot: Callable[[Any], Value]) -> RemoteObjectRef:
        """This handle's reference, with the local cache as the snapshot."""
        ior = self.ior
        if not ior.cached_fields:
            return ior
        values = {cf.name: snapshot(self.local_cache[cf.name]) for cf in ior.cached_fields}
        return RemoteObjectRef(
            ior.host, ior.port, ior.guid, ior.remote_type, ior.real_class, ior.methods,
            ior.cached_fields, ior.cached_methods, values,
        )

    def __getattr__(self, name: str):
        if name.startswith("_"):
            raise AttributeError(name)
        sig = self._signature(name)
        return lambda *args: self.invoke(sig, *args)

    def __repr__(self):
        return f"<proxy {self.ior.remote_type} {self.ior.guid[:8]} @{self.ior.host}:{self.ior.port}>"


def _with_methods(ior: RemoteObjectRef, rt: RemoteType) -> RemoteObjectRef:
    return RemoteObjectRef(
        ior.host, ior.port, ior.guid, ior.remote_type, ior.real_class, rt.methods,
        ior.cached_fields, ior.cached_methods, ior.cached_values,
    )


class ProxyTable:
    """At most one handle per GUID; proxy configs shared per cache shape."""

    def __init__(self):
        self._lock = threading.RLock()
        self._handles: dict[str, ProxyHandle] = {}
        self._configs: dict[tuple, ProxyConfig] = {}

    def __len__(self):
        return len(self._handles)

    def get(self, guid: str) -> ProxyHandle | None:
        return self._handles.get(guid)

    def _config(self, ior: RemoteObjectRef) -> ProxyConfig:
        key = (ior.remote_type, ior.methods, ior.cached_fields, frozenset(ior.cached_methods))
        cfg = self._configs.get(key)
        if cfg is None:
            cfg = self._configs[key] = ProxyConfig(ior.remote_type, ior.cached_fields, frozenset(ior.cached_methods))
        return cfg

    def resolve(self, ior: RemoteObjectRef, runtime: "Node", unmarshal: Callable[[Value], Any]) -> Any:
        """Turn an inbound reference into something the application can call.

        Local object if it lives here, else the existing proxy (its cache
        refreshed from the newer snapshot), else a new proxy.
        """
        local = runtime.local_target(ior)
        if local is not None:
            return local
        values = {name: unmarshal(v) for name, v in ior.cached_values.items()}
        with self._lock:
            handle = self._handles.get(ior.guid)
            if handle is not None:
                handle.refresh(values)
                return handle
            cfg = self._config(ior)
            for sig in cfg.cached_methods:
                if runtime.local_impl(ior.real_class, sig) is None:
                    log.warning("proxy for %s caches %s but no local implementation is registered",
                                ior.real_class, sig)
            handle = ProxyHandle(ior, cfg, runtime, values)
            self._handles[ior.guid] = handle
            return handle
