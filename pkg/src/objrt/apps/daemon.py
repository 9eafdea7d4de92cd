"""Node daemon: a runtime node serving the demo objects named in a manifest.

The manifest is JSON::

    {"exposures": [
        {"object": "p2p_node", "instance": "n1", "remote_type": "IP2PNode", "service": "P2P"},
        {"object": "p2p_node", "instance": "n1", "remote_type": "IMonitor", "service": "Monitor"}
    ]}

Entries with the same ``instance`` label share one object, so one node can
be exposed through several views.  ``remote_type`` may be null, meaning the
full type of the object's class.
"""

from __future__ import annotations

import hashlib
import json
import logging
import signal
import threading
from dataclasses import dataclass
from typing import Any, Callable

from ..errors import ObjrtError
from ..node import Node, NodeConfig
from . import bench, p2p

log = logging.getLogger(__name__)


class ManifestError(ObjrtError):
    code = "MANIFEST"


def _p2p_node(runtime: Node, instance: str) -> p2p.P2PNode:
    p2p.apply_smart_proxy_rules(runtime.policy)
    runtime.associate_class_with_remote_type(p2p.P2PNode, p2p.IP2PNODE)
    # key derived from the label so restarts keep the same ring position
    return p2p.P2PNode(p2p.Key(hashlib.sha1(instance.encode()).hexdigest()))


def _bench_server(runtime: Node, instance: str) -> bench.BenchServer:
    return bench.BenchServer(runtime)


CONSTRUCTORS: dict[str, Callable[[Node, str], Any]] = {
    "p2p_node": _p2p_node,
    "bench_server": _bench_server,
}

REMOTE_TYPES = {
    "IManage": p2p.IMANAGE,
    "IMonitor": p2p.IMONITOR,
    "IP2PNode": p2p.IP2PNODE,
}


@dataclass(frozen=True)
class Exposure:
    constructor: str
    instance: str
    remote_type: str | None
    service: str


def parse_manifest(text: str) -> list[Exposure]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not JSON: {e}") from None
    entries = doc.get("exposures") if isinstance(doc, dict) else None
    if not isinstance(entries, list):
        raise ManifestError('manifest needs an "exposures" list')
    out = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict):
            raise ManifestError(f"exposure {i} is not an object")
        ctor = e.get("object")
        if ctor not in CONSTRUCTORS:
            raise ManifestError(f"exposure {i}: unknown object constructor {ctor!r}")
        rt = e.get("remote_type")
        if rt is not None and rt not in REMOTE_TYPES:
            raise ManifestError(f"exposure {i}: unknown remote type {rt!r}")
        service = e.get("service")
        if not isinstance(service, str) or not service:
            raise ManifestError(f"exposure {i}: service name missing")
        instance = e.get("instance", service)
        if not isinstance(instance, str):
            raise ManifestError(f"exposure {i}: instance label must be text")
        out.append(Exposure(ctor, instance, rt, service))
    return out


def load_manifest(path: str) -> list[Exposure]:
    try:
        with open(path, encoding="utf-8") as f:
            return parse_manifest(f.read())
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from None


def build_node(config: NodeConfig, exposures: list[Exposure]) -> Node:
    """Create the node and expose everything; nothing is served yet."""
    runtime = Node(config)
    instances: dict[tuple[str, str], Any] = {}
    for ex in exposures:
        key = (ex.constructor, ex.instance)
        obj = instances.get(key)
        if obj is None:
            obj = instances[key] = CONSTRUCTORS[ex.constructor](runtime, ex.instance)
        rt = REMOTE_TYPES[ex.remote_type] if ex.remote_type else None
        runtime.expose(obj, rt, ex.service)
    return runtime


def run_daemon(config: NodeConfig, manifest: str | list[Exposure], ready: Callable[[Node], None] | None = None,
               stop: threading.Event | None = None) -> None:
    """Serve until SIGINT/SIGTERM (or until ``stop`` is set)."""
    exposures = load_manifest(manifest) if isinstance(manifest, str) else manifest
    runtime = build_node(config, exposures)
    runtime.start()
    stop = stop or threading.Event()
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())
    try:
        if ready is not None:
            ready(runtime)
        stop.wait()
    finally:
        runtime.stop()
