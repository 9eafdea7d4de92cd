"""Peer-to-peer routing demo.

``P2PNode`` knows nothing about distribution.  The same routing code runs
either with every node in one address space (plain method calls) or with
the nodes split across two runtime nodes talking over localhost, and both
runs must produce the same routing trace.

Routing is greedy over a ring of 160-bit keys: a node forwards to the peer
whose key is numerically closest to the destination, and delivers when no
peer is closer than itself.  Distance strictly decreases on every hop, so
routes terminate.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass

from ..node import Node, NodeConfig
from ..policy import BY_REFERENCE, BY_VALUE, TransmissionPolicyManager
from ..registry import catalog, remote_class

RING = 1 << 160
MAX_INLINE_SIZE = 100  # messages longer than this travel by reference
NODE_COUNT = 8
MESSAGE_COUNT = 12


class NodeStopped(Exception):
    pass


@remote_class("Key", fields=("bits",))
@dataclass(frozen=True)
class Key:
    bits: str

    def __post_init__(self):
        if len(self.bits) != 40 or any(c not in "0123456789abcdef" for c in self.bits):
            raise ValueError(f"key must be 40 lowercase hex digits: {self.bits!r}")

    @classmethod
    def random(cls, rng: random.Random) -> "Key":
        return cls(f"{rng.getrandbits(160):040x}")

    @property
    def value(self) -> int:
        return int(self.bits, 16)

    def distance(self, other: "Key") -> int:
        d = abs(self.value - other.value)
        return min(d, RING - d)

    def short(self) -> str:
        return self.bits[:8]


@remote_class(
    "Message",
    methods=["getId()->i32", "getBody()->text", "size()->i32", "addHop()->i32", "getHops()->i32"],
    fields=("ident", "body", "hops"),
)
class Message:
    def __init__(self, ident: int, body: str):
        self.ident = ident
        self.body = body
        self.hops = 0

    def getId(self):
        return self.ident

    def getBody(self):
        return self.body

    def size(self):
        return len(self.body)

    def addHop(self):
        self.hops += 1
        return self.hops

    def getHops(self):
        return self.hops


@remote_class(
    "P2PNode",
    methods=[
        "addPeer(P2PNode)->void",
        "route(Key,Message)->void",
        "getLog()->text",
        "stop()->void",
        "start()->void",
        "getKey()->Key",
    ],
    fields=("key", "peers", "entries", "running"),
)
class P2PNode:
    def __init__(self, key: Key):
        self.key = key
        self.peers: list = []
        self.entries: list[str] = []
        self.running = True

    def addPeer(self, peer) -> None:
        self.peers.append(peer)

    def route(self, key: Key, msg) -> None:
        if not self.running:
            raise NodeStopped(f"node {self.key.short()} is stopped")
        hop = msg.addHop()
        best, best_key = self, self.key
        best_d = self.key.distance(key)
        for peer in self.peers:
            pk = peer.getKey()
            d = pk.distance(key)
            if d < best_d or (d == best_d and pk.bits < best_key.bits):
                best, best_key, best_d = peer, pk, d
        action = "deliver" if best is self else "forward"
        self.entries.append(f"{msg.getId()}\t{hop}\t{self.key.short()}\t{key.short()}\t{action}")
        if best is not self:
            best.route(key, msg)

    def getLog(self) -> str:
        return "\n".join(self.entries)

    def stop(self) -> None:
        self.running = False

    def start(self) -> None:
        self.running = True

    def getKey(self) -> Key:
        return self.key

    def __str__(self):
        return f"P2PNode({self.key.short()}, {len(self.peers)} peers)"


IMANAGE = catalog.define_remote_type("IManage", "stop()->void", "start()->void")
IMONITOR = catalog.define_remote_type("IMonitor", "getLog()->text")
IP2PNODE = catalog.define_remote_type(
    "IP2PNode", "addPeer(P2PNode)->void", "route(Key,Message)->void", "getKey()->Key"
)
ROUTE = IP2PNODE.get(IP2PNODE.by_name("route")[0])


def apply_smart_proxy_rules(tpm: TransmissionPolicyManager) -> None:
    """Proxies to P2PNodes cache ``key``; keys always travel by value."""
    tpm.set_field_to_cache(P2PNode, "key", "getKey()->Key", None)
    tpm.set_class_policy(Key, BY_VALUE, 0)


def deliver(tpm: TransmissionPolicyManager | None, node, destination: Key, message: Message) -> None:
    """Route ``message``; large messages go by reference, small ones by value."""
    if tpm is not None:
        mechanism = BY_REFERENCE if message.size() > MAX_INLINE_SIZE else BY_VALUE
        tpm.set_argument_policy(P2PNode, ROUTE, 1, mechanism)
    node.route(destination, message)


@dataclass
class Scenario:
    keys: list[Key]
    peers: list[list[int]]
    messages: list[tuple[int, Key, str]]  # (entry node, destination, body)


def scenario(seed: int, n: int = NODE_COUNT, m: int = MESSAGE_COUNT) -> Scenario:
    rng = random.Random(seed)
    keys = sorted((Key.random(rng) for _ in range(n)), key=lambda k: k.value)
    peers = [sorted({(i + 1) % n, (i - 1) % n, (i + n // 2) % n} - {i}) for i in range(n)]
    messages = []
    for i in range(m):
        size = rng.choice((rng.randint(10, MAX_INLINE_SIZE), rng.randint(MAX_INLINE_SIZE + 1, 400)))
        body = "".join(rng.choice(string.ascii_letters) for _ in range(size))
        messages.append((i % n, Key.random(rng), body))
    return Scenario(keys, peers, messages)


def _trace(logs: list[str]) -> list[str]:
    rows = [line.split("\t") for text in logs for line in text.splitlines() if line]
    rows.sort(key=lambda r: (int(r[0]), int(r[1])))
    return ["\t".join(r) for r in rows]


def run_single_process(seed: int = 42) -> list[str]:
    sc = scenario(seed)
    nodes = [P2PNode(k) for k in sc.keys]
    for i, peers in enumerate(sc.peers):
        for j in peers:
            nodes[i].addPeer(nodes[j])
    for ident, (entry, dest, body) in enumerate(sc.messages):
        deliver(None, nodes[entry], dest, Message(ident, body))
    return _trace([n.getLog() for n in nodes])


@dataclass
class TwoNodeRun:
    trace: list[str]
    getkey_transport_calls: int
    remote_nodes: int


def _configure(runtime: Node) -> None:
    apply_smart_proxy_rules(runtime.policy)
    runtime.associate_class_with_remote_type(P2PNode, IP2PNODE)


def run_two_node(seed: int = 42, host: str = "127.0.0.1") -> TwoNodeRun:
    """Even-indexed nodes live on runtime A (with the driver), odd ones on B.

    The driver only ever touches B's nodes through proxies.
    """
    sc = scenario(seed)
    a = Node(NodeConfig(host=host)).start()
    b = Node(NodeConfig(host=host)).start()
    try:
        _configure(a)
        _configure(b)
        handles, monitors = [], []
        for i, k in enumerate(sc.keys):
            if i % 2 == 0:
                local = P2PNode(k)
                handles.append(local)
                monitors.append(local)
            else:
                remote = P2PNode(k)
                b.expose(remote, IP2PNODE, f"P2P-{i}")
                b.expose(remote, IMONITOR, f"Monitor-{i}")
                b.expose(remote, IMANAGE, f"Manage-{i}")
                handles.append(a.get_remote_reference(b.address, f"P2P-{i}"))
                monitors.append(a.get_remote_reference(b.address, f"Monitor-{i}"))
        for i, peers in enumerate(sc.peers):
            for j in peers:
                handles[i].addPeer(handles[j])

        before = a.transport.calls
        for h in handles[1::2]:
            h.getKey()
        getkey_calls = a.transport.calls - before

        for ident, (entry, dest, body) in enumerate(sc.messages):
            deliver(a.policy, handles[entry], dest, Message(ident, body))
        return TwoNodeRun(_trace([m.getLog() for m in monitors]), getkey_calls, len(handles[1::2]))
    finally:
        a.stop()
        b.stop()
