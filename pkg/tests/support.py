"""Shared test material: independent oracles, value generators, demo classes."""

from __future__ import annotations

import random
import string

from hypothesis import strategies as st

from objrt.policy import (
    BY_REFERENCE, BY_VALUE, PolicyRule, RuleKey, RuleKind, TransmissionPolicyManager,
)
from objrt.registry import MethodSignature, remote_class
from objrt.wire import (
    NULL, CachedField, ListValue, Prim, Ref, RemoteObjectRef, Struct, Text,
)

# -- wire value generator ------------------------------------------------------

IDENT = st.from_regex(r"\A[A-Za-z_][A-Za-z0-9_]{0,6}\Z")
DOTTED = st.builds(lambda parts: ".".join(parts), st.lists(IDENT, min_size=1, max_size=3))
# XML 1.0 carries these; markup characters are included on purpose
XML_TEXT = st.text(
    alphabet=st.one_of(
        st.characters(blacklist_categories=("Cs", "Cc"), max_codepoint=0x10FFFF).filter(
            lambda c: c not in "\ufffe\uffff"
        ),
        st.sampled_from("\t\n\r<>&\"' ]]>"),
    ),
    max_size=12,
)
_MARKUP = "\t\n\r<>&\"' ]]>"
_RANGES = ((0x20, 0x7E), (0xA0, 0xD7FF), (0xE000, 0xFFFD), (0x10000, 0x10FFFF))


def random_xml_text(rng: random.Random, max_len: int = 12) -> str:
    """Text XML 1.0 can carry, biased towards markup characters."""
    out = []
    for _ in range(rng.randint(0, max_len)):
        r = rng.random()
        if r < 0.3:
            out.append(rng.choice(_MARKUP))
        elif r < 0.7:
            out.append(chr(rng.randint(0x20, 0x7E)))
        else:
            lo, hi = rng.choice(_RANGES)
            out.append(chr(rng.randint(lo, hi)))
    return "".join(out)


def _ident(rng: random.Random) -> str:
    first = string.ascii_letters + "_"
    rest = first + string.digits
    return rng.choice(first) + "".join(rng.choice(rest) for _ in range(rng.randint(0, 6)))


def _dotted(rng: random.Random) -> str:
    return ".".join(_ident(rng) for _ in range(rng.randint(1, 3)))


def _prim(rng: random.Random) -> Prim:
    k = rng.randrange(4)
    if k == 0:
        return Prim.i32(rng.randint(-(2**31), 2**31 - 1))
    if k == 1:
        return Prim.i64(rng.randint(-(2**63), 2**63 - 1))
    if k == 2:
        specials = (0.0, -0.0, float("inf"), float("-inf"), float("nan"), 5e-324, 1.7976931348623157e308)
        x = rng.choice(specials) if rng.random() < 0.2 else rng.uniform(-1e6, 1e6) * 10 ** rng.randint(-30, 30)
        return Prim.f64(x)
    return Prim.bool(rng.random() < 0.5)


def _sig(rng: random.Random) -> MethodSignature:
    return MethodSignature(_ident(rng), tuple(_dotted(rng) for _ in range(rng.randint(0, 3))), _dotted(rng))


def random_value_graph(rng: random.Random, max_depth: int = 6):
    """A Value whose containers may be shared (aliases) or point back at ancestors (cycles).

    Depth counts container nesting; the root is depth 0.
    """
    ancestors: list = []
    finished: list = []

    def leaf():
        k = rng.randrange(3)
        if k == 0:
            return NULL
        if k == 1:
            return _prim(rng)
        return Text(random_xml_text(rng))

    def ior(depth):
        sigs = list({s: None for s in (_sig(rng) for _ in range(rng.randint(0, 3)))})
        names = list(dict.fromkeys(_ident(rng) for _ in range(rng.randint(0, 2))))
        cached = tuple(
            CachedField(n, MethodSignature("get" + n, (), "i32"),
                        MethodSignature("set" + n, ("i32",)) if rng.random() < 0.5 else None)
            for n in names
        )
        return RemoteObjectRef(
            host=rng.choice(("127.0.0.1", "node-a.example", "::1")),
            port=rng.randint(1, 65535),
            guid=f"{rng.getrandbits(160):040x}",
            remote_type=_dotted(rng),
            real_class=_dotted(rng),
            methods=None if rng.random() < 0.25 else tuple(sigs),
            cached_fields=cached,
            cached_methods=tuple(dict.fromkeys(_sig(rng) for _ in range(rng.randint(0, 2)))),
            cached_values={c.name: gen(depth + 1) for c in cached},
        )

    def container(kind, depth, n):
        node = Struct(_dotted(rng)) if kind == "struct" else ListValue(_dotted(rng))
        ancestors.append(node)
        children = [gen(depth + 1) for _ in range(n)]
        if kind == "struct":
            node.fields = [(random_xml_text(rng) or "f", c) for c in children]
        else:
            node.items = children
        ancestors.pop()
        finished.append(node)
        return node

    def gen(depth):
        choices = ["leaf", "leaf"]
        if depth < max_depth:
            choices += ["struct", "list", "ref"]
        if ancestors or finished:
            choices.append("share")
        kind = rng.choice(choices)
        if kind == "leaf":
            return leaf()
        if kind == "share":
            return rng.choice(ancestors + finished)
        if kind == "ref":
            return Ref(ior(depth))
        return container(kind, depth, rng.randint(0, 3))

    r = rng.random()
    if r < 0.15:
        return gen(0)
    return container("struct" if r < 0.6 else "list", 0, rng.randint(1, 4))


def value_graphs(max_depth: int = 6):
    """Hypothesis picks the seed; the structure comes from the seeded generator."""
    return st.integers(0, 2**64 - 1).map(lambda seed: random_value_graph(random.Random(seed), max_depth))


def container_count(v) -> int:
    """Distinct Struct/List nodes reachable from ``v`` (cached values included)."""
    seen: set[int] = set()

    def walk(x):
        if isinstance(x, (Struct, ListValue)):
            if id(x) in seen:
                return
            seen.add(id(x))
            for c in (fv for _, fv in x.fields) if isinstance(x, Struct) else x.items:
                walk(c)
        elif isinstance(x, Ref):
            for c in x.ior.cached_values.values():
                walk(c)

    walk(v)
    return len(seen)


# -- policy oracle ---------------------------------------------------------------

# tie-break between kinds, written out independently of the engine
_ORACLE_PRECEDENCE = {"A": 3, "M": 2, "R": 2, "C": 1}

OWNERS = ("Alpha", "Beta")
CLASSES = ("X", "Y", "Z")
METHODS = (MethodSignature.parse("m()"), MethodSignature.parse("m(X)"), MethodSignature.parse("n(X,Y)"))


def oracle_resolve(rules: list[PolicyRule], ctx: tuple):
    """Brute force: keep the last write per (key, priority), collect the applicable
    rules, sort by priority then kind precedence, take the first.

    ``ctx`` is ("arg", owner, method, index, cls), ("ret", owner, method, cls)
    or ("nested", cls).  Returns (mechanism, depth, winning rule or None).
    """
    latest = {}
    for r in rules:
        latest[(r.key, r.priority)] = r

    def applies(r: PolicyRule) -> bool:
        k = r.key
        tag = ctx[0]
        if k.kind is RuleKind.CLASS:
            return k.class_name == ctx[-1]
        if tag == "arg":
            _, owner, method, index, _ = ctx
            if k.kind is RuleKind.ARGUMENT:
                return (k.class_name, k.method, k.arg_index) == (owner, method, index)
            if k.kind is RuleKind.METHOD:
                return (k.class_name, k.method) == (owner, method)
            return False
        if tag == "ret":
            _, owner, method, _ = ctx
            return k.kind is RuleKind.RETURN and (k.class_name, k.method) == (owner, method)
        return False

    cands = [r for r in latest.values() if applies(r)]
    cands.sort(key=lambda r: (-r.priority, -_ORACLE_PRECEDENCE[r.key.kind.value]))
    if len(cands) > 1:
        a, b = cands[0], cands[1]
        assert (a.priority, a.key.kind) != (b.priority, b.key.kind), "oracle found a complete tie"
    if not cands:
        return (BY_VALUE if ctx[0] == "nested" else BY_REFERENCE), None, None
    w = cands[0]
    return w.mechanism, (None if ctx[0] == "nested" else w.depth), w


def engine_resolve(tpm: TransmissionPolicyManager, ctx: tuple):
    if ctx[0] == "arg":
        d = tpm.resolve_argument(*ctx[1:])
    elif ctx[0] == "ret":
        d = tpm.resolve_return(*ctx[1:])
    else:
        d = tpm.resolve_nested(ctx[1])
    return d.mechanism, d.remaining_depth, d.winning_rule


def random_rule(rng: random.Random) -> PolicyRule:
    kind = rng.choice((RuleKind.CLASS, RuleKind.METHOD, RuleKind.RETURN, RuleKind.ARGUMENT))
    mech = rng.choice((BY_VALUE, BY_REFERENCE))
    prio = rng.randint(0, 3)
    if kind is RuleKind.CLASS:
        return PolicyRule(RuleKey(kind, rng.choice(CLASSES)), mech, prio)
    depth = rng.choice((None, 0, 1, 2, 5))
    method = rng.choice(METHODS)
    index = rng.randint(0, 1) if kind is RuleKind.ARGUMENT else None
    return PolicyRule(RuleKey(kind, rng.choice(OWNERS), method, index), mech, prio, depth)


def random_context(rng: random.Random) -> tuple:
    tag = rng.choice(("arg", "arg", "ret", "nested"))
    cls = rng.choice(CLASSES)
    if tag == "nested":
        return ("nested", cls)
    owner, method = rng.choice(OWNERS), rng.choice(METHODS)
    if tag == "ret":
        return ("ret", owner, method, cls)
    return ("arg", owner, method, rng.randint(0, 1), cls)


def manager_with(rules: list[PolicyRule]) -> TransmissionPolicyManager:
    tpm = TransmissionPolicyManager()
    for r in rules:
        tpm.set_rule(r)
    return tpm


# -- demo classes ------------------------------------------------------------------

class Boom(Exception):
    pass


@remote_class("Box", methods=["getV()->i32", "setV(i32)->void"], fields=("v", "inner"))
class Box:
    def __init__(self, v: int = 0, inner=None):
        self.v = v
        self.inner = inner

    def getV(self):
        return self.v

    def setV(self, v):
        self.v = v


@remote_class(
    "Counter",
    methods=[
        "inc()->i32", "getCount()->i32", "setCount(i32)->void", "isPositive()->bool", "label()->text",
        "makeBox(i32)->Box", "echo(Box)->Box", "bump(Box)->void", "fail(text)->void", "sum(i32,i32)->i64",
        "junk()->Box", "first(Box)->Box",
    ],
    fields=("count",),
)
class Counter:
    def __init__(self, count: int = 0):
        self.count = count
        self.secret = "hidden"

    def inc(self):
        self.count += 1
        return self.count

    def getCount(self):
        return self.count

    def setCount(self, n):
        self.count = n

    def isPositive(self):
        return self.count > 0

    def label(self):
        return f"counter {self.count}"

    def makeBox(self, v):
        return Box(v)

    def echo(self, box):
        return box

    def bump(self, box):
        box.setV(box.getV() + 1)

    def fail(self, why):
        raise Boom(why)

    def sum(self, a, b):
        return a + b

    def junk(self):
        return object()

    def first(self, box):
        return box


def wide_class(n: int = 17):
    """A class exposing ``n`` methods, enough to force lazy method lists."""
    sigs = [f"m{i}()->i32" for i in range(n)]
    ns = {f"m{i}": (lambda self, i=i: i) for i in range(n)}
    cls = type("Wide", (), ns)
    return remote_class("Wide", methods=sigs)(cls)


def random_text(rng: random.Random, n: int) -> str:
    return "".join(rng.choice(string.ascii_letters) for _ in range(n))
