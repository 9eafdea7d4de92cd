"""Transmission policy: which objects travel by value and which by reference.

Rules live in six stores, one per rule kind.  Each passing-mechanism store
maps a lookup key to the rules set for it, indexed by priority, and keeps the
dominant (highest priority) rule per key so a resolution is at most three
dict lookups.  Ties between kinds at equal priority go to the more specific
kind: ARGUMENT > METHOD > CLASS for arguments, RETURN > CLASS for returns.
Larger priority numbers win.

Readers take one reference to an immutable snapshot; writers build a new
snapshot under a lock and swap it in.
"""

from __future__ import annotations

import enum
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Any

from .errors import Malformed, MalformedPolicyFile, MalformedRule
from .registry import MethodSignature, catalog
from .wire import escape_attr

UNBOUNDED = None


class PassingMechanism(enum.Enum):
    BY_VALUE = "by-value"
    BY_REFERENCE = "by-reference"


BY_VALUE = PassingMechanism.BY_VALUE
BY_REFERENCE = PassingMechanism.BY_REFERENCE


class RuleKind(enum.Enum):
    CLASS = "C"
    METHOD = "M"
    RETURN = "R"
    ARGUMENT = "A"
    FIELD_CACHE = "F"
    METHOD_CACHE = "MC"


_CACHE_KINDS = (RuleKind.FIELD_CACHE, RuleKind.METHOD_CACHE)
_MECH_KINDS = (RuleKind.CLASS, RuleKind.METHOD, RuleKind.RETURN, RuleKind.ARGUMENT)
_KIND_ORDER = {k: i for i, k in enumerate(RuleKind)}
# tie-break between kinds at equal priority
PRECEDENCE = {RuleKind.ARGUMENT: 3, RuleKind.METHOD: 2, RuleKind.RETURN: 2, RuleKind.CLASS: 1}


def _class_name(c) -> str:
    return catalog.class_name(c)


@dataclass(frozen=True)
class RuleKey:
    kind: RuleKind
    class_name: str
    method: MethodSignature | None = None
    arg_index: int | None = None
    field: str | None = None

    def __post_init__(self):
        k = self.kind
        if not isinstance(k, RuleKind):
            raise MalformedRule(f"bad rule kind {k!r}")
        if not self.class_name:
            raise MalformedRule("rule needs a class name")
        needs_method = k in (RuleKind.METHOD, RuleKind.RETURN, RuleKind.ARGUMENT, RuleKind.METHOD_CACHE)
        if needs_method != (self.method is not None):
            raise MalformedRule(f"{k.name} rule {'needs' if needs_method else 'takes no'} method")
        if (k is RuleKind.ARGUMENT) != (self.arg_index is not None):
            raise MalformedRule("argument index belongs to ARGUMENT rules only")
        if self.arg_index is not None and (not isinstance(self.arg_index, int) or self.arg_index < 0):
            raise MalformedRule(f"bad argument index {self.arg_index!r}")
        if (k is RuleKind.FIELD_CACHE) != bool(self.field):
            raise MalformedRule("field name belongs to FIELD_CACHE rules only")

    @property
    def lookup(self):
        """Internal store key."""
        k = self.kind
        if k is RuleKind.CLASS:
            return self.class_name
        if k is RuleKind.ARGUMENT:
            return (self.class_name, self.method, self.arg_index)
        if k is RuleKind.FIELD_CACHE:
            return (self.class_name, self.field)
        return (self.class_name, self.method)

    def __str__(self) -> str:
        k = self.kind
        if k is RuleKind.CLASS:
            return f"C:{self.class_name}"
        if k is RuleKind.FIELD_CACHE:
            return f"F:{self.class_name}.{self.field}"
        text = f"{k.value}:{self.class_name}#{self.method}"
        if k is RuleKind.ARGUMENT:
            text += f"#{self.arg_index}"
        return text


@dataclass(frozen=True)
class PolicyRule:
    key: RuleKey
    mechanism: PassingMechanism
    priority: int = 0
    depth: int | None = UNBOUNDED

    def __post_init__(self):
        if self.key.kind in _CACHE_KINDS:
            raise MalformedRule("cache rules are CacheRule instances")
        if not isinstance(self.mechanism, PassingMechanism):
            raise MalformedRule(f"bad mechanism {self.mechanism!r}")
        if not isinstance(self.priority, int) or isinstance(self.priority, bool):
            raise MalformedRule("priority must be an int")
        if self.depth is not None:
            if self.key.kind is RuleKind.CLASS:
                raise MalformedRule("class rules take no depth")
            if not isinstance(self.depth, int) or self.depth < 0:
                raise MalformedRule(f"bad depth {self.depth!r}")


@dataclass(frozen=True)
class CacheRule:
    key: RuleKey
    getter: MethodSignature | None = None
    setter: MethodSignature | None = None

    def __post_init__(self):
        if self.key.kind is RuleKind.FIELD_CACHE:
            if self.getter is None:
                raise MalformedRule("field caching needs a getter")
        elif self.key.kind is RuleKind.METHOD_CACHE:
            if self.getter is not None or self.setter is not None:
                raise MalformedRule("method caching takes no accessors")
        else:
            raise MalformedRule("CacheRule needs a cache kind")


@dataclass(frozen=True)
class ResolvedDecision:
    mechanism: PassingMechanism
    remaining_depth: int | None = UNBOUNDED
    winning_rule: PolicyRule | None = None


_DEFAULT_REF = ResolvedDecision(BY_REFERENCE)
_DEFAULT_VAL = ResolvedDecision(BY_VALUE)


class _Snapshot:
    __slots__ = ("rules", "dominant", "cache", "arg", "meth", "ret", "cls")

    def __init__(self, rules, dominant, cache):
        # rules[kind][lookup][priority] -> PolicyRule
        self.rules = rules
        # dominant[kind][lookup] -> PolicyRule with the highest priority
        self.dominant = dominant
        # cache[kind][lookup] -> CacheRule, insertion ordered
        self.cache = cache
        self.arg = dominant[RuleKind.ARGUMENT]
        self.meth = dominant[RuleKind.METHOD]
        self.ret = dominant[RuleKind.RETURN]
        self.cls = dominant[RuleKind.CLASS]


def _empty_snapshot() -> _Snapshot:
    return _Snapshot(
        {k: {} for k in _MECH_KINDS}, {k: {} for k in _MECH_KINDS}, {k: {} for k in _CACHE_KINDS}
    )


def _rank(r: PolicyRule) -> tuple[int, int]:
    return (r.priority, PRECEDENCE[r.key.kind])


def _decide(cands: list[PolicyRule], default: ResolvedDecision) -> ResolvedDecision:
    if not cands:
        return default
    best = cands[0] if len(cands) == 1 else max(cands, key=_rank)
    return ResolvedDecision(best.mechanism, best.depth, best)


class TransmissionPolicyManager:
    def __init__(self):
        self._lock = threading.Lock()
        self._snap = _empty_snapshot()
        self.evaluations = 0

    # -- mutation -----------------------------------------------------------

    def set_rule(self, rule: PolicyRule) -> None:
        if not isinstance(rule, PolicyRule):
            raise MalformedRule(f"not a PolicyRule: {rule!r}")
        kind, lookup = rule.key.kind, rule.key.lookup
        with self._lock:
            old = self._snap
            per_key = dict(old.rules[kind].get(lookup, {}))
            per_key[rule.priority] = rule
            rules = dict(old.rules)
            rules[kind] = {**old.rules[kind], lookup: per_key}
            dominant = dict(old.dominant)
            dominant[kind] = {**old.dominant[kind], lookup: per_key[max(per_key)]}
            self._snap = _Snapshot(rules, dominant, old.cache)

    def set_cache_rule(self, rule: CacheRule) -> None:
        if not isinstance(rule, CacheRule):
            raise MalformedRule(f"not a CacheRule: {rule!r}")
        with self._lock:
            old = self._snap
            cache = dict(old.cache)
            cache[rule.key.kind] = {**old.cache[rule.key.kind], rule.key.lookup: rule}
            self._snap = _Snapshot(old.rules, old.dominant, cache)

    def clear(self) -> None:
        with self._lock:
            self._snap = _empty_snapshot()

    # convenience setters mirroring the usual call shapes

    def set_method_policy(self, owner, method, mechanism, depth=UNBOUNDED, priority=0) -> None:
        key = RuleKey(RuleKind.METHOD, _class_name(owner), MethodSignature.parse(method))
        self.set_rule(PolicyRule(key, mechanism, priority, depth))

    def set_return_policy(self, owner, method, mechanism, depth=UNBOUNDED, priority=0) -> None:
        key = RuleKey(RuleKind.RETURN, _class_name(owner), MethodSignature.parse(method))
        self.set_rule(PolicyRule(key, mechanism, priority, depth))

    def set_argument_policy(self, owner, method, index, mechanism, depth=UNBOUNDED, priority=0) -> None:
        key = RuleKey(RuleKind.ARGUMENT, _class_name(owner), MethodSignature.parse(method), index)
        self.set_rule(PolicyRule(key, mechanism, priority, depth))

    def set_class_policy(self, cls, mechanism, priority=0) -> None:
        self.set_rule(PolicyRule(RuleKey(RuleKind.CLASS, _class_name(cls)), mechanism, priority))

    def set_field_to_cache(self, cls, field_name: str, getter, setter=None) -> None:
        key = RuleKey(RuleKind.FIELD_CACHE, _class_name(cls), field=field_name)
        self.set_cache_rule(CacheRule(
            key,
            MethodSignature.parse(getter) if getter is not None else None,
            MethodSignature.parse(setter) if setter is not None else None,
        ))

    def set_method_to_cache(self, cls, method) -> None:
        key = RuleKey(RuleKind.METHOD_CACHE, _class_name(cls), MethodSignature.parse(method))
        self.set_cache_rule(CacheRule(key))

    # -- resolution ---------------------------------------------------------

    def resolve_argument(self, owner: str, method: MethodSignature, index: int, actual_class: str,
                         default: ResolvedDecision = _DEFAULT_REF) -> ResolvedDecision:
        self.evaluations += 1
        snap = self._snap
        cands = []
        r = snap.arg.get((owner, method, index))
        if r is not None:
            cands.append(r)
        r = snap.meth.get((owner, method))
        if r is not None:
            cands.append(r)
        r = snap.cls.get(actual_class)
        if r is not None:
            cands.append(r)
        return _decide(cands, default)

    def resolve_return(self, owner: str, method: MethodSignature, actual_class: str,
                       default: ResolvedDecision = _DEFAULT_REF) -> ResolvedDecision:
        self.evaluations += 1
        snap = self._snap
        cands = []
        r = snap.ret.get((owner, method))
        if r is not None:
            cands.append(r)
        r = snap.cls.get(actual_class)
        if r is not None:
            cands.append(r)
        return _decide(cands, default)

    def resolve_nested(self, actual_class: str,
                       default: ResolvedDecision = _DEFAULT_VAL) -> ResolvedDecision:
        self.evaluations += 1
        r = self._snap.cls.get(actual_class)
        if r is None:
            return default
        return ResolvedDecision(r.mechanism, UNBOUNDED, r)

    def cached_members(self, class_name: str) -> tuple[list[CacheRule], list[MethodSignature]]:
        snap = self._snap
        fields = [r for r in snap.cache[RuleKind.FIELD_CACHE].values() if r.key.class_name == class_name]
        methods = [r.key.method for r in snap.cache[RuleKind.METHOD_CACHE].values()
                   if r.key.class_name == class_name]
        return fields, methods

    def rules(self) -> list[Any]:
        """Every stored rule, in canonical file order."""
        snap = self._snap
        out: list[Any] = []
        for kind in _MECH_KINDS:
            for per_key in snap.rules[kind].values():
                out.extend(per_key.values())
        for kind in _CACHE_KINDS:
            out.extend(snap.cache[kind].values())
        out.sort(key=lambda r: (_KIND_ORDER[r.key.kind], str(r.key), getattr(r, "priority", 0)))
        return out

    # -- persistence --------------------------------------------------------

    def store_rules(self) -> bytes:
        parts = ["<policy>"]
        for r in self.rules():
            parts.append(_rule_el(r))
        parts.append("</policy>")
        if len(parts) == 2:
            return b"<policy/>"
        return "".join(parts).encode("utf-8")

    def load_rules(self, data: bytes) -> None:
        """Merge the rules of a policy document into the stores."""
        try:
            root = ET.fromstring(data)
        except ET.ParseError as e:
            raise MalformedPolicyFile(str(e)) from None
        if root.tag != "policy":
            raise MalformedPolicyFile(f"root element is <{root.tag}>, expected <policy>")
        parsed = []
        for el in root:
            if el.tag != "rule":
                raise MalformedPolicyFile(f"unexpected element <{el.tag}>")
            try:
                parsed.append(_parse_rule(el))
            except (MalformedRule, ValueError, KeyError, Malformed) as e:
                raise MalformedPolicyFile(f"bad rule {el.attrib}: {e}") from None
        for r in parsed:
            if isinstance(r, CacheRule):
                self.set_cache_rule(r)
            else:
                self.set_rule(r)


def _rule_el(r) -> str:
    k = r.key
    attrs = [("kind", k.kind.name), ("class", k.class_name)]
    if k.method is not None:
        attrs += [("method", k.method.name), ("sig", k.method.param_text)]
    if k.arg_index is not None:
        attrs.append(("arg", str(k.arg_index)))
    if k.field is not None:
        attrs.append(("field", k.field))
    if isinstance(r, PolicyRule):
        attrs.append(("mechanism", r.mechanism.value))
        if r.depth is not None:
            attrs.append(("depth", str(r.depth)))
        attrs.append(("priority", str(r.priority)))
    else:
        if r.getter is not None:
            attrs.append(("getter", r.getter.full))
        if r.setter is not None:
            attrs.append(("setter", r.setter.full))
    return "<rule " + " ".join(f'{n}="{escape_attr(v)}"' for n, v in attrs) + "/>"


def _parse_int(text: str | None, what: str) -> int | None:
    if text is None:
        return None
    try:
        return int(text)
    except ValueError:
        raise MalformedRule(f"{what} {text!r} is not an integer") from None


def _parse_rule(el: ET.Element):
    a = el.attrib
    kind = RuleKind[a["kind"]]
    method = None
    if "method" in a:
        sig = a.get("sig", "")
        method = MethodSignature(a["method"], tuple(sig.split(",")) if sig else ())
    key = RuleKey(kind, a["class"], method, _parse_int(a.get("arg"), "arg"), a.get("field"))
    if kind in _CACHE_KINDS:
        getter = a.get("getter")
        setter = a.get("setter")
        return CacheRule(
            key,
            MethodSignature.parse(getter) if getter else None,
            MethodSignature.parse(setter) if setter else None,
        )
    return PolicyRule(
        key,
        PassingMechanism(a["mechanism"]),
        _parse_int(a.get("priority", "0"), "priority"),
        _parse_int(a.get("depth"), "depth"),
    )
