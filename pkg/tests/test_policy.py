from __future__ import annotations

import random
import threading

import pytest

from objrt.errors import MalformedPolicyFile, MalformedRule
from objrt.policy import (
    BY_REFERENCE, BY_VALUE, UNBOUNDED, CacheRule, PolicyRule, RuleKey, RuleKind, TransmissionPolicyManager,
)
from objrt.registry import MethodSignature

from support import engine_resolve, manager_with, oracle_resolve, random_context, random_rule

M = MethodSignature.parse("m(X)")


def sig(text):
    return MethodSignature.parse(text)


# -- oracle equivalence ---------------------------------------------------------------

def test_matches_brute_force_oracle():
    rng = random.Random(7)
    for _ in range(2000):
        rules = [random_rule(rng) for _ in range(rng.randint(0, 20))]
        tpm = manager_with(rules)
        for _ in range(3):
            ctx = random_context(rng)
            assert engine_resolve(tpm, ctx) == oracle_resolve(rules, ctx), (rules, ctx)


def test_insertion_order_irrelevant():
    rng = random.Random(11)
    for _ in range(50):
        # distinct (key, priority) pairs, so no write can shadow another
        rules = list({(r.key, r.priority): r for r in (random_rule(rng) for _ in range(20))}.values())
        ctxs = [random_context(rng) for _ in range(10)]
        expected = [engine_resolve(manager_with(rules), c) for c in ctxs]
        for _ in range(10):
            rng.shuffle(rules)
            tpm = manager_with(rules)
            assert [engine_resolve(tpm, c) for c in ctxs] == expected


# -- contention scenario ----------------------------------------------------------------

@pytest.mark.parametrize("p1", range(4))
@pytest.mark.parametrize("p2", range(4))
def test_class_versus_method(p1, p2):
    tpm = TransmissionPolicyManager()
    tpm.set_class_policy("X", BY_VALUE, p1)
    tpm.set_method_policy("Svc", "m(X)", BY_REFERENCE, priority=p2)
    d = tpm.resolve_argument("Svc", M, 0, "X")
    assert d.mechanism is (BY_VALUE if p1 > p2 else BY_REFERENCE)
    assert d.winning_rule.key.kind is (RuleKind.CLASS if p1 > p2 else RuleKind.METHOD)


def test_argument_beats_method_at_equal_priority():
    tpm = TransmissionPolicyManager()
    tpm.set_method_policy("Svc", "m(X)", BY_REFERENCE, priority=2)
    tpm.set_argument_policy("Svc", "m(X)", 0, BY_VALUE, depth=3, priority=2)
    d = tpm.resolve_argument("Svc", M, 0, "X")
    assert (d.mechanism, d.remaining_depth) == (BY_VALUE, 3)
    assert tpm.resolve_argument("Svc", M, 1, "X").mechanism is BY_REFERENCE


def test_return_beats_class_at_equal_priority():
    tpm = TransmissionPolicyManager()
    tpm.set_class_policy("Key", BY_REFERENCE, 1)
    tpm.set_return_policy("Svc", "get()", BY_VALUE, priority=1)
    assert tpm.resolve_return("Svc", sig("get()"), "Key").mechanism is BY_VALUE
    # method rules never steer returns
    tpm.set_method_policy("Svc", "other()", BY_VALUE, priority=9)
    assert tpm.resolve_return("Svc", sig("other()"), "Key").mechanism is BY_REFERENCE


def test_defaults():
    tpm = TransmissionPolicyManager()
    a = tpm.resolve_argument("Svc", M, 0, "X")
    assert (a.mechanism, a.remaining_depth, a.winning_rule) == (BY_REFERENCE, UNBOUNDED, None)
    assert tpm.resolve_return("Svc", M, "X").mechanism is BY_REFERENCE
    n = tpm.resolve_nested("X")
    assert (n.mechanism, n.winning_rule) == (BY_VALUE, None)


def test_nested_sees_class_rules_only():
    tpm = TransmissionPolicyManager()
    tpm.set_method_policy("Svc", "m(X)", BY_REFERENCE, priority=5)
    tpm.set_class_policy("P2PNode", BY_REFERENCE)
    assert tpm.resolve_nested("X").mechanism is BY_VALUE
    assert tpm.resolve_nested("P2PNode").mechanism is BY_REFERENCE


def test_same_key_and_priority_replaces():
    tpm = TransmissionPolicyManager()
    tpm.set_class_policy("Key", BY_VALUE, 0)
    tpm.set_class_policy("Key", BY_REFERENCE, 0)
    assert tpm.resolve_nested("Key").mechanism is BY_REFERENCE
    assert len(tpm.rules()) == 1


def test_lower_priority_rule_is_kept_but_shadowed():
    tpm = TransmissionPolicyManager()
    tpm.set_class_policy("Key", BY_VALUE, 5)
    tpm.set_class_policy("Key", BY_REFERENCE, 1)
    assert tpm.resolve_nested("Key").mechanism is BY_VALUE
    assert len(tpm.rules()) == 2


def test_rules_match_owner_class():
    tpm = TransmissionPolicyManager()
    tpm.set_method_policy("Alpha", "m(X)", BY_VALUE)
    assert tpm.resolve_argument("Alpha", M, 0, "X").mechanism is BY_VALUE
    assert tpm.resolve_argument("Beta", M, 0, "X").mechanism is BY_REFERENCE


def test_evaluation_counter():
    tpm = TransmissionPolicyManager()
    tpm.resolve_argument("S", M, 0, "X")
    tpm.resolve_return("S", M, "X")
    tpm.resolve_nested("X")
    assert tpm.evaluations == 3


# -- rule validation -----------------------------------------------------------------

@pytest.mark.parametrize("build", [
    lambda: RuleKey(RuleKind.CLASS, "X", method=M),
    lambda: RuleKey(RuleKind.METHOD, "X"),
    lambda: RuleKey(RuleKind.ARGUMENT, "X", M),
    lambda: RuleKey(RuleKind.ARGUMENT, "X", M, -1),
    lambda: RuleKey(RuleKind.METHOD, "X", M, 0),
    lambda: RuleKey(RuleKind.FIELD_CACHE, "X"),
    lambda: RuleKey(RuleKind.CLASS, ""),
    lambda: RuleKey("C", "X"),
    lambda: PolicyRule(RuleKey(RuleKind.CLASS, "X"), BY_VALUE, 0, depth=2),
    lambda: PolicyRule(RuleKey(RuleKind.METHOD, "X", M), BY_VALUE, 0, depth=-1),
    lambda: PolicyRule(RuleKey(RuleKind.METHOD, "X", M), "by-value"),
    lambda: PolicyRule(RuleKey(RuleKind.FIELD_CACHE, "X", field="f"), BY_VALUE),
    lambda: CacheRule(RuleKey(RuleKind.FIELD_CACHE, "X", field="f")),
    lambda: CacheRule(RuleKey(RuleKind.METHOD_CACHE, "X", M), getter=M),
    lambda: CacheRule(RuleKey(RuleKind.CLASS, "X")),
])
def test_malformed_rules(build):
    with pytest.raises(MalformedRule):
        build()


def test_set_rule_type_checked():
    with pytest.raises(MalformedRule):
        TransmissionPolicyManager().set_rule("C:X")


def test_key_text_forms():
    assert str(RuleKey(RuleKind.CLASS, "Key")) == "C:Key"
    assert str(RuleKey(RuleKind.METHOD, "P2PNode", sig("route(Key,Message)"))) == "M:P2PNode#route(Key,Message)"
    assert str(RuleKey(RuleKind.RETURN, "P2PNode", sig("getKey()"))) == "R:P2PNode#getKey()"
    assert str(RuleKey(RuleKind.ARGUMENT, "P2PNode", sig("route(Key,Message)"), 1)) == "A:P2PNode#route(Key,Message)#1"
    assert str(RuleKey(RuleKind.FIELD_CACHE, "P2PNode", field="key")) == "F:P2PNode.key"
    assert str(RuleKey(RuleKind.METHOD_CACHE, "Shape", sig("area()"))) == "MC:Shape#area()"


# -- cache rules -------------------------------------------------------------------

def test_cached_members():
    tpm = TransmissionPolicyManager()
    tpm.set_field_to_cache("P2PNode", "key", "getKey()->Key")
    tpm.set_field_to_cache("P2PNode", "name", "getName()->text", "setName(text)->void")
    tpm.set_method_to_cache("P2PNode", "describe()->text")
    fields, methods = tpm.cached_members("P2PNode")
    assert [f.key.field for f in fields] == ["key", "name"]
    assert fields[1].setter == sig("setName(text)")
    assert methods == [sig("describe()")]
    assert tpm.cached_members("Nobody") == ([], [])


def test_field_cache_needs_getter():
    with pytest.raises(MalformedRule):
        TransmissionPolicyManager().set_field_to_cache("P2PNode", "key", None)


# -- persistence -----------------------------------------------------------------

CANONICAL = (
    '<policy>'
    '<rule kind="CLASS" class="Key" mechanism="by-value" priority="0"/>'
    '<rule kind="METHOD" class="P2PNode" method="route" sig="Key,Message" mechanism="by-reference" depth="2" priority="1"/>'
    '<rule kind="RETURN" class="P2PNode" method="getKey" sig="" mechanism="by-value" priority="0"/>'
    '<rule kind="ARGUMENT" class="P2PNode" method="route" sig="Key,Message" arg="1" mechanism="by-reference" priority="3"/>'
    '<rule kind="FIELD_CACHE" class="P2PNode" field="key" getter="getKey()-&gt;Key"/>'
    '<rule kind="METHOD_CACHE" class="Shape" method="area" sig="" />'
    '</policy>'
)


def test_load_single_class_rule():
    tpm = TransmissionPolicyManager()
    tpm.load_rules(b'<policy><rule kind="CLASS" class="Key" mechanism="by-value" priority="0"/></policy>')
    (rule,) = tpm.rules()
    assert rule == PolicyRule(RuleKey(RuleKind.CLASS, "Key"), BY_VALUE, 0)


def test_store_load_round_trip():
    a = TransmissionPolicyManager()
    a.load_rules(CANONICAL.encode())
    stored = a.store_rules()
    b = TransmissionPolicyManager()
    b.load_rules(stored)
    assert b.store_rules() == stored
    assert b.rules() == a.rules()
    assert len(a.rules()) == 6


def test_random_round_trip():
    rng = random.Random(3)
    for _ in range(200):
        a = manager_with([random_rule(rng) for _ in range(rng.randint(0, 20))])
        b = TransmissionPolicyManager()
        b.load_rules(a.store_rules())
        assert b.store_rules() == a.store_rules()


def test_empty_policy_is_noop():
    tpm = TransmissionPolicyManager()
    tpm.set_class_policy("Key", BY_VALUE)
    tpm.load_rules(b"<policy/>")
    assert len(tpm.rules()) == 1
    assert TransmissionPolicyManager().store_rules() == b"<policy/>"


def test_load_merges_with_replacement():
    tpm = TransmissionPolicyManager()
    tpm.set_class_policy("Key", BY_REFERENCE, 0)
    tpm.load_rules(b'<policy><rule kind="CLASS" class="Key" mechanism="by-value" priority="0"/></policy>')
    assert tpm.resolve_nested("Key").mechanism is BY_VALUE


@pytest.mark.parametrize("doc", [
    b"<policy>",
    b"<rules/>",
    b"<policy><oops/></policy>",
    b'<policy><rule kind="NOPE" class="K"/></policy>',
    b'<policy><rule kind="CLASS" class="K" mechanism="sideways"/></policy>',
    b'<policy><rule kind="CLASS" class="K" mechanism="by-value" priority="high"/></policy>',
    b'<policy><rule kind="CLASS" class="K" mechanism="by-value" depth="2"/></policy>',
    b'<policy><rule kind="ARGUMENT" class="K" method="m" sig="" mechanism="by-value"/></policy>',
    b'<policy><rule kind="FIELD_CACHE" class="K" field="f"/></policy>',
])
def test_malformed_policy_files(doc):
    tpm = TransmissionPolicyManager()
    with pytest.raises(MalformedPolicyFile):
        tpm.load_rules(doc)
    assert tpm.rules() == []  # nothing partially applied


# -- concurrency -----------------------------------------------------------------

def test_concurrent_writers_and_readers():
    tpm = TransmissionPolicyManager()
    errors = []

    def writer(p):
        for i in range(200):
            tpm.set_class_policy(f"C{i % 7}", BY_VALUE if i % 2 else BY_REFERENCE, p)

    def reader():
        try:
            for _ in range(2000):
                tpm.resolve_argument("S", M, 0, "C3")
        except Exception as e:  # pragma: no cover - only on failure
            errors.append(e)

    threads = [threading.Thread(target=writer, args=(p,)) for p in range(4)]
    threads += [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(tpm.rules()) == 7 * 4
