from __future__ import annotations

import threading

import pytest

from objrt.apps.p2p import IMANAGE, IMONITOR, IP2PNODE, Key, P2PNode
from objrt.errors import NameTaken, NotFound, TypeMismatch
from objrt.registry import (
    MethodSignature, Registry, RemoteType, ServiceAdaptor, TypeCatalog, catalog, check_structural_compliance,
    is_guid, new_guid,
)

from support import Box, Counter


def node_adaptor(node=None):
    node = node or P2PNode(Key("ab" * 20))
    return catalog.spec_for(node).adaptor(node)


# -- signatures and types --------------------------------------------------------

def test_signature_identity_ignores_return_type():
    a = MethodSignature.parse("route(Key,Message)->void")
    b = MethodSignature.parse("route(Key, Message)->i32")
    assert a == b and hash(a) == hash(b)
    assert a != MethodSignature.parse("route(Message,Key)")
    assert str(a) == "route(Key,Message)" and a.full == "route(Key,Message)->void"


@pytest.mark.parametrize("text", ["", "route", "1x()", "f(a b)", "f()->", "f(a.)"])
def test_bad_signatures(text):
    with pytest.raises(ValueError):
        MethodSignature.parse(text)


def test_remote_type_rejects_duplicates():
    with pytest.raises(ValueError):
        RemoteType("T", ["a()->i32", "a()->void"])


def test_remote_type_equality_is_by_name_and_signature_set():
    assert RemoteType("T", ["a()", "b(i32)"]) == RemoteType("T", ["b(i32)", "a()"])
    assert RemoteType("T", ["a()"]) != RemoteType("U", ["a()"])


def test_guids():
    g = new_guid()
    assert len(g) == 40 and is_guid(g) and g == g.lower()
    assert new_guid() != g
    assert not is_guid("P2P")


# -- structural compliance ---------------------------------------------------------

def test_compliance():
    a = node_adaptor()
    assert check_structural_compliance(a, IP2PNODE) == []
    assert check_structural_compliance(a, RemoteType("Empty")) == []
    fly = MethodSignature.parse("fly()")
    assert check_structural_compliance(a, RemoteType("Bird", [fly])) == [fly]


# -- expose and lookup --------------------------------------------------------------

def test_three_views_over_one_object():
    reg = Registry()
    a = node_adaptor()
    records = [reg.expose(a, IMANAGE, "Manage"), reg.expose(a, IMONITOR, "Monitor"), reg.expose(a, IP2PNODE, "P2P")]
    assert len({r.guid for r in records}) == 3
    assert all(r.adaptor.underlying is a.underlying for r in records)
    assert reg.lookup("P2P").remote_type == IP2PNODE
    for r in records:
        assert reg.lookup(r.guid) is r and reg.lookup(r.name) is r


def test_absent_type_is_full_dispatch_table():
    reg = Registry()
    a = node_adaptor()
    rec = reg.expose(a, None, "X")
    assert set(rec.remote_type.methods) == set(a.dispatch)
    assert rec.remote_type.name == "P2PNode"


def test_name_taken():
    reg = Registry()
    reg.expose(node_adaptor(), IMANAGE, "Manage")
    with pytest.raises(NameTaken):
        reg.expose(node_adaptor(), IMANAGE, "Manage")


def test_type_mismatch_lists_missing():
    reg = Registry()
    with pytest.raises(TypeMismatch) as e:
        reg.expose(node_adaptor(), RemoteType("Bird", ["fly()", "getKey()"]), "B")
    assert e.value.missing == [MethodSignature.parse("fly()")]
    with pytest.raises(NotFound):
        reg.lookup("B")


@pytest.mark.parametrize("name", ["", "a/b", "a?b", " pad", "ab" * 20])
def test_unusable_names(name):
    with pytest.raises(ValueError):
        Registry().expose(node_adaptor(), None, name)


def test_lookup_not_found():
    with pytest.raises(NotFound):
        Registry().lookup("nope")


def test_expose_does_not_touch_object():
    node = P2PNode(Key("cd" * 20))
    before = dict(vars(node))
    Registry().expose(node_adaptor(node), IP2PNODE, "P2P")
    assert vars(node) == before


def test_exposing_does_not_mutate_adaptor():
    a = node_adaptor()
    snapshot = dict(a.dispatch)
    Registry().expose(a, IMANAGE, "M")
    assert a.dispatch == snapshot


# -- automatic exposure -------------------------------------------------------------

def test_auto_expose_is_idempotent_and_named_by_guid():
    reg = Registry()
    node = P2PNode(Key("ef" * 20))
    r1 = reg.auto_expose(node_adaptor(node))
    r2 = reg.auto_expose(node_adaptor(node))
    assert r1 is r2 and r1.name == r1.guid and r1.automatic
    assert reg.lookup(r1.guid) is r1


def test_auto_expose_uses_association_newest_wins():
    reg = Registry()
    reg.associate_class_with_remote_type("P2PNode", IMANAGE)
    reg.associate_class_with_remote_type("P2PNode", IP2PNODE)
    assert reg.auto_expose(node_adaptor()).remote_type == IP2PNODE


def test_auto_expose_without_association_uses_full_type():
    rec = Registry().auto_expose(node_adaptor())
    assert rec.remote_type.name == "P2PNode" and len(rec.remote_type.methods) == 6


def test_auto_expose_noncompliant_association():
    reg = Registry()
    reg.associate_class_with_remote_type("P2PNode", RemoteType("Bird", ["fly()"]))
    with pytest.raises(TypeMismatch):
        reg.auto_expose(node_adaptor())


def test_different_objects_get_different_records():
    reg = Registry()
    assert reg.auto_expose(node_adaptor()).guid != reg.auto_expose(node_adaptor()).guid


def test_maps_agree():
    reg = Registry()
    reg.expose(node_adaptor(), IMANAGE, "Manage")
    reg.auto_expose(node_adaptor())
    for r in reg.records():
        assert reg.lookup(r.name) is r and reg.lookup(r.guid) is r


def test_concurrent_auto_expose_single_record():
    reg = Registry()
    node = P2PNode(Key("12" * 20))
    out = []
    threads = [threading.Thread(target=lambda: out.append(reg.auto_expose(node_adaptor(node))))
               for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len({r.guid for r in out}) == 1
    assert len(reg.records()) == 1


# -- adaptors ------------------------------------------------------------------------

def test_hand_written_adaptor():
    state = {"n": 1}
    sig = MethodSignature.parse("twice(i32)->i32")
    a = ServiceAdaptor(state, "Dict", {sig: lambda x: 2 * x}, {"n": (lambda: state["n"], None)})
    rec = Registry().expose(a, None, "D")
    assert rec.adaptor.invoke(sig, [21]) == 42
    assert a.field_accessors["n"][0]() == 1


def test_accessors_derived_from_get_set_pairs():
    spec = catalog.spec_named("Counter")
    assert spec.accessors["count"] == ("getCount", "setCount")
    c = Counter(3)
    getter, setter = spec.adaptor(c).field_accessors["count"]
    setter(9)
    assert getter() == 9 == c.count


def test_getter_without_setter():
    assert catalog.spec_named("Box").accessors == {"v": ("getV", "setV")}
    assert catalog.spec_named("P2PNode").accessors == {"key": ("getKey", None), "log": ("getLog", None)}


def test_spec_lookup_walks_mro():
    class SubBox(Box):
        pass

    assert catalog.spec_for(SubBox()).name == "Box"
    assert catalog.spec_for(object()) is None


def test_private_catalog():
    cat = TypeCatalog()

    @cat.remote_class("Thing", methods=["ping()->text"])
    class Thing:
        def ping(self):
            return "pong"

    assert cat.spec_named("Thing") and catalog.spec_named("Thing") is None
    assert cat.class_name(Thing) == "Thing" and cat.class_name("Other") == "Other"
    rt = cat.define_remote_type("IThing", "ping()->text")
    assert cat.remote_type_named("IThing") is rt
