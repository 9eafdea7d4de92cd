"""Service map, remote types and service adaptors.

Objects become services by wrapping them in a :class:`ServiceAdaptor`: a
dispatch table from :class:`MethodSignature` to a bound callable, plus named
field accessors.  Adaptors are normally produced from a :class:`ClassSpec`
registered in a :class:`TypeCatalog` (see :func:`remote_class`), but may be
assembled by hand.
"""

from __future__ import annotations

import dataclasses
import re
import secrets
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .errors import NameTaken, NotFound, TypeMismatch

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
DOTTED_RE = re.compile(rf"^{_IDENT}(?:\.{_IDENT})*$")
GUID_RE = re.compile(r"^[0-9a-f]{40}$")
_SIG_RE = re.compile(rf"^\s*({_IDENT})\s*\((.*)\)\s*(?:->\s*(\S+))?\s*$")

PRIMITIVE_TYPES = ("i32", "i64", "f64", "bool", "text", "void")


def is_guid(text: str) -> bool:
    return bool(GUID_RE.match(text))


def new_guid() -> str:
    """Fresh random 160-bit identifier as 40 lowercase hex chars."""
    return secrets.token_hex(20)


def _check_dotted(name: str, what: str) -> str:
    if not isinstance(name, str) or not DOTTED_RE.match(name):
        raise ValueError(f"{what} must be a dotted identifier, got {name!r}")
    return name


@dataclass(frozen=True, eq=False)
class MethodSignature:
    """Name plus ordered parameter types; the return type is not part of identity."""

    name: str
    params: tuple[str, ...] = ()
    returns: str = "void"

    def __post_init__(self):
        if not re.fullmatch(_IDENT, self.name or ""):
            raise ValueError(f"bad method name {self.name!r}")
        object.__setattr__(self, "params", tuple(self.params))
        for p in self.params:
            _check_dotted(p, "parameter type")
        _check_dotted(self.returns, "return type")
        object.__setattr__(self, "_hash", hash((self.name, self.params)))

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, MethodSignature):
            return NotImplemented
        return self.name == other.name and self.params == other.params

    def __hash__(self):
        return self._hash

    @classmethod
    def parse(cls, text: "str | MethodSignature") -> "MethodSignature":
        """Parse ``name(p1,p2)`` or ``name(p1,p2)->ret``."""
        if isinstance(text, MethodSignature):
            return text
        m = _SIG_RE.match(text)
        if not m:
            raise ValueError(f"bad method signature {text!r}")
        name, params, ret = m.groups()
        plist = tuple(p.strip() for p in params.split(",")) if params.strip() else ()
        return cls(name, plist, ret or "void")

    @property
    def param_text(self) -> str:
        return ",".join(self.params)

    @property
    def full(self) -> str:
        return f"{self}->{self.returns}"

    def __str__(self) -> str:
        return f"{self.name}({self.param_text})"


class RemoteType:
    """A named set of method signatures: the view a service presents."""

    __slots__ = ("name", "methods", "_index", "_hash")

    def __init__(self, name: str, methods: Iterable["MethodSignature | str"] = ()):
        self.name = _check_dotted(name, "remote type name")
        sigs = tuple(MethodSignature.parse(m) for m in methods)
        index = {}
        for s in sigs:
            if s in index:
                raise ValueError(f"duplicate signature {s} in remote type {name}")
            index[s] = s
        self.methods = sigs
        self._index = index
        self._hash = hash((self.name, frozenset(index)))

    @classmethod
    def of(cls, name: str, *methods: "MethodSignature | str") -> "RemoteType":
        return cls(name, methods)

    def get(self, sig: MethodSignature) -> MethodSignature | None:
        """The member equal to ``sig`` (carrying its declared return type), if any."""
        return self._index.get(sig)

    def __contains__(self, sig) -> bool:
        return sig in self._index

    def by_name(self, name: str) -> list[MethodSignature]:
        return [s for s in self.methods if s.name == name]

    def __eq__(self, other):
        if not isinstance(other, RemoteType):
            return NotImplemented
        return self.name == other.name and self._index.keys() == other._index.keys()

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"RemoteType({self.name!r}, [{', '.join(s.full for s in self.methods)}])"


@dataclass
class ServiceAdaptor:
    underlying: Any
    real_class: str
    dispatch: dict[MethodSignature, Callable[..., Any]]
    field_accessors: dict[str, tuple[Callable[[], Any], Callable[[Any], None] | None]] = (
        field(default_factory=dict)
    )

    def invoke(self, sig: MethodSignature, args: list) -> Any:
        return self.dispatch[sig](*args)

    def full_remote_type(self) -> RemoteType:
        return RemoteType(self.real_class, self.dispatch.keys())


@dataclass
class ClassSpec:
    """How one application class is exposed and copied.

    ``methods`` maps signatures to attribute names on the instance,
    ``accessors`` maps field names to (getter, setter) attribute names, and
    ``fields`` lists the attributes copied when an instance travels by value
    (``None`` means: dataclass fields, else the instance ``__dict__``).
    """

    cls: type
    name: str
    methods: dict[MethodSignature, str] = field(default_factory=dict)
    accessors: dict[str, tuple[str, str | None]] = field(default_factory=dict)
    fields: tuple[str, ...] | None = None
    factory: Callable[..., Any] | None = None

    def value_fields(self, obj) -> list[str]:
        if self.fields is not None:
            return list(self.fields)
        if dataclasses.is_dataclass(obj):
            return [f.name for f in dataclasses.fields(obj)]
        return list(vars(obj))

    def adaptor(self, obj) -> ServiceAdaptor:
        dispatch = {sig: getattr(obj, attr) for sig, attr in self.methods.items()}
        accessors = {}
        for fname, (getter, setter) in self.accessors.items():
            accessors[fname] = (getattr(obj, getter), getattr(obj, setter) if setter else None)
        return ServiceAdaptor(obj, self.name, dispatch, accessors)

    def remote_type(self) -> RemoteType:
        rt = self.__dict__.get("_rt")
        if rt is None:
            rt = self.__dict__["_rt"] = RemoteType(self.name, self.methods)
        return rt


class TypeCatalog:
    """Class specs indexed by Python class and by wire type name."""

    def __init__(self):
        self._by_cls: dict[type, ClassSpec] = {}
        self._by_name: dict[str, ClassSpec] = {}
        self._remote_types: dict[str, RemoteType] = {}

    def register(self, spec: ClassSpec) -> ClassSpec:
        _check_dotted(spec.name, "class name")
        self._by_cls[spec.cls] = spec
        self._by_name[spec.name] = spec
        return spec

    def remote_class(
        self,
        name: str | None = None,
        methods: Iterable[str] = (),
        accessors: Mapping[str, tuple[str, str | None]] | None = None,
        fields: Iterable[str] | None = None,
        factory: Callable[..., Any] | None = None,
    ):
        """Class decorator registering a :class:`ClassSpec`.

        ``methods`` are signature strings whose names are the instance
        attributes to call.  When ``accessors`` is omitted, zero-argument
        ``getX`` methods (and matching one-argument ``setX``) become accessors
        of field ``x``.
        """

        def deco(cls):
            sigs = {}
            for text in methods:
                sig = MethodSignature.parse(text)
                sigs[sig] = sig.name
            acc = dict(accessors) if accessors is not None else _derive_accessors(sigs)
            self.register(ClassSpec(
                cls=cls,
                name=name or cls.__name__,
                methods=sigs,
                accessors=acc,
                fields=tuple(fields) if fields is not None else None,
                factory=factory,
            ))
            return cls

        return deco

    def spec_for(self, obj) -> ClassSpec | None:
        for klass in type(obj).__mro__:
            spec = self._by_cls.get(klass)
            if spec is not None:
                return spec
        return None

    def spec_named(self, name: str) -> ClassSpec | None:
        return self._by_name.get(name)

    def class_name(self, cls_or_name) -> str:
        if isinstance(cls_or_name, str):
            return cls_or_name
        spec = self._by_cls.get(cls_or_name)
        return spec.name if spec else cls_or_name.__name__

    def define_remote_type(self, name: str, *methods: str) -> RemoteType:
        rt = RemoteType(name, methods)
        self._remote_types[name] = rt
        return rt

    def remote_type_named(self, name: str) -> RemoteType | None:
        return self._remote_types.get(name)


def _derive_accessors(sigs: Mapping[MethodSignature, str]) -> dict[str, tuple[str, str | None]]:
    out = {}
    setters = {s.name for s in sigs if s.name.startswith("set") and len(s.params) == 1}
    for s in sigs:
        if s.name.startswith("get") and len(s.name) > 3 and not s.params:
            stem = s.name[3:]
            fname = stem[0].lower() + stem[1:]
            setter = "set" + stem
            out[fname] = (s.name, setter if setter in setters else None)
    return out


catalog = TypeCatalog()
remote_class = catalog.remote_class


@dataclass(frozen=True)
class ServiceRecord:
    guid: str
    name: str
    remote_type: RemoteType
    adaptor: ServiceAdaptor
    automatic: bool = False


def check_structural_compliance(adaptor: ServiceAdaptor, remote_type: RemoteType) -> list[MethodSignature]:
    """Signatures of ``remote_type`` that the adaptor cannot dispatch; empty means compliant."""
    return [s for s in remote_type.methods if s not in adaptor.dispatch]


class Registry:
    """Maps service names and GUIDs to records.

    Mutations are serialised by a lock; lookups read plain dicts, and a
    record is inserted into both maps before ``expose`` returns.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._by_name: dict[str, ServiceRecord] = {}
        self._by_guid: dict[str, ServiceRecord] = {}
        self._auto: dict[tuple[int, RemoteType], ServiceRecord] = {}
        self._assoc: dict[str, RemoteType] = {}

    def expose(self, adaptor: ServiceAdaptor, remote_type: RemoteType | None, name: str) -> ServiceRecord:
        if not name or not isinstance(name, str):
            raise ValueError("service name must be a non-empty string")
        if is_guid(name):
            raise ValueError("service names may not have the shape of a GUID")
        if "/" in name or "?" in name or name.strip() != name:
            raise ValueError(f"service name {name!r} is not usable in a URL path")
        rt = remote_type if remote_type is not None else adaptor.full_remote_type()
        missing = check_structural_compliance(adaptor, rt)
        if missing:
            raise TypeMismatch(
                f"{adaptor.real_class} lacks {', '.join(map(str, missing))} of {rt.name}", missing
            )
        with self._lock:
            if name in self._by_name:
                raise NameTaken(name)
            record = ServiceRecord(self._fresh_guid(), name, rt, adaptor)
            self._by_name[name] = record
            self._by_guid[record.guid] = record
        return record

    def _fresh_guid(self) -> str:
        while True:
            guid = new_guid()
            if guid not in self._by_guid:
                return guid

    def lookup(self, key: str) -> ServiceRecord:
        record = self._by_name.get(key) or self._by_guid.get(key)
        if record is None:
            raise NotFound(key)
        return record

    def associate_class_with_remote_type(self, class_name: str, remote_type: RemoteType) -> None:
        with self._lock:
            self._assoc[class_name] = remote_type

    def associated_type(self, class_name: str) -> RemoteType | None:
        return self._assoc.get(class_name)

    def auto_expose(self, adaptor: ServiceAdaptor, full_type: RemoteType | None = None) -> ServiceRecord:
        """Expose on demand under a generated name; idempotent per object and view.

        ``full_type`` may pass a precomputed full dispatch view of the adaptor.
        """
        rt = self._assoc.get(adaptor.real_class) or full_type or adaptor.full_remote_type()
        key = (id(adaptor.underlying), rt)
        record = self._auto.get(key)
        if record is not None:
            return record
        missing = check_structural_compliance(adaptor, rt)
        if missing:
            raise TypeMismatch(
                f"{adaptor.real_class} lacks {', '.join(map(str, missing))} of {rt.name}", missing
            )
        with self._lock:
            record = self._auto.get(key)
            if record is None:
                guid = self._fresh_guid()
                record = ServiceRecord(guid, guid, rt, adaptor, automatic=True)
                self._auto[key] = record
                self._by_name[guid] = record
                self._by_guid[guid] = record
        return record

    def records(self) -> list[ServiceRecord]:
        return list(self._by_guid.values())
