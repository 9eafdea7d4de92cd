"""Exception hierarchy for the runtime.

Every error carries a short ``code`` string so callers and wire faults can
refer to a failure without matching on class names.
"""

from __future__ import annotations


class ObjrtError(Exception):
    code = "ERROR"


# wire

class WireError(ObjrtError):
    code = "MALFORMED"


class Malformed(WireError):
    code = "MALFORMED"


class DanglingBackref(WireError):
    code = "DANGLING_BACKREF"


# registry

class RegistryError(ObjrtError):
    pass


class NameTaken(RegistryError):
    code = "NAME_TAKEN"


class TypeMismatch(RegistryError):
    code = "TYPE_MISMATCH"

    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class NotFound(RegistryError, LookupError):
    code = "NOT_FOUND"


# policy

class PolicyError(ObjrtError):
    pass


class MalformedRule(PolicyError, ValueError):
    code = "MALFORMED_RULE"


class MalformedPolicyFile(PolicyError):
    code = "MALFORMED_POLICY_FILE"


# remote references and proxies

class RemoteRefError(ObjrtError):
    pass


class AccessorMissing(RemoteRefError):
    code = "ACCESSOR_MISSING"


class MethodNotInRemoteType(RemoteRefError, AttributeError):
    code = "METHOD_NOT_IN_REMOTE_TYPE"


class NoLocalImpl(RemoteRefError):
    code = "NO_LOCAL_IMPL"


# marshalling

class MarshalError(ObjrtError):
    pass


class Unadaptable(MarshalError, TypeError):
    code = "UNADAPTABLE"


class UnknownType(MarshalError):
    code = "UNKNOWN_TYPE"


# calls

class DistributionError(ObjrtError, RuntimeError):
    """Unchecked failure of the distribution layer (never an application fault)."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


class RemoteApplicationError(ObjrtError):
    """An exception raised by the remote application object, re-raised locally."""

    code = "APP_FAULT"

    def __init__(self, type_name: str, message: str):
        super().__init__(f"{type_name}: {message}")
        self.type_name = type_name
        self.message = message
