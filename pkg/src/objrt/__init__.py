"""Policy-aware distributed object runtime.

Plain objects are exposed as remotely callable services at run time, and a
rule-based transmission policy decides per marshalled object whether it
travels by value or by reference.
"""

from .errors import (
    DistributionError, MethodNotInRemoteType, NameTaken, NotFound, RemoteApplicationError, TypeMismatch,
)
from .node import FailureMode, Node, NodeConfig
from .policy import BY_REFERENCE, BY_VALUE, UNBOUNDED, PassingMechanism, TransmissionPolicyManager
from .registry import MethodSignature, RemoteType, ServiceAdaptor, catalog, remote_class
from .remoteref import ProxyHandle

__all__ = [
    "BY_REFERENCE", "BY_VALUE", "UNBOUNDED", "DistributionError", "FailureMode", "MethodNotInRemoteType",
    "MethodSignature", "NameTaken", "Node", "NodeConfig", "NotFound", "PassingMechanism", "ProxyHandle",
    "RemoteApplicationError", "RemoteType", "ServiceAdaptor", "TransmissionPolicyManager", "TypeMismatch",
    "catalog", "remote_class",
]
