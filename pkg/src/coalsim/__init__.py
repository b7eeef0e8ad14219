"""Coalition digital-twin orchestration and network-slicing simulator."""

__version__ = "0.1.0"

from .resources import ResourceVector, resource_add, resource_leq, resource_sub
from .topology import CoalitionTopology, Domain, LinkSpec, NodeSpec, Tier, validate_topology, widest_path

__all__ = [
    "__version__",
    "ResourceVector",
    "resource_add",
    "resource_sub",
    "resource_leq",
    "CoalitionTopology",
    "Domain",
    "LinkSpec",
    "NodeSpec",
    "Tier",
    "validate_topology",
    "widest_path",
]
