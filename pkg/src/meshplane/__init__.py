"""A desk-scale data mesh control plane with federated computational governance."""

from .errors import MeshError

__version__ = "0.1.0"

__all__ = ["MeshError", "__version__"]
