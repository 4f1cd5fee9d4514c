"""Articulated-object generation: trees of part tokens, an SDF shape prior and a tree transformer."""
from .tree import ArticTree, PartNode, pack_token, unpack_token, validate_tree

__all__ = ["ArticTree", "PartNode", "pack_token", "unpack_token", "validate_tree"]
__version__ = "0.1.0"
