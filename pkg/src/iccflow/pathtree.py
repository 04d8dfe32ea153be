"""Binary load-path tree: node ids are axis-label prefix strings."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from .errors import InvalidArgumentError

ALPHABET = ("A", "B")


def _check_id(node: str) -> str:
    if not isinstance(node, str) or any(c not in ALPHABET for c in node):
        raise InvalidArgumentError(f"node id must be a string over {ALPHABET}, got {node!r}")
    return node


@dataclass(frozen=True)
class LoadPathTree:
    """Depth-``depth`` binary tree; the root is the empty prefix ``""``."""

    depth: int = 5

    def __post_init__(self):
        if self.depth < 1:
            raise InvalidArgumentError("tree depth must be at least 1")

    @property
    def node_count(self) -> int:
        return 2 ** (self.depth + 1) - 1

    def children(self, prefix: str) -> tuple[str, str]:
        """The two successor nodes ``prefix + 'A'`` and ``prefix + 'B'``."""
        _check_id(prefix)
        if len(prefix) >= self.depth:
            raise InvalidArgumentError(f"node {prefix!r} is a leaf of a depth-{self.depth} tree")
        return prefix + "A", prefix + "B"

    def nodes(self, root: str = "") -> list[str]:
        """Every node of the subtree under ``root`` (inclusive), in depth-first order."""
        _check_id(root)
        if len(root) > self.depth:
            raise InvalidArgumentError(f"node {root!r} is deeper than the tree")
        out = [root]
        if len(root) < self.depth:
            for c in self.children(root):
                out.extend(self.nodes(c))
        return out

    def paths(self, first_fixed: str | None = "A") -> list[str]:
        return enumerate_paths(self.depth, first_fixed)


def children(prefix: str, depth: int = 5) -> tuple[str, str]:
    return LoadPathTree(depth).children(prefix)


def enumerate_paths(T: int, first_fixed: str | None = "A") -> list[str]:
    """All length-``T`` paths starting with ``first_fixed``, lexicographically sorted."""
    if T < 1:
        raise InvalidArgumentError("path length must be at least 1")
    if first_fixed is None:
        return ["".join(p) for p in product(ALPHABET, repeat=T)]
    if first_fixed not in ALPHABET:
        raise InvalidArgumentError(f"first step must be one of {ALPHABET}")
    return [first_fixed + "".join(p) for p in product(ALPHABET, repeat=T - 1)]


def prefixes(path: str) -> list[str]:
    """Non-root prefixes of ``path`` in order, i.e. the visited tree nodes."""
    _check_id(path)
    return [path[:t] for t in range(1, len(path) + 1)]


def node_to_index(node: str) -> tuple[int, int]:
    """Encode a node as (depth, index) with A = 0, B = 1 read as binary digits."""
    _check_id(node)
    return len(node), int(node.replace("A", "0").replace("B", "1"), 2) if node else 0


def index_to_node(depth: int, index: int) -> str:
    if depth < 0 or not 0 <= index < 2 ** depth:
        raise InvalidArgumentError(f"invalid (depth, index) = ({depth}, {index})")
    if depth == 0:
        return ""
    return format(index, f"0{depth}b").replace("0", "A").replace("1", "B")
