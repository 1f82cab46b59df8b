"""Token-level prefix trie over a name list."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

from .core import NameList, TokenSeq


@dataclass
class TrieNode:
    children: Dict[int, "TrieNode"] = field(default_factory=dict)
    name_index: Optional[int] = None
    depth: int = 0

    @property
    def accepting(self) -> bool:
        return self.name_index is not None


@dataclass(frozen=True)
class TrieCursor:
    node: TrieNode = field(compare=False, hash=False)
    path: TokenSeq = ()

    @property
    def depth(self) -> int:
        return len(self.path)


class NameTrie:
    """Prefix trie keyed by surface token ids.

    ``names`` holds the deduplicated name list; accepting nodes store the
    index of their name in it.
    """

    def __init__(self, names: Sequence[TokenSeq] = ()):
        self.root = TrieNode()
        self.names: List[TokenSeq] = []
        for name in names:
            self._add(tuple(name))

    @classmethod
    def build(cls, names: NameList) -> "NameTrie":
        return cls(names.names)

    def _add(self, name: TokenSeq) -> None:
        if not name:
            raise ValueError("empty name")
        node = self.root
        for tok in name:
            if tok < 0:
                raise ValueError(f"name {name} contains non-surface id {tok}")
            node = node.children.setdefault(tok, TrieNode(depth=node.depth + 1))
        if node.name_index is None:
            node.name_index = len(self.names)
            self.names.append(name)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def empty(self) -> bool:
        return not self.names

    def start(self) -> TrieCursor:
        return TrieCursor(self.root, ())

    def step(self, cursor: TrieCursor, token: int) -> Optional[TrieCursor]:
        """Child cursor along ``token``, or None at a dead end."""
        child = cursor.node.children.get(token)
        if child is None:
            return None
        return TrieCursor(child, cursor.path + (token,))

    def allowed_tokens(self, cursor: TrieCursor) -> FrozenSet[int]:
        return frozenset(cursor.node.children)

    def is_accepting(self, cursor: TrieCursor) -> Tuple[bool, Optional[int]]:
        return cursor.node.accepting, cursor.node.name_index

    def walk(self, tokens: Sequence[int]) -> Optional[TrieCursor]:
        cur: Optional[TrieCursor] = self.start()
        for tok in tokens:
            cur = self.step(cur, tok)
            if cur is None:
                return None
        return cur

    def contains(self, tokens: Sequence[int]) -> bool:
        cur = self.walk(tokens)
        return cur is not None and cur.node.accepting

    def accepted(self) -> Iterator[TokenSeq]:
        """Every accepted token sequence, depth-first."""
        stack = [(self.root, ())]
        while stack:
            node, path = stack.pop()
            if node.accepting:
                yield path
            for tok in sorted(node.children, reverse=True):
                stack.append((node.children[tok], path + (tok,)))

    def longest_matches(self, tokens: Sequence[int]) -> List[Tuple[int, int, int]]:
        """Non-overlapping ``(start, end, name_index)`` occurrences, scanning
        left to right and preferring the longest name at each position."""
        out = []
        i = 0
        while i < len(tokens):
            node = self.root
            best = None
            j = i
            while j < len(tokens):
                node = node.children.get(tokens[j])
                if node is None:
                    break
                j += 1
                if node.accepting:
                    best = (i, j, node.name_index)
            if best is None:
                i += 1
            else:
                out.append(best)
                i = best[1]
        return out
