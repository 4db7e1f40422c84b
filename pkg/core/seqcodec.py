
"""BFS serialization of junction trees with a position alphabet.

Decoding semantics of a position case for node k (precursor k-1, whose father
is f):

    0  father is the precursor itself
    c  father is f + (c - 1)      (c >= 1)

so the base alphabet {0, 1, 2, 3} covers a father advance of at most 2.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

from core.errors import DanglingPosition, EmptyTree, MissingEOS, UnencodableTree
from core.jtree import JunctionTree, TreeEdge, Vocabulary

logger = logging.getLogger(__name__)

BASE_ALPHABET = 4


class Token(NamedTuple):
    junction_id: int
    case: int


@dataclass(frozen=True)
class TokenSeq:
    items: Tuple[Token, ...]
    terminated: bool = True
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.items)

    @property
    def ids(self) -> List[int]:
        return [item.junction_id for item in self.items]

    @property
    def cases(self) -> List[int]:
        return [item.case for item in self.items]

    def prediction_count(self) -> int:
        """Junction predictions plus position predictions needed to rebuild the tree."""
        return 2 * len(self.items) - 1 if self.items else 0


@dataclass(frozen=True)
class BfsPermutation:
    order: Tuple[int, ...]
    father: Tuple[Optional[int], ...]


class CoverageReport(NamedTuple):
    fraction: float
    max_advance: int
    n_trees: int


# ------------------------------------------------------------------
# Ordering
# ------------------------------------------------------------------

def _root(jt: JunctionTree) -> int:
    if all(node.anchor_rank is not None for node in jt.nodes):
        return min(range(len(jt.nodes)), key=lambda i: (jt.nodes[i].anchor_rank, jt.nodes[i].smiles, i))
    return 0


def bfs_order(jt: JunctionTree) -> BfsPermutation:
    if not jt.nodes:
        raise EmptyTree("Cannot order an empty junction tree")
    root = _root(jt)
    position = {root: 0}
    order = [root]
    father: List[Optional[int]] = [None]
    queue = deque([root])
    while queue:
        node = queue.popleft()
        children = [nbr for nbr in jt.neighbors(node) if nbr not in position]
        for child in sorted(children, key=lambda i: (jt.nodes[i].smiles, i)):
            position[child] = len(order)
            order.append(child)
            father.append(position[node])
            queue.append(child)
    if len(order) != len(jt.nodes):
        raise UnencodableTree("Junction tree is not connected")
    return BfsPermutation(order=tuple(order), father=tuple(father))


def position_case(father: Sequence[Optional[int]], k: int) -> int:
    """Case symbol for node k given the father indices of a BFS permutation."""
    if k == 0 or father[k] == k - 1:
        return 0
    return father[k] - father[k - 1] + 1


def resolve_father(fathers: Sequence[Optional[int]], k: int, case: int) -> int:
    """Father index of node k decoded from its case; inverse of `position_case`."""
    if case == 0:
        return k - 1
    previous = fathers[k - 1] if k >= 1 else None
    if previous is None:
        raise DanglingPosition(f"Case {case} at position {k} refers to the father of the root")
    father = previous + case - 1
    if father >= k:
        raise DanglingPosition(f"Case {case} at position {k} refers to a node that does not exist yet")
    return father


def feasible_cases(fathers: Sequence[Optional[int]], k: int, alphabet_size: int = BASE_ALPHABET) -> List[int]:
    """Cases that resolve to an existing node when predicting position k."""
    if k == 0:
        return [0]
    previous = fathers[k - 1]
    if previous is None:
        return [0]
    return [0] + [c for c in range(1, alphabet_size) if previous + c - 1 < k]


# ------------------------------------------------------------------
# Codec
# ------------------------------------------------------------------

def encode(jt: JunctionTree, vocab: Vocabulary, alphabet_size: int = BASE_ALPHABET) -> TokenSeq:
    perm = bfs_order(jt)
    items = []
    for k, node in enumerate(perm.order):
        case = position_case(perm.father, k)
        if case >= alphabet_size:
            raise UnencodableTree(
                f"Father advance {case - 1} at position {k} exceeds alphabet of size {alphabet_size}"
            )
        items.append(Token(vocab.id_of(jt.nodes[node].smiles), case))
    return TokenSeq(items=tuple(items))


def decode(seq: TokenSeq, vocab: Vocabulary) -> JunctionTree:
    if not seq.terminated:
        raise MissingEOS("Token sequence is not terminated by [EOS]")
    if not seq.items:
        raise EmptyTree("Token sequence holds no junctions")
    nodes = [vocab.junction(item.junction_id) for item in seq.items]
    fathers: List[Optional[int]] = [None]
    edges = []
    for k in range(1, len(seq.items)):
        father = resolve_father(fathers, k, seq.items[k].case)
        fathers.append(father)
        edges.append(TreeEdge(father, k))
    return JunctionTree(nodes=nodes, edges=edges)


def father_advances(jt: JunctionTree) -> List[int]:
    perm = bfs_order(jt)
    return [position_case(perm.father, k) - 1 for k in range(1, len(perm.order)) if perm.father[k] != k - 1]


def alphabet_coverage(trees: Iterable[JunctionTree], alphabet_size: int = BASE_ALPHABET) -> CoverageReport:
    total = encodable = 0
    max_advance = 0
    for jt in trees:
        total += 1
        advances = father_advances(jt)
        worst = max(advances, default=0)
        max_advance = max(max_advance, worst)
        if worst + 1 < alphabet_size:
            encodable += 1
    fraction = encodable / total if total else 1.0
    logger.info(f"Alphabet of size {alphabet_size} covers {encodable}/{total} trees (max advance {max_advance})")
    return CoverageReport(fraction=fraction, max_advance=max_advance, n_trees=total)


def required_alphabet(trees: Iterable[JunctionTree]) -> int:
    """Smallest extended alphabet that encodes every tree."""
    return max(BASE_ALPHABET, alphabet_coverage(trees).max_advance + 2)


# ------------------------------------------------------------------
# Token dump
# ------------------------------------------------------------------

def dump_tokens(seq: TokenSeq) -> str:
    lines = [f"{item.junction_id}:{item.case}" for item in seq.items]
    if seq.terminated:
        lines.append("EOS")
    return "\n".join(lines) + "\n"


def parse_tokens(text: str) -> TokenSeq:
    items = []
    terminated = False
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if terminated:
            raise MissingEOS("Tokens found after [EOS]")
        if line == "EOS":
            terminated = True
            continue
        junction_id, _, case = line.partition(":")
        items.append(Token(int(junction_id), int(case)))
    return TokenSeq(items=tuple(items), terminated=terminated)
