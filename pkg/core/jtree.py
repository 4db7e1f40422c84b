
"""Junction-tree decomposition and the fragment vocabulary."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
from networkx.utils import UnionFind

from core.errors import EmptyDataset, JTreeKitError, UnknownJunctionId
from core.molgraph import Bond, BondOrder, MolGraph, aromatic_room, check_valence, to_networkx
from core.smiles import canonical_order, canonical_smiles, parse_smiles

logger = logging.getLogger(__name__)

JNODE_ID = 0
EOS_ID = 1
PAD_ID = 2
RESERVED_TOKENS = ("[JNode]", "[EOS]", "[PAD]")


class JunctionKind(str, Enum):
    RING = "ring"
    BOND = "bond"
    SINGLETON = "singleton"


@dataclass(frozen=True)
class Junction:
    fragment: MolGraph
    kind: JunctionKind
    smiles: str
    atom_map: Tuple[int, ...] = ()
    anchor_rank: Optional[int] = None

    @classmethod
    def from_smiles(cls, smiles: str) -> "Junction":
        fragment = parse_smiles(smiles)
        return cls(fragment=fragment, kind=fragment_kind(fragment), smiles=smiles)


class TreeEdge(NamedTuple):
    a: int
    b: int
    shared: FrozenSet[int] = frozenset()


@dataclass
class JunctionTree:
    nodes: List[Junction]
    edges: List[TreeEdge] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    def neighbors(self, node: int) -> List[int]:
        out = []
        for edge in self.edges:
            if edge.a == node:
                out.append(edge.b)
            elif edge.b == node:
                out.append(edge.a)
        return out

    def edge(self, a: int, b: int) -> Optional[TreeEdge]:
        for edge in self.edges:
            if {edge.a, edge.b} == {a, b}:
                return edge
        return None

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        for i, node in enumerate(self.nodes):
            graph.add_node(i, label=node.smiles)
        graph.add_edges_from((edge.a, edge.b) for edge in self.edges)
        return graph


def fragment_kind(fragment: MolGraph) -> JunctionKind:
    if len(fragment) == 1:
        return JunctionKind.SINGLETON
    if len(fragment) == 2 and len(fragment.bonds) == 1:
        return JunctionKind.BOND
    return JunctionKind.RING


# ------------------------------------------------------------------
# Decomposition
# ------------------------------------------------------------------

def _ring_cliques(graph: nx.Graph) -> List[FrozenSet[int]]:
    rings = [frozenset(cycle) for cycle in nx.minimum_cycle_basis(graph)]
    merged = True
    while merged:
        merged = False
        for i in range(len(rings)):
            for j in range(i + 1, len(rings)):
                if len(rings[i] & rings[j]) > 2:
                    rings[i] = rings[i] | rings[j]
                    del rings[j]
                    merged = True
                    break
            if merged:
                break
    return rings


def _fragment(g: MolGraph, atoms: Sequence[int], kind: JunctionKind, kekule: bool = False) -> MolGraph:
    """Fragment on `atoms` with hydrogens adjusted for the bonds it loses."""
    local = {a: i for i, a in enumerate(atoms)}
    orders = g.kekule_orders()
    keep_aromatic = kind is JunctionKind.RING and not kekule

    bonds = []
    for k, bond in enumerate(g.bonds):
        if bond.begin in local and bond.end in local:
            order = bond.order
            if order is BondOrder.AROMATIC and not keep_aromatic:
                order = BondOrder(orders[k])
            bonds.append(Bond(local[bond.begin], local[bond.end], order))

    new_atoms = []
    for a in atoms:
        atom = g.atoms[a]
        lost = [(nbr, k) for nbr, k in g.adjacency[a] if nbr not in local]
        aromatic = atom.aromatic and keep_aromatic
        if not lost:
            new_atoms.append(atom.replace(aromatic=aromatic))
            continue
        if kekule or not atom.aromatic:
            lost_valence = sum(orders[k] for _, k in lost)
        else:
            lost_valence = sum(g.bonds[k].order.base_valence for _, k in lost)
        if atom.bracket:
            new_atoms.append(atom.replace(explicit_h=atom.explicit_h + lost_valence, aromatic=aromatic))
        elif aromatic and aromatic_room(g, a) == 0:
            # keeps its place in the kekulé pattern, so its hydrogens must be pinned
            new_atoms.append(atom.replace(explicit_h=g.implicit_h(a) + lost_valence, bracket=True))
        else:
            new_atoms.append(atom.replace(aromatic=aromatic))
    return MolGraph(new_atoms, bonds)


def _make_junction(g: MolGraph, atoms: Sequence[int], kind: JunctionKind, ranks: Dict[int, int]) -> Junction:
    atoms = tuple(sorted(atoms))
    fragment = _fragment(g, atoms, kind)
    if kind is JunctionKind.RING and check_valence(fragment):
        logger.debug("Ring fragment %s is not kekulizable on its own; using kekulé form", atoms)
        fragment = _fragment(g, atoms, kind, kekule=True)
    return Junction(
        fragment=fragment,
        kind=kind,
        smiles=canonical_smiles(fragment),
        atom_map=atoms,
        anchor_rank=min(ranks[a] for a in atoms),
    )


def decompose(g: MolGraph) -> JunctionTree:
    ranks = {atom: position for position, atom in enumerate(canonical_order(g))}
    if not g.bonds:
        return JunctionTree(nodes=[_make_junction(g, range(len(g)), JunctionKind.SINGLETON, ranks)])

    graph = to_networkx(g)
    bridges = {frozenset(edge) for edge in nx.bridges(graph)}
    rings = _ring_cliques(graph)

    cliques: List[Tuple[FrozenSet[int], JunctionKind]] = [
        (pair, JunctionKind.BOND) for pair in sorted(bridges, key=sorted)
    ]
    cliques += [(ring, JunctionKind.RING) for ring in sorted(rings, key=sorted)]

    membership: Dict[int, int] = {}
    for atoms, _ in cliques:
        for a in atoms:
            membership[a] = membership.get(a, 0) + 1
    for a in sorted(membership):
        if membership[a] >= 3:
            cliques.append((frozenset({a}), JunctionKind.SINGLETON))

    nodes = [_make_junction(g, atoms, kind, ranks) for atoms, kind in cliques]
    atom_sets = [atoms for atoms, _ in cliques]

    candidates = []
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            shared = atom_sets[i] & atom_sets[j]
            if not shared:
                continue
            touches_singleton = JunctionKind.SINGLETON in (nodes[i].kind, nodes[j].kind)
            pair = tuple(sorted((nodes[i].smiles, nodes[j].smiles)))
            candidates.append(((-len(shared), not touches_singleton, pair, i, j), shared))
    candidates.sort(key=lambda item: item[0])

    forest = UnionFind(range(len(nodes)))
    edges = []
    for (_, _, _, i, j), shared in candidates:
        if forest[i] != forest[j]:
            forest.union(i, j)
            edges.append(TreeEdge(i, j, frozenset(shared)))
    return JunctionTree(nodes=nodes, edges=edges)


def tree_cover_check(jt: JunctionTree, g: MolGraph) -> List[str]:
    """Return every structural defect of `jt` against `g`; an empty list means ok."""
    defects = []
    covered = set()
    for node in jt.nodes:
        covered.update(node.atom_map)
    uncovered = sorted(set(range(len(g))) - covered)
    if uncovered:
        defects.append(f"uncovered atoms: {uncovered}")

    bridges = {frozenset(edge) for edge in nx.bridges(to_networkx(g))} if g.bonds else set()
    for k, bond in enumerate(g.bonds):
        holders = [i for i, node in enumerate(jt.nodes) if bond.begin in node.atom_map and bond.end in node.atom_map]
        if not holders:
            defects.append(f"uncovered bond {k}: {bond.begin}-{bond.end}")
        elif frozenset(bond.endpoints) in bridges and len(holders) > 1:
            defects.append(f"non-ring bond {k} covered by {len(holders)} junctions")

    graph = jt.to_networkx()
    if len(jt.nodes) and not nx.is_tree(graph):
        defects.append("junction graph is not a tree")
    for edge in jt.edges:
        if not (0 <= edge.a < len(jt.nodes) and 0 <= edge.b < len(jt.nodes)):
            defects.append(f"edge {edge.a}-{edge.b} references a missing junction")
            continue
        shared = set(jt.nodes[edge.a].atom_map) & set(jt.nodes[edge.b].atom_map)
        if not shared:
            defects.append(f"edge {edge.a}-{edge.b} joins junctions with no shared atom")
    return defects


def tree_signature(jt: JunctionTree) -> str:
    return nx.weisfeiler_lehman_graph_hash(jt.to_networkx(), node_attr="label", iterations=3)


# ------------------------------------------------------------------
# Vocabulary
# ------------------------------------------------------------------

class Vocabulary:
    """Bijection between canonical fragment strings and junction ids."""

    def __init__(self, counts: Dict[str, int]):
        self.tokens: List[str] = list(RESERVED_TOKENS) + sorted(counts)
        self.counts: Dict[str, int] = dict(counts)
        self._index = {token: i for i, token in enumerate(self.tokens)}
        self._graphs: Dict[int, MolGraph] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, smiles: str) -> bool:
        return smiles in self._index and self._index[smiles] >= len(RESERVED_TOKENS)

    @property
    def fragment_ids(self) -> range:
        return range(len(RESERVED_TOKENS), len(self.tokens))

    def id_of(self, smiles: str) -> int:
        if smiles not in self:
            raise UnknownJunctionId(f"Fragment `{smiles}` is not in the vocabulary")
        return self._index[smiles]

    def smiles_of(self, junction_id: int) -> str:
        if not len(RESERVED_TOKENS) <= junction_id < len(self.tokens):
            raise UnknownJunctionId(f"Junction id {junction_id} is not a fragment id")
        return self.tokens[junction_id]

    def junction(self, junction_id: int) -> Junction:
        smiles = self.smiles_of(junction_id)
        if junction_id not in self._graphs:
            self._graphs[junction_id] = parse_smiles(smiles)
        fragment = self._graphs[junction_id]
        return Junction(fragment=fragment, kind=fragment_kind(fragment), smiles=smiles)

    # ---- File I/O ----

    def save(self, path: Path):
        lines = [f"{i}\t{token}\t{self.counts.get(token, 0)}" for i, token in enumerate(self.tokens)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        entries = []
        for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0].isdigit() or not parts[2].isdigit():
                raise JTreeKitError(f"Malformed vocabulary line {number}: {line!r}")
            entries.append((int(parts[0]), parts[1], int(parts[2])))

        vocab = cls({token: count for index, token, count in entries if index >= len(RESERVED_TOKENS)})
        for index, token, _ in entries:
            if index >= len(vocab) or vocab.tokens[index] != token:
                raise JTreeKitError(f"Vocabulary entry {index} `{token}` is out of canonical order")
        return vocab


def vocab_from_trees(trees: Iterable[JunctionTree]) -> Vocabulary:
    counts: Dict[str, int] = {}
    seen_any = False
    for jt in trees:
        seen_any = True
        for node in jt.nodes:
            counts[node.smiles] = counts.get(node.smiles, 0) + 1
    if not seen_any:
        raise EmptyDataset("Cannot build a vocabulary from an empty dataset")
    return Vocabulary(counts)


def build_vocab(dataset: Iterable[MolGraph]) -> Vocabulary:
    return vocab_from_trees(decompose(g) for g in dataset)
