
"""Molecular graph data model, valence bookkeeping and kekulization."""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx

from core.errors import KekulizationError, UnsupportedAtom, ValenceError

logger = logging.getLogger(__name__)

# ------------------------------------------------------------------
# Constants
# ------------------------------------------------------------------

ORGANIC_SUBSET = frozenset({"C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})
SUPPORTED_ELEMENTS = ORGANIC_SUBSET | {"H"}
AROMATIC_ELEMENTS = frozenset({"C", "N", "O", "P", "S"})

# allowed valences per (element, formal charge), ascending
VALENCE_TABLE: Dict[Tuple[str, int], Tuple[int, ...]] = {
    ("H", 0): (1,), ("H", 1): (0,), ("H", -1): (0,),
    ("C", 0): (4,), ("C", 1): (3,), ("C", -1): (3,),
    ("N", 0): (3,), ("N", 1): (4,), ("N", -1): (2,),
    ("O", 0): (2,), ("O", 1): (3,), ("O", -1): (1,),
    ("S", 0): (2, 4, 6), ("S", 1): (3, 5), ("S", -1): (1, 3, 5),
    ("P", 0): (3, 5), ("P", 1): (4,), ("P", -1): (2, 4),
    ("F", 0): (1,), ("F", -1): (0,),
    ("Cl", 0): (1,), ("Cl", -1): (0,),
    ("Br", 0): (1,), ("Br", -1): (0,),
    ("I", 0): (1,), ("I", -1): (0,),
}


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def base_valence(self) -> int:
        """Valence an aromatic bond is guaranteed to use before kekulization."""
        return 1 if self is BondOrder.AROMATIC else int(self)


# ------------------------------------------------------------------
# Domain types
# ------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    explicit_h: int = 0
    aromatic: bool = False
    bracket: bool = False

    def __post_init__(self):
        if self.element not in SUPPORTED_ELEMENTS:
            raise UnsupportedAtom(f"Element `{self.element}` is not supported")
        if abs(self.formal_charge) > 2:
            raise UnsupportedAtom(f"Formal charge {self.formal_charge} on `{self.element}` is out of range")
        if self.explicit_h < 0:
            raise ValenceError(f"Negative hydrogen count on `{self.element}`")
        if self.aromatic and self.element not in AROMATIC_ELEMENTS:
            raise UnsupportedAtom(f"`{self.element}` cannot be aromatic")

    @property
    def allowed_valences(self) -> Tuple[int, ...]:
        return VALENCE_TABLE.get((self.element, self.formal_charge), ())

    def replace(self, **changes) -> "Atom":
        fields = {
            "element": self.element,
            "formal_charge": self.formal_charge,
            "explicit_h": self.explicit_h,
            "aromatic": self.aromatic,
            "bracket": self.bracket,
        }
        fields.update(changes)
        return Atom(**fields)


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder = BondOrder.SINGLE

    @property
    def endpoints(self) -> Tuple[int, int]:
        return self.begin, self.end

    def other(self, atom: int) -> int:
        return self.end if atom == self.begin else self.begin


class ValenceViolation(NamedTuple):
    atom: int
    element: str
    valence: int
    allowed: Tuple[int, ...]
    reason: str


class MolGraph:
    """Immutable molecular graph.

    Bonds keep their written order (aromatic bonds stay AROMATIC); the kekulé
    assignment used for valence arithmetic is computed on first use.
    """

    __slots__ = ("atoms", "bonds", "adjacency", "_bond_index", "_kekule", "_hydrogens")

    def __init__(self, atoms: Iterable[Atom], bonds: Iterable[Bond] = ()):
        self.atoms: Tuple[Atom, ...] = tuple(atoms)
        self.bonds: Tuple[Bond, ...] = tuple(bonds)

        n = len(self.atoms)
        adjacency: List[List[Tuple[int, int]]] = [[] for _ in range(n)]
        index: Dict[Tuple[int, int], int] = {}
        for k, bond in enumerate(self.bonds):
            a, b = bond.endpoints
            if a == b:
                raise ValueError(f"Bond {k} joins atom {a} to itself")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"Bond {k} references an atom out of range")
            key = (min(a, b), max(a, b))
            if key in index:
                raise ValueError(f"Duplicate bond between atoms {a} and {b}")
            index[key] = k
            adjacency[a].append((b, k))
            adjacency[b].append((a, k))

        self.adjacency: Tuple[Tuple[Tuple[int, int], ...], ...] = tuple(tuple(nbrs) for nbrs in adjacency)
        self._bond_index = index
        self._kekule: Optional[Tuple[int, ...]] = None
        self._hydrogens: Optional[Tuple[int, ...]] = None

    def __len__(self) -> int:
        return len(self.atoms)

    def __repr__(self) -> str:
        return f"MolGraph(atoms={len(self.atoms)}, bonds={len(self.bonds)})"

    # -- structure -------------------------------------------------

    def neighbors(self, atom: int) -> List[int]:
        return [nbr for nbr, _ in self.adjacency[atom]]

    def degree(self, atom: int) -> int:
        return len(self.adjacency[atom])

    def bond_between(self, a: int, b: int) -> Optional[Bond]:
        k = self._bond_index.get((min(a, b), max(a, b)))
        return None if k is None else self.bonds[k]

    def bond_id(self, a: int, b: int) -> Optional[int]:
        return self._bond_index.get((min(a, b), max(a, b)))

    def is_connected(self) -> bool:
        if not self.atoms:
            return False
        seen = {0}
        stack = [0]
        while stack:
            for nbr, _ in self.adjacency[stack.pop()]:
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
        return len(seen) == len(self.atoms)

    # -- valence ---------------------------------------------------

    def kekule_orders(self) -> Tuple[int, ...]:
        if self._kekule is None:
            self._kekule = kekulize(self)
        return self._kekule

    def bond_valence(self, atom: int) -> int:
        orders = self.kekule_orders()
        return sum(orders[k] for _, k in self.adjacency[atom])

    def implicit_h(self, atom: int) -> int:
        if self._hydrogens is None:
            self._hydrogens = tuple(self._count_implicit(i) for i in range(len(self.atoms)))
        return self._hydrogens[atom]

    def hydrogen_count(self, atom: int) -> int:
        """Attached hydrogens: implicit or bracketed, plus explicit hydrogen atoms."""
        explicit_atoms = sum(1 for nbr in self.neighbors(atom) if self.atoms[nbr].element == "H")
        return self.implicit_h(atom) + explicit_atoms

    def _count_implicit(self, atom: int) -> int:
        spec = self.atoms[atom]
        if spec.bracket:
            return spec.explicit_h
        used = self.bond_valence(atom)
        for valence in spec.allowed_valences:
            if valence >= used:
                return valence - used
        return 0


# ------------------------------------------------------------------
# Valence
# ------------------------------------------------------------------

def aromatic_room(g: MolGraph, atom: int) -> int:
    """Valence left on an aromatic atom once each aromatic bond counts as single."""
    spec = g.atoms[atom]
    used = sum(g.bonds[k].order.base_valence for _, k in g.adjacency[atom])
    if spec.bracket:
        used += spec.explicit_h
    for valence in spec.allowed_valences:
        if valence >= used:
            return valence - used
    return 0


def kekulize(g: MolGraph) -> Tuple[int, ...]:
    """Assign 1/2/3 orders to every bond, resolving aromatic bonds by perfect matching."""
    orders = [bond.order.base_valence for bond in g.bonds]
    aromatic = [k for k, bond in enumerate(g.bonds) if bond.order is BondOrder.AROMATIC]
    if not aromatic:
        return tuple(orders)

    ring_atoms = sorted({a for k in aromatic for a in g.bonds[k].endpoints})
    needs_double = {a for a in ring_atoms if aromatic_room(g, a) >= 1}

    matching_graph = nx.Graph()
    matching_graph.add_nodes_from(sorted(needs_double))
    for k in aromatic:
        a, b = g.bonds[k].endpoints
        if a in needs_double and b in needs_double:
            matching_graph.add_edge(a, b, bond=k)

    matching = nx.max_weight_matching(matching_graph, maxcardinality=True)
    matched = {a for pair in matching for a in pair}
    if matched != needs_double:
        unmatched = sorted(needs_double - matched)
        raise KekulizationError(f"Cannot kekulize aromatic system; atoms {unmatched} lack a double bond")

    for a, b in matching:
        orders[matching_graph.edges[a, b]["bond"]] = 2
    return tuple(orders)


def check_valence(g: MolGraph) -> List[ValenceViolation]:
    """Return every valence violation; an empty list means the graph is valid."""
    try:
        g.kekule_orders()
    except KekulizationError as exc:
        logger.debug(exc)
        return [
            ValenceViolation(i, atom.element, aromatic_room(g, i), atom.allowed_valences, "unkekulizable")
            for i, atom in enumerate(g.atoms)
            if atom.aromatic
        ]

    violations = []
    for i, atom in enumerate(g.atoms):
        allowed = atom.allowed_valences
        valence = g.bond_valence(i) + (atom.explicit_h if atom.bracket else 0)
        if not allowed:
            violations.append(ValenceViolation(i, atom.element, valence, allowed, "no valence entry"))
        elif valence > allowed[-1]:
            violations.append(ValenceViolation(i, atom.element, valence, allowed, "over valence"))
    return violations


def is_valid(g: MolGraph) -> bool:
    return g.is_connected() and not check_valence(g)


def require_valid(g: MolGraph) -> MolGraph:
    violations = check_valence(g)
    if violations:
        first = violations[0]
        if first.reason == "unkekulizable":
            raise KekulizationError(f"Aromatic system cannot be kekulized (atom {first.atom})")
        raise ValenceError(
            f"Atom {first.atom} ({first.element}) has valence {first.valence}, allowed {first.allowed}"
        )
    return g


# ------------------------------------------------------------------
# Views and edits
# ------------------------------------------------------------------

def to_networkx(g: MolGraph) -> nx.Graph:
    graph = nx.Graph()
    for i, atom in enumerate(g.atoms):
        graph.add_node(
            i,
            element=atom.element,
            charge=atom.formal_charge,
            aromatic=atom.aromatic,
            hydrogens=g.implicit_h(i),
        )
    for bond in g.bonds:
        graph.add_edge(bond.begin, bond.end, order=int(bond.order))
    return graph


def induced_subgraph(g: MolGraph, atoms: Sequence[int]) -> Tuple[MolGraph, Tuple[int, ...]]:
    """Subgraph on `atoms` (in the given order) and the index map back into `g`."""
    local = {a: i for i, a in enumerate(atoms)}
    bonds = [
        Bond(local[b.begin], local[b.end], b.order)
        for b in g.bonds
        if b.begin in local and b.end in local
    ]
    return MolGraph([g.atoms[a] for a in atoms], bonds), tuple(atoms)
