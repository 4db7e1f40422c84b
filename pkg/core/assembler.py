
"""Rebuild a molecule from a junction tree.

Junctions are attached in DFS order from the root. Each attachment identifies
child-fragment atoms with atoms of the placed parent junction (one shared atom,
or one shared bond for ring-ring fusion); the distinct valence-valid results
are the isomer choices that the search resolves.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.chemprops import properties
from core.errors import BadRange, EmptyTree, NoValidAttachment
from core.jtree import JunctionKind, JunctionTree
from core.molgraph import Atom, Bond, BondOrder, MolGraph, check_valence
from core.seqcodec import bfs_order
from core.smiles import canonical_key, canonical_smiles
from utils.models import AssemblyConfig

logger = logging.getLogger(__name__)

UCT_C = math.sqrt(2.0)

Plan = Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class ScoreWeights:
    lambda_likelihood: float = 1.0
    lambda_property: float = 1.0
    targets: Dict[str, float] = field(default_factory=dict)
    widths: Dict[str, float] = field(default_factory=lambda: {"W": 50.0, "logP": 1.0, "TPSA": 20.0})
    reference: Optional[str] = None
    lambda_match: float = 0.0

    def __post_init__(self):
        if min(self.lambda_likelihood, self.lambda_property, self.lambda_match) < 0:
            raise BadRange("score weights must be non-negative")
        if self.lambda_likelihood == 0 and self.lambda_property == 0:
            raise BadRange("lambda_likelihood and lambda_property cannot both be zero")

    @classmethod
    def from_config(cls, config: AssemblyConfig, reference: Optional[str] = None) -> "ScoreWeights":
        targets = {
            name: value
            for name, value in (("W", config.target_W), ("logP", config.target_logP), ("TPSA", config.target_TPSA))
            if value is not None
        }
        return cls(
            lambda_likelihood=config.lambda_likelihood,
            lambda_property=config.lambda_property,
            targets=targets,
            widths={"W": config.width_W, "logP": config.width_logP, "TPSA": config.width_TPSA},
            reference=reference,
            lambda_match=config.lambda_match if reference is not None else 0.0,
        )


@dataclass(frozen=True)
class PartialAssembly:
    """Molecule built so far; `images[j]` maps fragment atoms of junction j into `mol`."""

    mol: MolGraph
    images: Tuple[Optional[Tuple[int, ...]], ...]
    plan: Plan
    step: int = 0

    @property
    def placed(self) -> frozenset:
        return frozenset(j for j, image in enumerate(self.images) if image is not None)

    @property
    def frontier(self) -> Plan:
        return self.plan[self.step:]

    @property
    def complete(self) -> bool:
        return self.step == len(self.plan)


class AssemblyResult(NamedTuple):
    mol: MolGraph
    smiles: str
    score: float
    partial: bool
    placed: int


# ------------------------------------------------------------------
# Attachments
# ------------------------------------------------------------------

def dfs_plan(jt: JunctionTree) -> Tuple[int, Plan]:
    """Root junction and the (parent, child) attachments in DFS order."""
    root = bfs_order(jt).order[0]
    plan = []
    seen = {root}

    def visit(node: int):
        children = sorted((n for n in jt.neighbors(node) if n not in seen), key=lambda i: (jt.nodes[i].smiles, i))
        for child in children:
            if child in seen:
                continue
            seen.add(child)
            plan.append((node, child))
            visit(child)

    visit(root)
    return root, tuple(plan)


def initial_state(jt: JunctionTree) -> PartialAssembly:
    if not jt.nodes:
        raise EmptyTree("Cannot assemble an empty junction tree")
    root, plan = dfs_plan(jt)
    fragment = jt.nodes[root].fragment
    images: List[Optional[Tuple[int, ...]]] = [None] * len(jt.nodes)
    images[root] = tuple(range(len(fragment)))
    return PartialAssembly(mol=fragment, images=tuple(images), plan=plan)


def _units(bond: Bond) -> int:
    return bond.order.base_valence


def _orders_match(a: BondOrder, b: BondOrder) -> bool:
    return a == b


def _merge_atom(mol: MolGraph, m: int, child: MolGraph, c: int, identify: Dict[int, int]) -> Optional[Atom]:
    host, guest = mol.atoms[m], child.atoms[c]
    if host.element != guest.element or host.formal_charge != guest.formal_charge:
        return None
    inverse = {v: k for k, v in identify.items()}
    # valence each side brings that the other side does not already hold
    from_child = sum(
        _units(child.bonds[k]) for nbr, k in child.adjacency[c]
        if not (nbr in identify and mol.bond_between(m, identify[nbr]) is not None)
    )
    from_mol = sum(
        _units(mol.bonds[k]) for nbr, k in mol.adjacency[m]
        if not (nbr in inverse and child.bond_between(c, inverse[nbr]) is not None)
    )
    base, extra = (guest, from_mol) if guest.bracket else (host, from_child)
    aromatic = host.aromatic or guest.aromatic
    if not base.bracket:
        return base.replace(aromatic=aromatic)
    if base.explicit_h < extra:
        return None
    return base.replace(explicit_h=base.explicit_h - extra, aromatic=aromatic)


def merge(state: PartialAssembly, child: MolGraph, identify: Dict[int, int]) -> Optional[Tuple[MolGraph, Tuple[int, ...]]]:
    """Graph with `child` added and its atoms `identify`-ed onto `state.mol`; None when invalid."""
    mol = state.mol
    atoms = list(mol.atoms)
    image = []
    for c, atom in enumerate(child.atoms):
        if c in identify:
            image.append(identify[c])
        else:
            image.append(len(atoms))
            atoms.append(atom)

    bonds = list(mol.bonds)
    for bond in child.bonds:
        a, b = image[bond.begin], image[bond.end]
        existing = mol.bond_between(a, b) if max(a, b) < len(mol) else None
        if existing is None:
            bonds.append(Bond(a, b, bond.order))
        elif not _orders_match(existing.order, bond.order):
            return None

    for c, m in identify.items():
        merged = _merge_atom(mol, m, child, c, identify)
        if merged is None:
            return None
        atoms[m] = merged

    graph = MolGraph(atoms, bonds)
    if check_valence(graph):
        return None
    return graph, tuple(image)


def _identifications(state: PartialAssembly, jt: JunctionTree, parent: int, child: int) -> List[Dict[int, int]]:
    host_atoms = state.images[parent]
    fragment = jt.nodes[child].fragment
    options = [{c: m} for m in host_atoms for c in range(len(fragment))]
    if jt.nodes[child].kind is JunctionKind.RING and jt.nodes[parent].kind is JunctionKind.RING:
        host = set(host_atoms)
        for bond in state.mol.bonds:
            if bond.begin not in host or bond.end not in host:
                continue
            for cb in fragment.bonds:
                options.append({cb.begin: bond.begin, cb.end: bond.end})
                options.append({cb.begin: bond.end, cb.end: bond.begin})
    return options


def _labels(images: Sequence[Optional[Tuple[int, ...]]], n_atoms: int) -> List[str]:
    members: List[List[int]] = [[] for _ in range(n_atoms)]
    for j, image in enumerate(images):
        for a in image or ():
            members[a].append(j)
    return [",".join(str(j) for j in sorted(m)) for m in members]


def _successors(state: PartialAssembly, jt: JunctionTree) -> List[PartialAssembly]:
    parent, child = state.plan[state.step]
    seen: Dict[str, PartialAssembly] = {}
    for identify in _identifications(state, jt, parent, child):
        merged = merge(state, jt.nodes[child].fragment, identify)
        if merged is None:
            continue
        graph, image = merged
        images = list(state.images)
        images[child] = image
        key = canonical_key(graph, _labels(images, len(graph)))
        if key not in seen:
            seen[key] = PartialAssembly(mol=graph, images=tuple(images), plan=state.plan, step=state.step + 1)
    return [seen[key] for key in sorted(seen)]


def enumerate_attachments(state: PartialAssembly, jt: JunctionTree, parent: int, child: int) -> List[PartialAssembly]:
    """Distinct valid ways to attach `child` to the placed `parent`, in canonical order."""
    if state.images[parent] is None:
        raise ValueError(f"junction {parent} is not placed")
    if state.images[child] is not None:
        raise ValueError(f"junction {child} is already placed")
    plan = list(state.plan)
    plan[state.step:state.step] = [(parent, child)]
    probe = PartialAssembly(mol=state.mol, images=state.images, plan=tuple(plan), step=state.step)
    options = _successors(probe, jt)
    if not options:
        raise NoValidAttachment(f"junction {child} cannot attach to junction {parent}")
    return [PartialAssembly(mol=o.mol, images=o.images, plan=state.plan, step=state.step) for o in options]


# ------------------------------------------------------------------
# Scoring
# ------------------------------------------------------------------

def score(state: PartialAssembly, jt: JunctionTree, weights: ScoreWeights) -> float:
    value = weights.lambda_likelihood * len(state.placed) / len(jt.nodes)
    if weights.targets:
        props = properties(state.mol)._asdict()
        kernel = 1.0
        for name, target in weights.targets.items():
            kernel *= math.exp(-((props[name] - target) ** 2) / (2.0 * weights.widths[name] ** 2))
        value += weights.lambda_property * kernel
    if weights.reference is not None and weights.lambda_match:
        if state.complete and canonical_smiles(state.mol) == weights.reference:
            value += weights.lambda_match
    return value


def _result(state: PartialAssembly, jt: JunctionTree, weights: ScoreWeights) -> AssemblyResult:
    return AssemblyResult(
        mol=state.mol,
        smiles=canonical_smiles(state.mol),
        score=score(state, jt, weights),
        partial=not state.complete,
        placed=len(state.placed),
    )


def _better(a: AssemblyResult, b: Optional[AssemblyResult]) -> bool:
    if b is None:
        return True
    if not math.isclose(a.score, b.score, rel_tol=0.0, abs_tol=1e-12):
        return a.score > b.score
    return a.smiles < b.smiles


# ------------------------------------------------------------------
# Search
# ------------------------------------------------------------------

class SearchNode:
    __slots__ = ("state", "parent", "visits", "total_score", "children", "untried")

    def __init__(self, state: PartialAssembly, parent: Optional["SearchNode"] = None):
        self.state = state
        self.parent = parent
        self.visits = 0
        self.total_score = 0.0
        self.children: List[SearchNode] = []
        self.untried: Optional[List[PartialAssembly]] = None

    def expand_options(self, jt: JunctionTree) -> List[PartialAssembly]:
        if self.untried is None:
            self.untried = [] if self.state.complete else _successors(self.state, jt)
        return self.untried

    def ucb(self, parent_visits: int) -> float:
        if not self.visits:
            return math.inf
        return self.total_score / self.visits + UCT_C * math.sqrt(math.log(parent_visits) / self.visits)


def mcts_assemble(jt: JunctionTree, weights: ScoreWeights, budget: int = 200, seed: int = 0) -> AssemblyResult:
    """UCT over attachment choices; returns the best terminal reached, flagged partial on dead ends."""
    if budget < 1:
        raise BadRange(f"search budget must be positive, got {budget}")
    root = SearchNode(initial_state(jt))
    if root.state.complete:
        return _result(root.state, jt, weights)

    rng = np.random.default_rng(seed)
    best: Optional[AssemblyResult] = None
    for simulation in range(budget):
        node = root
        while not node.expand_options(jt) and node.children:
            node = max(node.children, key=lambda c: c.ucb(node.visits))
        options = node.expand_options(jt)
        if options:
            child = SearchNode(options.pop(0), parent=node)
            node.children.append(child)
            node = child

        state = node.state
        while not state.complete:
            successors = _successors(state, jt)
            if not successors:
                break
            state = successors[int(rng.integers(len(successors)))]

        result = _result(state, jt, weights)
        if _better(result, best):
            best = result
        logger.debug(f"{simulation}, {node.state.step}, {result.score:.6f}")

        while node is not None:
            node.visits += 1
            node.total_score += result.score
            node = node.parent
    return best


def exhaustive_assemble(jt: JunctionTree, weights: ScoreWeights) -> AssemblyResult:
    """Best result over every attachment sequence; exponential, meant for small trees."""
    best: Optional[AssemblyResult] = None
    stack = [initial_state(jt)]
    while stack:
        state = stack.pop()
        successors = [] if state.complete else _successors(state, jt)
        if not successors:
            result = _result(state, jt, weights)
            if _better(result, best):
                best = result
            continue
        stack.extend(reversed(successors))
    return best


def greedy_assemble(jt: JunctionTree, seed: int = 0) -> AssemblyResult:
    """First valid attachment in canonical order at every step."""
    weights = ScoreWeights()
    state = initial_state(jt)
    while not state.complete:
        successors = _successors(state, jt)
        if not successors:
            logger.warning(f"Greedy assembly stopped after {len(state.placed)}/{len(jt.nodes)} junctions")
            break
        state = successors[0]
    return _result(state, jt, weights)
