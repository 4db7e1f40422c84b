
"""Circular fingerprints, Tanimoto similarity and scalar molecular properties.

logP uses a reduced Wildman-Crippen atom typing; TPSA uses Ertl's polar
contributions for N and O (S and P contributions are optional). Atoms that
match no rule fall back to the supplemental type of their element.
"""

import logging
from typing import Dict, List, NamedTuple, Set

import numpy as np

from core.errors import BadRange, WidthMismatch
from core.molgraph import BondOrder, MolGraph

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

DEFAULT_RADIUS = 2
DEFAULT_NBITS = 2048

ATOMIC_MASS = {
    "H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998,
    "P": 30.974, "S": 32.06, "Cl": 35.453, "Br": 79.904, "I": 126.904,
}

CRIPPEN_LOGP: Dict[str, float] = {
    "C1": 0.1441, "C2": 0.0, "C3": -0.2035, "C4": -0.2051, "C5": -0.2783, "C6": 0.1551,
    "C7": 0.0017, "C8": 0.08452, "C9": -0.1444, "C10": -0.0516, "C11": 0.1193, "C12": -0.0967,
    "C13": -0.5443, "C14": 0.0, "C15": 0.245, "C16": 0.198, "C17": 0.0, "C18": 0.1581,
    "C19": 0.2955, "C20": 0.2713, "C21": 0.136, "C22": 0.4619, "C23": 0.5437, "C24": 0.1893,
    "C25": -0.8186, "C26": 0.264, "C27": 0.2148, "CS": 0.08129,
    "H1": 0.123, "H2": -0.2677, "H3": 0.2142, "H4": 0.298, "HS": 0.1125,
    "N1": -1.019, "N2": -0.7096, "N3": -1.027, "N4": -0.5188, "N5": 0.08387, "N6": 0.1836,
    "N7": -0.3187, "N8": -0.4458, "N9": 0.01508, "N10": -1.95, "N11": -0.3239, "N12": -1.119,
    "N13": -0.3396, "N14": 0.2887, "NS": -0.4806,
    "O1": 0.1552, "O2": -0.2893, "O3": -0.0684, "O4": -0.4195, "O5": 0.0335, "O6": -0.3339,
    "O7": -1.189, "O8": 0.1788, "O9": -0.1526, "O10": 0.1129, "O11": 0.4833, "O12": -1.326,
    "OS": -0.1188,
    "F": 0.4202, "Cl": 0.6895, "Br": 0.8456, "I": 0.8857,
    "S1": 0.6482, "S2": -0.0024, "S3": 0.6237, "P": 0.8612,
}

HETEROATOMS = frozenset({"N", "O", "P", "S", "F", "Cl", "Br", "I"})
_AROMATIC_SUBSTITUENT = {"F": "C14", "Cl": "C15", "Br": "C16", "I": "C17", "N": "C22", "O": "C23", "S": "C24"}


class Fingerprint:
    """Fixed-width folded circular fingerprint."""

    __slots__ = ("bits", "radius")

    def __init__(self, bits: np.ndarray, radius: int = DEFAULT_RADIUS):
        self.bits = np.asarray(bits, dtype=bool)
        self.radius = radius

    @property
    def nbits(self) -> int:
        return int(self.bits.shape[0])

    def on_bits(self) -> List[int]:
        return np.flatnonzero(self.bits).tolist()

    def __eq__(self, other) -> bool:
        return isinstance(other, Fingerprint) and self.radius == other.radius and np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"Fingerprint(nbits={self.nbits}, on={int(self.bits.sum())})"


class Properties(NamedTuple):
    W: float
    logP: float
    TPSA: float


# ------------------------------------------------------------------
# Fingerprints
# ------------------------------------------------------------------

def fnv1a64(text: str) -> int:
    value = FNV_OFFSET
    for byte in text.encode("ascii"):
        value ^= byte
        value = (value * FNV_PRIME) & MASK64
    return value


def environment_ids(g: MolGraph, radius: int = DEFAULT_RADIUS) -> Set[int]:
    """Unfolded identifiers of every atom environment at radii 0..radius."""
    current = [
        fnv1a64(
            f"0|{atom.element}|{g.degree(i)}|{g.hydrogen_count(i)}|{atom.formal_charge}|{int(atom.aromatic)}"
        )
        for i, atom in enumerate(g.atoms)
    ]
    identifiers = set(current)
    for r in range(1, radius + 1):
        updated = []
        for i in range(len(g)):
            shell = sorted(f"{int(g.bonds[k].order)}:{current[j]}" for j, k in g.adjacency[i])
            updated.append(fnv1a64(f"{r}|{current[i]}|{','.join(shell)}"))
        current = updated
        identifiers.update(current)
    return identifiers


def fingerprint(g: MolGraph, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS) -> Fingerprint:
    if nbits <= 0 or nbits & (nbits - 1):
        raise BadRange(f"Fingerprint width must be a positive power of two, got {nbits}")
    if radius < 0:
        raise BadRange(f"Fingerprint radius must be non-negative, got {radius}")
    bits = np.zeros(nbits, dtype=bool)
    for identifier in environment_ids(g, radius):
        bits[identifier % nbits] = True
    return Fingerprint(bits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.nbits != b.nbits:
        raise WidthMismatch(f"Fingerprint widths differ: {a.nbits} vs {b.nbits}")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.bits & b.bits) / union


def tanimoto_matrix(fps: List[Fingerprint]) -> np.ndarray:
    """Pairwise Tanimoto similarities, self-pairs included."""
    if not fps:
        return np.zeros((0, 0))
    widths = {fp.nbits for fp in fps}
    if len(widths) > 1:
        raise WidthMismatch(f"Fingerprint widths differ: {sorted(widths)}")
    bits = np.stack([fp.bits for fp in fps]).astype(np.float64)
    shared = bits @ bits.T
    counts = bits.sum(axis=1)
    union = counts[:, None] + counts[None, :] - shared
    return np.where(union > 0, shared / np.maximum(union, 1.0), 1.0)


# ------------------------------------------------------------------
# Properties
# ------------------------------------------------------------------

def molecular_weight(g: MolGraph) -> float:
    total = 0.0
    for i, atom in enumerate(g.atoms):
        total += ATOMIC_MASS[atom.element] + g.implicit_h(i) * ATOMIC_MASS["H"]
    return total


def _bond_counts(g: MolGraph, i: int) -> Dict[str, int]:
    counts = {"single": 0, "double": 0, "triple": 0, "aromatic": 0}
    for nbr, k in g.adjacency[i]:
        if g.atoms[nbr].element == "H":
            continue
        order = g.bonds[k].order
        key = {BondOrder.SINGLE: "single", BondOrder.DOUBLE: "double", BondOrder.TRIPLE: "triple"}.get(order, "aromatic")
        counts[key] += 1
    return counts


def _heavy_neighbors(g: MolGraph, i: int) -> List[int]:
    return [nbr for nbr in g.neighbors(i) if g.atoms[nbr].element != "H"]


def _in_three_ring(g: MolGraph, i: int) -> bool:
    nbrs = g.neighbors(i)
    return any(g.bond_between(a, b) is not None for k, a in enumerate(nbrs) for b in nbrs[k + 1:])


def _nitrogen_psa(nbrs: int, hs: int, charge: int, c: Dict[str, int], three_ring: bool) -> float:
    single, double, triple, arom = c["single"], c["double"], c["triple"], c["aromatic"]
    if nbrs == 1:
        if hs == 0 and charge == 0 and triple == 1:
            return 23.79
        if hs == 1 and charge == 0 and double == 1:
            return 23.85
        if hs == 2 and charge == 0 and single == 1:
            return 26.02
        if hs == 2 and charge == 1 and double == 1:
            return 25.59
        if hs == 3 and charge == 1 and single == 1:
            return 27.64
    elif nbrs == 2:
        if hs == 0 and charge == 0 and single == 1 and double == 1:
            return 12.36
        if hs == 0 and charge == 0 and double == 2:
            return 13.60
        if hs == 1 and charge == 0 and single == 2:
            return 21.94 if three_ring else 12.03
        if hs == 0 and charge == 1 and triple == 1 and single == 1:
            return 4.36
        if hs == 1 and charge == 1 and double == 1 and single == 1:
            return 13.97
        if hs == 2 and charge == 1 and single == 2:
            return 16.61
        if hs == 0 and charge == 0 and arom == 2:
            return 12.89
        if hs == 1 and charge == 0 and arom == 2:
            return 15.79
        if hs == 1 and charge == 1 and arom == 2:
            return 14.14
    elif nbrs == 3:
        if hs == 0 and charge == 0 and single == 3:
            return 3.01 if three_ring else 3.24
        if hs == 0 and charge == 0 and single == 1 and double == 2:
            return 11.68
        if hs == 0 and charge == 1 and single == 2 and double == 1:
            return 3.01
        if hs == 1 and charge == 1 and single == 3:
            return 4.44
        if hs == 0 and charge == 0 and arom == 3:
            return 4.41
        if hs == 0 and charge == 0 and single == 1 and arom == 2:
            return 4.93
        if hs == 0 and charge == 0 and double == 1 and arom == 2:
            return 8.39
        if hs == 0 and charge == 1 and arom == 3:
            return 4.10
        if hs == 0 and charge == 1 and single == 1 and arom == 2:
            return 3.88
    elif nbrs == 4 and hs == 0 and single == 4 and charge == 1:
        return 0.0
    return max(0.0, 30.5 - nbrs * 8.2 + hs * 1.5)


def _oxygen_psa(nbrs: int, hs: int, charge: int, c: Dict[str, int], three_ring: bool) -> float:
    if nbrs == 1:
        if hs == 0 and charge == 0 and c["double"] == 1:
            return 17.07
        if hs == 1 and charge == 0 and c["single"] == 1:
            return 20.23
        if hs == 0 and charge == -1 and c["single"] == 1:
            return 23.06
    elif nbrs == 2:
        if hs == 0 and charge == 0 and c["single"] == 2:
            return 12.53 if three_ring else 9.23
        if hs == 0 and charge == 0 and c["aromatic"] == 2:
            return 13.14
    return max(0.0, 28.5 - nbrs * 8.6 + hs * 1.5)


def _sulfur_psa(nbrs: int, hs: int, c: Dict[str, int]) -> float:
    single, double, arom = c["single"], c["double"], c["aromatic"]
    if nbrs == 1 and double == 1:
        return 32.09
    if nbrs == 1 and hs == 1 and single == 1:
        return 38.80
    if nbrs == 2 and single == 2:
        return 25.30
    if nbrs == 2 and arom == 2:
        return 28.24
    if nbrs == 3 and arom == 2 and double == 1:
        return 21.70
    if nbrs == 3 and single == 2 and double == 1:
        return 19.21
    if nbrs == 4 and single == 2 and double == 2:
        return 8.38
    return 0.0


def _phosphorus_psa(nbrs: int, hs: int, c: Dict[str, int]) -> float:
    single, double = c["single"], c["double"]
    if nbrs == 3 and single == 3:
        return 13.59
    if nbrs == 2 and single == 1 and double == 1:
        return 34.14
    if nbrs == 4 and single == 3 and double == 1:
        return 9.81
    if nbrs == 3 and hs == 1 and single == 2 and double == 1:
        return 23.47
    return 0.0


def tpsa(g: MolGraph, include_sp: bool = False) -> float:
    total = 0.0
    for i, atom in enumerate(g.atoms):
        if atom.element not in ("N", "O") and not (include_sp and atom.element in ("S", "P")):
            continue
        nbrs = len(_heavy_neighbors(g, i))
        hs = g.hydrogen_count(i)
        counts = _bond_counts(g, i)
        if atom.element == "N":
            total += _nitrogen_psa(nbrs, hs, atom.formal_charge, counts, _in_three_ring(g, i))
        elif atom.element == "O":
            total += _oxygen_psa(nbrs, hs, atom.formal_charge, counts, _in_three_ring(g, i))
        elif atom.element == "S":
            total += _sulfur_psa(nbrs, hs, counts)
        else:
            total += _phosphorus_psa(nbrs, hs, counts)
    return total


# ---- Crippen typing ----

def _double_partner(g: MolGraph, i: int):
    for nbr, k in g.adjacency[i]:
        if g.bonds[k].order is BondOrder.DOUBLE:
            return nbr
    return None


def _carbon_type(g: MolGraph, i: int) -> str:
    atom = g.atoms[i]
    if atom.formal_charge:
        return "CS"
    nbrs = _heavy_neighbors(g, i)
    hs = g.hydrogen_count(i)
    counts = _bond_counts(g, i)

    if atom.aromatic:
        if hs:
            return "C18"
        exocyclic = [
            (nbr, g.bond_between(i, nbr).order)
            for nbr in nbrs
            if g.bond_between(i, nbr).order is not BondOrder.AROMATIC
        ]
        if not exocyclic:
            return "C19"
        nbr, order = exocyclic[0]
        other = g.atoms[nbr]
        if order is BondOrder.DOUBLE:
            return "C25"
        if other.aromatic:
            return "C20"
        if other.element == "C":
            return "C21"
        return _AROMATIC_SUBSTITUENT.get(other.element, "C13")

    if counts["triple"]:
        return "C7"
    partner = _double_partner(g, i)
    if partner is not None:
        if g.atoms[partner].element != "C":
            return "C5"
        if g.atoms[partner].aromatic or any(g.atoms[n].aromatic for n in nbrs):
            return "C26"
        return "C6"

    aromatic_nbrs = [n for n in nbrs if g.atoms[n].aromatic]
    if aromatic_nbrs:
        if hs >= 3:
            return "C8" if any(g.atoms[n].element == "C" for n in aromatic_nbrs) else "C9"
        return {2: "C10", 1: "C11"}.get(hs, "C12")
    if any(g.atoms[n].element in HETEROATOMS for n in nbrs):
        return "C3" if hs >= 2 else "C4"
    return "C1" if hs >= 2 else "C2"


def _nitrogen_type(g: MolGraph, i: int) -> str:
    atom = g.atoms[i]
    nbrs = _heavy_neighbors(g, i)
    hs = g.hydrogen_count(i)
    counts = _bond_counts(g, i)
    if atom.aromatic:
        return "N12" if atom.formal_charge > 0 else "N11"
    if atom.formal_charge > 0:
        if hs:
            return "N10"
        return "N14" if counts["triple"] else "N13"
    if atom.formal_charge < 0:
        return "N14"
    if counts["triple"]:
        return "N9"
    if counts["double"]:
        return "N5" if hs else "N6"
    aromatic_nbr = any(g.atoms[n].aromatic for n in nbrs)
    if hs == 2:
        return "N3" if aromatic_nbr else "N1"
    if hs == 1:
        return "N4" if aromatic_nbr else "N2"
    if hs == 0 and len(nbrs) == 3:
        return "N8" if aromatic_nbr else "N7"
    return "NS"


def _carbonyl_like(g: MolGraph, carbon: int) -> bool:
    return any(
        g.bonds[k].order is BondOrder.DOUBLE and g.atoms[nbr].element in ("C", "N", "O", "S")
        for nbr, k in g.adjacency[carbon]
    )


def _oxygen_type(g: MolGraph, i: int) -> str:
    atom = g.atoms[i]
    nbrs = _heavy_neighbors(g, i)
    hs = g.hydrogen_count(i)
    if atom.aromatic:
        return "O1"
    if atom.formal_charge < 0:
        if not nbrs:
            return "O7"
        other = g.atoms[nbrs[0]]
        if other.element == "S":
            return "O6"
        if other.element == "N":
            return "O5"
        if other.element == "C" and _carbonyl_like(g, nbrs[0]):
            return "O12"
        return "O7"
    if atom.formal_charge > 0:
        return "OS"
    partner = _double_partner(g, i)
    if partner is not None:
        other = g.atoms[partner]
        if other.element in ("N", "O"):
            return "O5"
        if other.element != "C":
            return "OS"
        if other.aromatic:
            return "O8"
        carbon_nbrs = [n for n in _heavy_neighbors(g, partner) if n != i]
        if any(g.atoms[n].aromatic for n in carbon_nbrs):
            return "O10"
        if any(g.atoms[n].element in HETEROATOMS for n in carbon_nbrs):
            return "O11"
        return "O9"
    if hs:
        return "O2"
    if len(nbrs) == 2:
        return "O4" if any(g.atoms[n].aromatic for n in nbrs) else "O3"
    return "OS"


def _hydrogen_type(g: MolGraph, i: int) -> str:
    element = g.atoms[i].element
    if element == "C":
        return "H1"
    if element == "N":
        return "H3"
    if element == "O":
        if any(g.atoms[n].element == "C" and _carbonyl_like(g, n) for n in _heavy_neighbors(g, i)):
            return "H4"
        return "H2"
    if element == "H":
        return "H1"
    return "H2"


def crippen_type(g: MolGraph, i: int) -> str:
    atom = g.atoms[i]
    if atom.element == "C":
        return _carbon_type(g, i)
    if atom.element == "N":
        return _nitrogen_type(g, i)
    if atom.element == "O":
        return _oxygen_type(g, i)
    if atom.element == "S":
        if atom.aromatic:
            return "S3"
        return "S2" if atom.formal_charge else "S1"
    if atom.element == "P":
        return "P"
    if atom.element == "H":
        return "HS"
    return atom.element


def logp(g: MolGraph) -> float:
    total = 0.0
    for i, atom in enumerate(g.atoms):
        if atom.element == "H" and g.degree(i):
            # counted through the heavy atom it is attached to
            continue
        total += CRIPPEN_LOGP[crippen_type(g, i)]
        total += g.hydrogen_count(i) * CRIPPEN_LOGP[_hydrogen_type(g, i)]
    return total


def properties(g: MolGraph, include_sp: bool = False) -> Properties:
    return Properties(W=molecular_weight(g), logP=logp(g), TPSA=tpsa(g, include_sp=include_sp))
