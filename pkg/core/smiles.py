
"""SMILES subset reader and canonical writer.

Supported: organic-subset atoms, bracket atoms with charge and hydrogen count,
branches, ring closures 1-9 and %nn, bond symbols ``- = # :`` and lowercase
aromatic atoms. Stereo marks are accepted and dropped; isotopes, atom classes
and disconnected inputs are rejected.
"""

import logging
import re
from collections import Counter
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import networkx as nx

from core.errors import KekulizationError, SmilesSyntaxError, UnsupportedAtom
from core.molgraph import (
    AROMATIC_ELEMENTS,
    ORGANIC_SUBSET,
    SUPPORTED_ELEMENTS,
    Atom,
    Bond,
    BondOrder,
    MolGraph,
    require_valid,
)

logger = logging.getLogger(__name__)

_ORGANIC_TOKENS = ("Cl", "Br", "C", "N", "O", "P", "S", "F", "I", "c", "n", "o", "p", "s")
_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}
_STEREO_BONDS = ("/", "\\")
_BRACKET = re.compile(
    r"^(?P<isotope>\d+)?"
    r"(?P<element>[A-Z][a-z]?|[a-z]{1,2})"
    r"(?P<chiral>@*)"
    r"(?P<hydrogens>H\d*)?"
    r"(?P<charge>[+-]\d+|\++|-+)?"
    r"(?P<atom_class>:\d+)?$"
)
_ELEMENT_ORDER = {e: k for k, e in enumerate(("C", "N", "O", "F", "P", "S", "Cl", "Br", "I", "H"))}


# ------------------------------------------------------------------
# Reader
# ------------------------------------------------------------------

def _parse_bracket(body: str) -> Atom:
    match = _BRACKET.match(body)
    if match is None:
        raise SmilesSyntaxError(f"Malformed bracket atom `[{body}]`")
    if match.group("isotope"):
        raise SmilesSyntaxError(f"Isotopes are not supported: `[{body}]`")
    if match.group("atom_class"):
        raise SmilesSyntaxError(f"Atom classes are not supported: `[{body}]`")

    symbol = match.group("element")
    aromatic = symbol.islower()
    element = symbol.capitalize()
    if aromatic and element not in AROMATIC_ELEMENTS:
        raise UnsupportedAtom(f"Aromatic `{symbol}` is not supported")
    if element not in SUPPORTED_ELEMENTS:
        raise UnsupportedAtom(f"Element `{symbol}` is not supported")

    hydrogens = match.group("hydrogens")
    explicit_h = 0
    if hydrogens:
        explicit_h = int(hydrogens[1:]) if len(hydrogens) > 1 else 1

    charge_text = match.group("charge") or ""
    if not charge_text:
        charge = 0
    elif charge_text[1:].isdigit():
        charge = int(charge_text[1:]) * (1 if charge_text[0] == "+" else -1)
    else:
        charge = len(charge_text) * (1 if charge_text[0] == "+" else -1)

    return Atom(element, formal_charge=charge, explicit_h=explicit_h, aromatic=aromatic, bracket=True)


def _read_atom(text: str, pos: int) -> Tuple[Atom, int]:
    if text[pos] == "[":
        end = text.find("]", pos)
        if end < 0:
            raise SmilesSyntaxError(f"Unclosed bracket at position {pos}")
        return _parse_bracket(text[pos + 1:end]), end + 1
    for token in _ORGANIC_TOKENS:
        if text.startswith(token, pos):
            return Atom(token.capitalize(), aromatic=token.islower()), pos + len(token)
    if text[pos].isalpha():
        raise UnsupportedAtom(f"Unsupported atom symbol at position {pos}: `{text[pos]}`")
    raise SmilesSyntaxError(f"Unexpected character `{text[pos]}` at position {pos}")


def _closure_order(first: Optional[BondOrder], second: Optional[BondOrder]) -> Optional[BondOrder]:
    if first is not None and second is not None and first != second:
        raise SmilesSyntaxError("Conflicting bond symbols on a ring closure")
    return first if first is not None else second


def parse_smiles(text: str) -> MolGraph:
    if not text or not text.strip():
        raise SmilesSyntaxError("Empty SMILES")
    text = text.strip()
    if not text.isascii():
        raise SmilesSyntaxError("SMILES must be ASCII")

    atoms: List[Atom] = []
    edges: List[Tuple[int, int, Optional[BondOrder]]] = []
    branches: List[int] = []
    rings: Dict[int, Tuple[int, Optional[BondOrder]]] = {}
    previous: Optional[int] = None
    pending: Optional[BondOrder] = None
    pos = 0

    while pos < len(text):
        ch = text[pos]
        if ch == "(":
            if previous is None:
                raise SmilesSyntaxError("Branch opened before any atom")
            branches.append(previous)
            pos += 1
        elif ch == ")":
            if not branches:
                raise SmilesSyntaxError(f"Unbalanced `)` at position {pos}")
            if pending is not None:
                raise SmilesSyntaxError(f"Bond symbol before `)` at position {pos}")
            previous = branches.pop()
            pos += 1
        elif ch in _BOND_SYMBOLS:
            if pending is not None:
                raise SmilesSyntaxError(f"Two bond symbols in a row at position {pos}")
            pending = _BOND_SYMBOLS[ch]
            pos += 1
        elif ch in _STEREO_BONDS:
            pos += 1
        elif ch == ".":
            raise SmilesSyntaxError("Disconnected structures are not supported")
        elif ch.isdigit() or ch == "%":
            if previous is None:
                raise SmilesSyntaxError("Ring closure before any atom")
            if ch == "%":
                digits = text[pos + 1:pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesSyntaxError(f"Malformed ring closure at position {pos}")
                label = int(digits)
                pos += 3
            else:
                label = int(ch)
                pos += 1
            if label in rings:
                opener, opener_bond = rings.pop(label)
                if opener == previous:
                    raise SmilesSyntaxError(f"Ring closure {label} closes on its own atom")
                edges.append((opener, previous, _closure_order(opener_bond, pending)))
            else:
                rings[label] = (previous, pending)
            pending = None
        else:
            atom, pos = _read_atom(text, pos)
            index = len(atoms)
            atoms.append(atom)
            if previous is not None:
                edges.append((previous, index, pending))
            elif pending is not None:
                raise SmilesSyntaxError("Bond symbol before the first atom")
            pending = None
            previous = index

    if branches:
        raise SmilesSyntaxError("Unbalanced `(`")
    if rings:
        raise SmilesSyntaxError(f"Unclosed ring closure(s): {sorted(rings)}")
    if pending is not None:
        raise SmilesSyntaxError("Dangling bond symbol at end of input")

    bonds = []
    for a, b, order in edges:
        if order is None:
            order = BondOrder.AROMATIC if atoms[a].aromatic and atoms[b].aromatic else BondOrder.SINGLE
        bonds.append(Bond(a, b, order))
    try:
        graph = MolGraph(atoms, bonds)
    except ValueError as exc:
        raise SmilesSyntaxError(str(exc)) from exc

    return require_valid(_settle_aromaticity(graph))


def _settle_aromaticity(g: MolGraph) -> MolGraph:
    """Demote aromatic bonds outside rings to single and reject stray aromatic atoms."""
    bridges = {tuple(sorted(edge)) for edge in nx.bridges(nx.Graph([b.endpoints for b in g.bonds]))} if g.bonds else set()
    bonds = []
    for bond in g.bonds:
        if bond.order is BondOrder.AROMATIC:
            if not (g.atoms[bond.begin].aromatic and g.atoms[bond.end].aromatic):
                raise KekulizationError("Aromatic bond between non-aromatic atoms")
            if tuple(sorted(bond.endpoints)) in bridges:
                bond = Bond(bond.begin, bond.end, BondOrder.SINGLE)
        bonds.append(bond)

    settled = MolGraph(g.atoms, bonds)
    for i, atom in enumerate(settled.atoms):
        if atom.aromatic and not any(settled.bonds[k].order is BondOrder.AROMATIC for _, k in settled.adjacency[i]):
            raise KekulizationError(f"Aromatic atom {i} is not part of an aromatic ring")
    return settled


# ------------------------------------------------------------------
# Canonical ranking
# ------------------------------------------------------------------

def _dense(keys: Sequence) -> List[int]:
    lookup = {key: rank for rank, key in enumerate(sorted(set(keys)))}
    return [lookup[key] for key in keys]


def _refine(g: MolGraph, ranks: List[int]) -> List[int]:
    while True:
        keys = [
            (ranks[i], tuple(sorted((ranks[j], int(g.bonds[k].order)) for j, k in g.adjacency[i])))
            for i in range(len(g))
        ]
        refined = _dense(keys)
        if len(set(refined)) == len(set(ranks)):
            return refined
        ranks = refined


def _leaves(g: MolGraph, ranks: List[int]) -> Iterator[List[int]]:
    """Every fully discrete ranking reachable by breaking the first tied class."""
    ranks = _refine(g, ranks)
    counts = Counter(ranks)
    tied = [rank for rank, count in counts.items() if count > 1]
    if not tied:
        yield ranks
        return
    target = min(tied)
    for member in (i for i, rank in enumerate(ranks) if rank == target):
        broken = [2 * r + (1 if r == target and i != member else 0) for i, r in enumerate(ranks)]
        yield from _leaves(g, _dense(broken))


def _initial_ranks(g: MolGraph, labels: Optional[Sequence[str]]) -> List[int]:
    return _dense([
        (
            _ELEMENT_ORDER[atom.element],
            g.degree(i),
            atom.formal_charge,
            g.hydrogen_count(i),
            atom.aromatic,
            labels[i] if labels is not None else "",
        )
        for i, atom in enumerate(g.atoms)
    ])


# ------------------------------------------------------------------
# Writer
# ------------------------------------------------------------------

def _unbracketed_h(g: MolGraph, i: int) -> int:
    """Hydrogens the reader would assign to atom `i` written without brackets."""
    atom = g.atoms[i]
    if atom.aromatic:
        used = sum(g.bonds[k].order.base_valence for _, k in g.adjacency[i])
        room = next((v - used for v in atom.allowed_valences if v >= used), 0)
        return room - 1 if room >= 1 else 0
    used = g.bond_valence(i)
    return next((v - used for v in atom.allowed_valences if v >= used), 0)


def _atom_token(g: MolGraph, i: int) -> str:
    atom = g.atoms[i]
    symbol = atom.element.lower() if atom.aromatic else atom.element
    needs_bracket = atom.formal_charge != 0 or atom.element not in ORGANIC_SUBSET or (
        atom.bracket and atom.explicit_h != _unbracketed_h(g, i)
    )
    if not needs_bracket:
        return symbol

    hydrogens = g.implicit_h(i)
    h_text = "" if hydrogens == 0 else ("H" if hydrogens == 1 else f"H{hydrogens}")
    charge = atom.formal_charge
    if charge == 0:
        c_text = ""
    elif abs(charge) == 1:
        c_text = "+" if charge > 0 else "-"
    else:
        c_text = f"{'+' if charge > 0 else '-'}{abs(charge)}"
    return f"[{symbol}{h_text}{c_text}]"


def _bond_symbol(g: MolGraph, a: int, b: int) -> str:
    order = g.bond_between(a, b).order
    both_aromatic = g.atoms[a].aromatic and g.atoms[b].aromatic
    if order is BondOrder.DOUBLE:
        return "="
    if order is BondOrder.TRIPLE:
        return "#"
    if order is BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return "-" if both_aromatic else ""


def _ring_label(digit: int) -> str:
    return str(digit) if digit < 10 else f"%{digit:02d}"


def _write(g: MolGraph, ranks: Sequence[int]) -> Tuple[str, List[int]]:
    n = len(g)
    visited = [False] * n
    order: List[int] = []
    children: List[List[int]] = [[] for _ in range(n)]
    ring_pairs: List[Tuple[int, int]] = []
    seen_pairs = set()

    def visit(u: int, parent: int):
        visited[u] = True
        order.append(u)
        for v in sorted(g.neighbors(u), key=ranks.__getitem__):
            if v == parent:
                continue
            if visited[v]:
                pair = (min(u, v), max(u, v))
                if pair not in seen_pairs:
                    seen_pairs.add(pair)
                    ring_pairs.append((v, u))
            else:
                children[u].append(v)
                visit(v, u)

    roots = []
    for start in sorted(range(n), key=ranks.__getitem__):
        if not visited[start]:
            roots.append(start)
            visit(start, -1)

    position = {atom: k for k, atom in enumerate(order)}
    openings: List[List[int]] = [[] for _ in range(n)]
    closings: List[List[int]] = [[] for _ in range(n)]
    for a, b in ring_pairs:
        first, second = (a, b) if position[a] < position[b] else (b, a)
        openings[first].append(second)
        closings[second].append(first)

    out: List[str] = []
    digits: Dict[Tuple[int, int], int] = {}
    in_use = set()

    def emit(u: int):
        out.append(_atom_token(g, u))
        released = []
        for partner in sorted(closings[u], key=position.__getitem__):
            digit = digits.pop((partner, u))
            out.append(_ring_label(digit))
            released.append(digit)
        for partner in sorted(openings[u], key=position.__getitem__):
            digit = next(d for d in range(1, 100) if d not in in_use)
            in_use.add(digit)
            digits[(u, partner)] = digit
            out.append(_bond_symbol(g, u, partner) + _ring_label(digit))
        in_use.difference_update(released)

        kids = children[u]
        for k, v in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                out.append("(")
            out.append(_bond_symbol(g, u, v))
            emit(v)
            if not last:
                out.append(")")

    for k, root in enumerate(roots):
        if k:
            out.append(".")
        emit(root)
    return "".join(out), order


def _canonical(g: MolGraph, labels: Optional[Sequence[str]] = None) -> Tuple[str, List[int]]:
    if not len(g):
        return "", []
    best = None
    for ranks in _leaves(g, _initial_ranks(g, labels)):
        text, order = _write(g, ranks)
        key = (text, tuple(labels[i] for i in order) if labels is not None else ())
        if best is None or key < best[0]:
            best = (key, order)
    (text, _), order = best
    return text, order


def canonical_smiles(g: MolGraph) -> str:
    return _canonical(g)[0]


def canonical_order(g: MolGraph) -> List[int]:
    """Atom indices in canonical writing order; position in this list is the canonical rank."""
    return _canonical(g)[1]


def canonical_key(g: MolGraph, labels: Sequence[str]) -> str:
    """Canonical string of a graph whose atoms carry extra labels."""
    text, order = _canonical(g, labels)
    return text + "|" + ";".join(labels[i] for i in order)
