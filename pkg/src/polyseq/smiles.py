"""SMILES parsing, writing, canonical ranking and rotation enumeration.

Supported subset: organic-subset atoms, bracket atoms with charge, explicit
hydrogens and ``@``/``@@`` chirality, aromatic lowercase atoms, branches,
ring closures (digits and ``%nn``), the bond symbols ``- = # : / \\`` and the
``*`` attachment point used for polymer repeat units.  Isotopes, atom classes
and extended chirality classes are rejected.

There is no valence model: hydrogens are only what a bracket atom states.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

from polyseq.errors import SmilesSyntaxError

# fmt: off
ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs
Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl
Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh
Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og
""".split())
# fmt: on
ORGANIC_SUBSET = frozenset({"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})
AROMATIC_ELEMENTS = frozenset({"B", "C", "N", "O", "P", "S", "Se", "As"})
_AROMATIC_ORGANIC = frozenset({"b", "c", "n", "o", "p", "s"})
_BOND_CHARS = "-=#:/\\"
MAX_ABS_CHARGE = 4


class Chirality(enum.Enum):
    NONE = ""
    COUNTERCLOCKWISE = "@"
    CLOCKWISE = "@@"

    def inverted(self) -> Chirality:
        if self is Chirality.CLOCKWISE:
            return Chirality.COUNTERCLOCKWISE
        if self is Chirality.COUNTERCLOCKWISE:
            return Chirality.CLOCKWISE
        return self


class BondOrder(enum.Enum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


class BondStereo(enum.Enum):
    NONE = ""
    UP = "/"
    DOWN = "\\"

    def flipped(self) -> BondStereo:
        if self is BondStereo.UP:
            return BondStereo.DOWN
        if self is BondStereo.DOWN:
            return BondStereo.UP
        return self


# Marker for the implicit hydrogen of a chiral bracket atom in neighbor order.
IMPLICIT_H = -1


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    explicit_h: int | None = None
    chirality: Chirality = Chirality.NONE
    index: int = 0
    bracket: bool = False
    # Neighbor order the chirality marker refers to (IMPLICIT_H for [C@H]).
    chiral_neighbors: tuple[int, ...] = ()

    def symbol(self) -> str:
        """SMILES text for this atom, bracketed when required."""
        sym = self.element.lower() if self.aromatic else self.element
        plain_ok = (
            self.element == "*"
            or (self.aromatic and sym in _AROMATIC_ORGANIC)
            or (not self.aromatic and self.element in ORGANIC_SUBSET)
        )
        if (
            plain_ok
            and not self.bracket
            and self.charge == 0
            and not self.explicit_h
            and self.chirality is Chirality.NONE
        ):
            return sym
        parts = ["[", sym, self.chirality.value]
        if self.explicit_h:
            parts.append("H" if self.explicit_h == 1 else f"H{self.explicit_h}")
        if self.charge:
            sign = "+" if self.charge > 0 else "-"
            parts.append(sign if abs(self.charge) == 1 else f"{sign}{abs(self.charge)}")
        parts.append("]")
        return "".join(parts)


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE
    # Direction marker as read when going from atom a to atom b.
    stereo: BondStereo = BondStereo.NONE

    def other(self, atom: int) -> int:
        return self.b if atom == self.a else self.a

    def symbol_from(self, atom: int, atoms: Sequence[Atom]) -> str:
        """Bond text when written leaving ``atom``."""
        if self.stereo is not BondStereo.NONE:
            stereo = self.stereo if atom == self.a else self.stereo.flipped()
            return stereo.value
        if self.order is BondOrder.DOUBLE:
            return "="
        if self.order is BondOrder.TRIPLE:
            return "#"
        both_aromatic = atoms[self.a].aromatic and atoms[self.b].aromatic
        if self.order is BondOrder.AROMATIC:
            return "" if both_aromatic else ":"
        return "-" if both_aromatic else ""


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = ()

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def _adjacency(self) -> tuple[dict[int, Bond], ...]:
        adj: list[dict[int, Bond]] = [{} for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a][bond.b] = bond
            adj[bond.b][bond.a] = bond
        return tuple(adj)

    def neighbors(self, atom: int) -> list[int]:
        return list(self._adjacency[atom])

    def bond_between(self, i: int, j: int) -> Bond | None:
        return self._adjacency[i].get(j)

    def degree(self, atom: int) -> int:
        return len(self._adjacency[atom])

    def relabel(self, perm: Sequence[int]) -> MolecularGraph:
        """Return the same molecule with atom ``i`` renamed to ``perm[i]``."""
        if sorted(perm) != list(range(len(self.atoms))):
            raise ValueError("perm must be a permutation of atom indices")

        def m(i: int) -> int:
            return IMPLICIT_H if i == IMPLICIT_H else perm[i]

        atoms: list[Atom | None] = [None] * len(self.atoms)
        for i, atom in enumerate(self.atoms):
            atoms[perm[i]] = replace(
                atom, index=perm[i], chiral_neighbors=tuple(m(j) for j in atom.chiral_neighbors)
            )
        bonds = tuple(
            replace(b, a=perm[b.a], b=perm[b.b]) for b in self.bonds
        )
        return MolecularGraph(tuple(atoms), bonds)  # type: ignore[arg-type]

    def without_stereo(self) -> MolecularGraph:
        atoms = tuple(
            replace(a, chirality=Chirality.NONE, chiral_neighbors=()) for a in self.atoms
        )
        bonds = tuple(replace(b, stereo=BondStereo.NONE) for b in self.bonds)
        return MolecularGraph(atoms, bonds)


# --------------------------------------------------------------------------
# parsing


@dataclass
class _Component:
    atoms: list[Atom] = field(default_factory=list)
    bonds: dict[frozenset, Bond] = field(default_factory=dict)
    order: list[list[object]] = field(default_factory=list)


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0
        self.graphs: list[MolecularGraph] = []

    def error(self, message: str, position: int | None = None) -> SmilesSyntaxError:
        return SmilesSyntaxError(self.pos if position is None else position, message)

    def parse(self) -> list[MolecularGraph]:
        text = self.text
        comp = _Component()
        prev: int | None = None
        branches: list[tuple[int, int]] = []  # (atom, position of '(')
        pending: tuple[str, int] | None = None
        rings: dict[int, tuple[int, tuple[str, int] | None, int]] = {}
        last = ""  # kind of the previous token

        while self.pos < len(text):
            ch = text[self.pos]
            start = self.pos
            if ch == ".":
                if branches:
                    raise self.error("'.' inside a branch")
                if pending:
                    raise self.error("bond symbol before '.'")
                if prev is None:
                    raise self.error("empty component")
                if rings:
                    n, (_, _, p) = next(iter(rings.items()))
                    raise self.error(f"ring closure {n} spans components", p)
                self._finish(comp)
                comp, prev, last = _Component(), None, "dot"
                self.pos += 1
            elif ch == "(":
                if prev is None:
                    raise self.error("branch without a preceding atom")
                if pending:
                    raise self.error("bond symbol before '('")
                branches.append((prev, start))
                last = "open"
                self.pos += 1
            elif ch == ")":
                if not branches:
                    raise self.error("unmatched ')'")
                if pending:
                    raise self.error("bond symbol before ')'")
                if last == "open":
                    raise self.error("empty branch")
                prev = branches.pop()[0]
                last = "close"
                self.pos += 1
            elif ch in _BOND_CHARS:
                if prev is None:
                    raise self.error("bond without a preceding atom")
                if pending:
                    raise self.error("two consecutive bond symbols")
                pending = (ch, start)
                last = "bond"
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.error("ring closure without a preceding atom")
                if last in ("open", "close"):
                    raise self.error("ring closure must follow an atom")
                number = self._ring_number()
                if number in rings:
                    partner, open_bond, _ = rings.pop(number)
                    self._close_ring(comp, partner, prev, open_bond, pending, number, start)
                else:
                    rings[number] = (prev, pending, start)
                    comp.order[prev].append(("ring", number))
                pending = None
                last = "ring"
            elif ch == "[":
                atom = self._bracket_atom(len(comp.atoms))
                prev = self._add_atom(comp, atom, prev, pending)
                pending, last = None, "atom"
            else:
                atom = self._organic_atom(len(comp.atoms))
                prev = self._add_atom(comp, atom, prev, pending)
                pending, last = None, "atom"

        if branches:
            raise self.error("unmatched '('", branches[-1][1])
        if rings:
            n, (_, _, p) = next(iter(rings.items()))
            raise self.error(f"unclosed ring {n}", p)
        if pending:
            raise self.error("dangling bond symbol", pending[1])
        if prev is None:
            raise self.error("empty component")
        self._finish(comp)
        return self.graphs

    def _ring_number(self) -> int:
        text = self.text
        if text[self.pos] == "%":
            digits = text[self.pos + 1 : self.pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.error("'%' must be followed by two digits")
            self.pos += 3
            return int(digits)
        self.pos += 1
        return int(text[self.pos - 1])

    def _organic_atom(self, index: int) -> Atom:
        text, pos = self.text, self.pos
        two = text[pos : pos + 2]
        if two in ("Cl", "Br"):
            self.pos += 2
            return Atom(two, index=index)
        ch = text[pos]
        if ch in ORGANIC_SUBSET or ch == "*":
            self.pos += 1
            return Atom(ch, index=index)
        if ch in _AROMATIC_ORGANIC:
            self.pos += 1
            return Atom(ch.upper(), aromatic=True, index=index)
        raise self.error(f"unknown symbol {ch!r}")

    def _bracket_atom(self, index: int) -> Atom:
        text = self.text
        open_pos = self.pos
        self.pos += 1
        if self.pos < len(text) and text[self.pos].isdigit():
            raise self.error("isotopes are not supported")
        element, aromatic = self._bracket_symbol()
        chirality = Chirality.NONE
        if text.startswith("@@", self.pos):
            chirality = Chirality.CLOCKWISE
            self.pos += 2
        elif text.startswith("@", self.pos):
            chirality = Chirality.COUNTERCLOCKWISE
            self.pos += 1
        if chirality is not Chirality.NONE and self.pos < len(text) and text[self.pos] in "TASO":
            raise self.error("extended chirality classes are not supported")
        hcount = 0
        if text.startswith("H", self.pos):
            self.pos += 1
            hcount = 1
            if self.pos < len(text) and text[self.pos].isdigit():
                hcount = int(text[self.pos])
                self.pos += 1
        charge = 0
        if self.pos < len(text) and text[self.pos] in "+-":
            sign = 1 if text[self.pos] == "+" else -1
            sym = text[self.pos]
            self.pos += 1
            if self.pos < len(text) and text[self.pos].isdigit():
                charge = sign * int(text[self.pos])
                self.pos += 1
            else:
                charge = sign
                while self.pos < len(text) and text[self.pos] == sym:
                    charge += sign
                    self.pos += 1
            if abs(charge) > MAX_ABS_CHARGE:
                raise self.error(f"charge {charge:+d} out of range")
        if self.pos < len(text) and text[self.pos] == ":":
            raise self.error("atom classes are not supported")
        if self.pos >= len(text) or text[self.pos] != "]":
            if self.pos >= len(text):
                raise self.error("unmatched '['", open_pos)
            raise self.error(f"unexpected {text[self.pos]!r} in bracket atom")
        self.pos += 1
        return Atom(
            element,
            aromatic=aromatic,
            charge=charge,
            explicit_h=hcount,
            chirality=chirality,
            index=index,
            bracket=True,
        )

    def _bracket_symbol(self) -> tuple[str, bool]:
        text, pos = self.text, self.pos
        if pos >= len(text):
            raise self.error("unmatched '['", pos - 1)
        if text[pos] == "*":
            self.pos += 1
            return "*", False
        if text[pos].islower():
            two = text[pos : pos + 2]
            if two in ("se", "as"):
                self.pos += 2
                return two.capitalize(), True
            if text[pos] in _AROMATIC_ORGANIC:
                self.pos += 1
                return text[pos].upper(), True
            raise self.error(f"unknown aromatic symbol {text[pos]!r}")
        two = text[pos : pos + 2]
        if len(two) == 2 and two[1].islower() and two in ELEMENTS:
            self.pos += 2
            return two, False
        if text[pos] in ELEMENTS:
            self.pos += 1
            return text[pos], False
        raise self.error(f"unknown element in bracket atom at {text[pos]!r}")

    def _make_bond(
        self, comp: _Component, a: int, b: int, symbol: str | None, position: int
    ) -> None:
        key = frozenset((a, b))
        if a == b:
            raise self.error("atom bonded to itself", position)
        if key in comp.bonds:
            raise self.error("duplicate bond between the same atoms", position)
        both_aromatic = comp.atoms[a].aromatic and comp.atoms[b].aromatic
        stereo = BondStereo.NONE
        if symbol is None:
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        elif symbol == ":":
            if not both_aromatic:
                raise self.error("aromatic bond between non-aromatic atoms", position)
            order = BondOrder.AROMATIC
        else:
            order = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE}.get(
                symbol, BondOrder.SINGLE
            )
            if symbol in "/\\":
                stereo = BondStereo(symbol)
        comp.bonds[key] = Bond(a, b, order, stereo)

    def _add_atom(
        self, comp: _Component, atom: Atom, prev: int | None, pending: tuple[str, int] | None
    ) -> int:
        idx = len(comp.atoms)
        comp.atoms.append(atom)
        order: list[object] = []
        if prev is not None:
            symbol, position = pending if pending else (None, self.pos)
            self._make_bond(comp, prev, idx, symbol, position)
            comp.order[prev].append(idx)
            order.append(prev)
        if atom.explicit_h:
            order.append(IMPLICIT_H)
        comp.order.append(order)
        return idx

    def _close_ring(
        self,
        comp: _Component,
        partner: int,
        atom: int,
        open_bond: tuple[str, int] | None,
        close_bond: tuple[str, int] | None,
        number: int,
        position: int,
    ) -> None:
        if open_bond and close_bond and open_bond[0] != close_bond[0]:
            if {open_bond[0], close_bond[0]} != {"/", "\\"}:
                raise self.error(f"conflicting bond symbols on ring closure {number}", position)
        if open_bond:
            self._make_bond(comp, partner, atom, open_bond[0], position)
        elif close_bond:
            # symbol written at the closing digit reads from the closing atom
            self._make_bond(comp, atom, partner, close_bond[0], position)
        else:
            self._make_bond(comp, partner, atom, None, position)
        slot = comp.order[partner].index(("ring", number))
        comp.order[partner][slot] = atom
        comp.order[atom].append(partner)

    def _finish(self, comp: _Component) -> None:
        atoms = []
        for i, atom in enumerate(comp.atoms):
            if atom.chirality is not Chirality.NONE:
                atom = replace(atom, chiral_neighbors=tuple(comp.order[i]))  # type: ignore[arg-type]
            atoms.append(atom)
        self.graphs.append(MolecularGraph(tuple(atoms), tuple(comp.bonds.values())))


def parse_smiles(text: str) -> list[MolecularGraph]:
    """Parse ``text`` into one graph per ``.``-separated component.

    Raises:
        SmilesSyntaxError: on malformed or unsupported input; ``position`` is
            the offending character offset.
    """
    if not text:
        raise SmilesSyntaxError(0, "empty SMILES")
    for i, ch in enumerate(text):
        if not ch.isascii() or ch.isspace():
            raise SmilesSyntaxError(i, f"unexpected character {ch!r}")
    return _Parser(text).parse()


def parse_one(text: str) -> MolecularGraph:
    graphs = parse_smiles(text)
    if len(graphs) != 1:
        raise SmilesSyntaxError(0, f"expected one component, found {len(graphs)}")
    return graphs[0]


# --------------------------------------------------------------------------
# writing


def _permutation_parity(ref: Sequence[int], new: Sequence[int]) -> int:
    pos = {v: i for i, v in enumerate(ref)}
    perm = [pos[v] for v in new]
    parity = 0
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        parity ^= (length - 1) & 1
    return parity


def _emit(graph: MolecularGraph, start: int, key: Callable[[int], object]) -> str:
    n = len(graph.atoms)
    visited = [False] * n
    children: list[list[int]] = [[] for _ in range(n)]
    ring_at: list[list[tuple[int, int]]] = [[] for _ in range(n)]  # (partner, ring id)
    parent = [-1] * n
    ring_edges: list[tuple[int, int]] = []
    seen_edges: set[frozenset] = set()

    # pass 1: spanning tree and ring-closure edges
    stack = [(start, -1)]
    visited[start] = True
    iters = {start: iter(sorted(graph.neighbors(start), key=key))}
    order = [start]
    path = [start]
    while path:
        u = path[-1]
        for v in iters[u]:
            edge = frozenset((u, v))
            if v == parent[u] or edge in seen_edges:
                continue
            seen_edges.add(edge)
            if visited[v]:
                rid = len(ring_edges)
                ring_edges.append((v, u))
                ring_at[v].append((u, rid))
                ring_at[u].append((v, rid))
            else:
                visited[v] = True
                parent[v] = u
                children[u].append(v)
                iters[v] = iter(sorted(graph.neighbors(v), key=key))
                order.append(v)
                path.append(v)
                break
        else:
            path.pop()
    del stack

    # ring-closure bookkeeping happens in string order: the opening atom
    # (ancestor) is always written before the closing atom
    out: list[str] = []
    digit_of: dict[int, int] = {}
    free: list[int] = []
    next_digit = [1]

    def take_digit() -> int:
        if free:
            free.sort()
            return free.pop(0)
        d = next_digit[0]
        next_digit[0] += 1
        return d

    def ring_text(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def write(u: int, from_atom: int) -> None:
        atom = graph.atoms[u]
        if from_atom >= 0:
            out.append(graph.bond_between(from_atom, u).symbol_from(from_atom, graph.atoms))
        closes = [(p, r) for p, r in ring_at[u] if r in digit_of]
        opens = [(p, r) for p, r in ring_at[u] if r not in digit_of]
        ring_parts: list[str] = []
        ring_partners: list[int] = []
        for p, r in closes:
            d = digit_of.pop(r)
            free.append(d)
            ring_parts.append(ring_text(d))
            ring_partners.append(p)
        for p, r in opens:
            d = take_digit()
            digit_of[r] = d
            ring_parts.append(graph.bond_between(u, p).symbol_from(u, graph.atoms) + ring_text(d))
            ring_partners.append(p)

        if atom.chirality is not Chirality.NONE and atom.chiral_neighbors:
            new_order = [from_atom] if from_atom >= 0 else []
            if IMPLICIT_H in atom.chiral_neighbors:
                new_order.append(IMPLICIT_H)
            new_order += ring_partners + children[u]
            if sorted(new_order) == sorted(atom.chiral_neighbors):
                if _permutation_parity(atom.chiral_neighbors, new_order):
                    atom = replace(atom, chirality=atom.chirality.inverted())
        out.append(atom.symbol())
        out.extend(ring_parts)
        kids = children[u]
        for i, v in enumerate(kids):
            if i < len(kids) - 1:
                out.append("(")
                write(v, u)
                out.append(")")
            else:
                write(v, u)

    write(start, -1)
    return "".join(out)


def _check_connected(graph: MolecularGraph) -> None:
    if not graph.atoms:
        raise ValueError("empty graph")
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in graph.neighbors(u):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != len(graph.atoms):
        raise ValueError("graph is not connected")


def write_smiles(graph: MolecularGraph, start_atom: int = 0) -> str:
    """Depth-first SMILES for ``graph`` rooted at ``start_atom``.

    Neighbors are visited in atom-index order; aromatic atoms stay lowercase.
    """
    if not 0 <= start_atom < len(graph.atoms):
        raise IndexError(f"start_atom {start_atom} out of range")
    _check_connected(graph)
    return _emit(graph, start_atom, key=lambda i: i)


# --------------------------------------------------------------------------
# canonical form

# Bound on tie-break branches explored; past it the first candidate is used.
_MAX_CANON_LEAVES = 4096


def _dense_rank(keys: Sequence[object]) -> list[int]:
    lookup = {k: r for r, k in enumerate(sorted(set(keys)))}  # type: ignore[type-var]
    return [lookup[k] for k in keys]


def _initial_invariants(graph: MolecularGraph) -> list[tuple]:
    return [
        (
            a.element,
            a.aromatic,
            a.charge,
            graph.degree(i),
            a.explicit_h or 0,
            a.bracket,
        )
        for i, a in enumerate(graph.atoms)
    ]


def _refine(graph: MolecularGraph, ranks: list[int]) -> list[int]:
    classes = len(set(ranks))
    while True:
        keys = [
            (
                ranks[i],
                tuple(sorted((ranks[j], graph.bond_between(i, j).order.value) for j in graph.neighbors(i))),
            )
            for i in range(len(ranks))
        ]
        ranks = _dense_rank(keys)
        new_classes = len(set(ranks))
        if new_classes == classes:
            return ranks
        classes = new_classes


def canonical_ranks(graph: MolecularGraph) -> list[int]:
    """Refined Morgan-style ranks (ties possible for symmetric atoms)."""
    return _refine(graph, _dense_rank(_initial_invariants(graph)))


def canonicalize(graph: MolecularGraph) -> str:
    """Deterministic canonical SMILES for one connected graph.

    Atoms are ranked by iterative neighborhood refinement of (element,
    aromaticity, charge, degree, hydrogen count).  Remaining ties are broken
    by trying each member of the lowest tied class and re-refining; the
    lexicographically smallest emission wins, which keeps the output
    independent of input atom order.  Stereo markers are carried through but
    never used for ranking.
    """
    _check_connected(graph)
    budget = [_MAX_CANON_LEAVES]

    def search(ranks: list[int]) -> str:
        ranks = _refine(graph, ranks)
        counts: dict[int, list[int]] = {}
        for i, r in enumerate(ranks):
            counts.setdefault(r, []).append(i)
        tied = [atoms for r, atoms in sorted(counts.items()) if len(atoms) > 1]
        if not tied:
            budget[0] -= 1
            start = min(range(len(ranks)), key=ranks.__getitem__)
            return _emit(graph, start, key=ranks.__getitem__)
        best: str | None = None
        for i in tied[0]:
            if best is not None and budget[0] <= 0:
                break
            broken = [2 * r for r in ranks]
            broken[i] -= 1
            s = search(broken)
            if best is None or s < best:
                best = s
        assert best is not None
        return best

    return search(canonical_ranks(graph))


def canonical_smiles(text: str, stereo: bool = True) -> str:
    """Canonical form of a possibly multi-component SMILES string."""
    graphs = parse_smiles(text)
    if not stereo:
        graphs = [g.without_stereo() for g in graphs]
    return ".".join(sorted(canonicalize(g) for g in graphs))


# --------------------------------------------------------------------------
# enumeration


def enumerate_smiles(graph: MolecularGraph, limit: int | None = None) -> list[str]:
    """Rotation enumeration: one rooted SMILES per start atom, deduplicated.

    Strings come out in start-atom order; ``limit`` truncates the list.
    """
    if limit is not None and limit < 1:
        raise ValueError("limit must be positive")
    _check_connected(graph)
    seen: set[str] = set()
    out: list[str] = []
    for i in range(len(graph.atoms)):
        s = write_smiles(graph, i)
        if s in seen:
            continue
        seen.add(s)
        out.append(s)
        if limit is not None and len(out) >= limit:
            break
    return out


def enumerate_component_smiles(text: str, limit: int | None = None) -> list[str]:
    """Enumerate a single-component SMILES string given as text."""
    return enumerate_smiles(parse_one(text), limit)


