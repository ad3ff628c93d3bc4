"""SMILES parsing into molecular graphs.

Supports the Daylight grammar subset used by odorant corpora: organic-subset
atoms, bracket atoms (isotope, chirality, H count, charge, class), ring
closures (digits and ``%nn``), branches, bond symbols and dot disconnection.

Lowercase aromatic flags are trusted; kekulization is only used to assign
implicit hydrogens and to reject impossible aromatic systems. Kekulé rings
that satisfy a simple 4n+2 rule are marked aromatic so that both spellings
of the same molecule produce the same graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx

from .elements import (
    AROMATIC_BRACKET,
    AROMATIC_ORGANIC,
    ATOMIC_NUMBER,
    ATOMIC_WEIGHT,
    ORGANIC_SUBSET,
    VALENCE_ELECTRONS,
    allowed_valences,
)

BOND_ORDERS = ("single", "double", "triple", "aromatic")
BOND_VALENCE = {"single": 1, "double": 2, "triple": 3, "aromatic": 1}
STEREO_TAGS = ("none", "Z", "E", "cis", "trans", "any")
CHIRAL_TAGS = ("unspecified", "CW", "CCW", "other")

# Placeholder for an implicit hydrogen in a chiral neighbour ordering.
H_MARK = -1


class ParseError(ValueError):
    """Malformed or chemically impossible SMILES."""

    def __init__(self, message, smiles="", position=None):
        self.smiles = smiles
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}: {smiles!r}")


@dataclass
class Atom:
    symbol: str
    atomic_num: int
    charge: int = 0
    aromatic: bool = False
    chiral: str = "unspecified"
    explicit_h: int = 0
    isotope: int | None = None
    bracket: bool = False
    implicit_h: int = 0
    # Neighbour order as written (atom indices, H_MARK for the bracket H).
    chiral_order: list = field(default_factory=list, repr=False)

    @property
    def total_h(self):
        return self.explicit_h + self.implicit_h


@dataclass
class Bond:
    begin: int
    end: int
    order: str = "single"
    stereo: str = "none"
    ring: bool = False
    conjugated: bool = False
    # For stereo double bonds: reference substituents (on begin, on end) and
    # whether they are "cis" or "trans" to each other.
    stereo_atoms: tuple | None = None
    stereo_relation: str | None = None

    def other(self, idx):
        return self.end if idx == self.begin else self.begin


@dataclass
class MolecularGraph:
    atoms: list
    bonds: list
    fragment_count: int
    smiles: str = ""

    def __post_init__(self):
        self._adj = None

    @property
    def num_atoms(self):
        return len(self.atoms)

    @property
    def num_bonds(self):
        return len(self.bonds)

    def neighbors(self, idx):
        """List of (neighbour index, bond index) pairs."""
        if self._adj is None:
            adj = [[] for _ in self.atoms]
            for k, b in enumerate(self.bonds):
                adj[b.begin].append((b.end, k))
                adj[b.end].append((b.begin, k))
            self._adj = adj
        return self._adj[idx]

    def degree(self, idx):
        return len(self.neighbors(idx))

    def bond_between(self, i, j):
        for n, k in self.neighbors(i):
            if n == j:
                return k
        return None

    def invalidate(self):
        self._adj = None


# ---------------------------------------------------------------- tokenizer


def _parse_bracket(text, start):
    """Parse a bracket atom starting at ``text[start] == '['``.

    Returns (Atom, index after ']').
    """
    end = text.find("]", start)
    if end < 0:
        raise ParseError("unmatched '['", text, start)
    body = text[start + 1:end]
    i = 0
    isotope = None
    j = i
    while j < len(body) and body[j].isdigit():
        j += 1
    if j > i:
        isotope = int(body[i:j])
    i = j
    if i >= len(body):
        raise ParseError("bracket atom without element", text, start)

    symbol = None
    aromatic = False
    two = body[i:i + 2]
    if two in AROMATIC_BRACKET and len(two) == 2:
        symbol, aromatic = two.capitalize(), True
        i += 2
    elif len(two) == 2 and two in ATOMIC_NUMBER:
        symbol = two
        i += 2
    elif body[i] in AROMATIC_BRACKET:
        symbol, aromatic = body[i].upper(), True
        i += 1
    elif body[i] in ATOMIC_NUMBER:
        symbol = body[i]
        i += 1
    else:
        raise ParseError(f"unknown element in '[{body}]'", text, start + 1 + i)

    chiral = "unspecified"
    if body.startswith("@@", i):
        chiral = "CW"
        i += 2
    elif body.startswith("@", i):
        i += 1
        chiral = "CCW"
        # @TH1, @AL2, @SP3, @TB12, @OH25 ...
        if i < len(body) and body[i].isalpha() and body[i] != "H":
            chiral = "other"
            i += 2
            while i < len(body) and body[i].isdigit():
                i += 1

    hcount = 0
    if i < len(body) and body[i] == "H":
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        hcount = int(body[i:j]) if j > i else 1
        i = j

    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        ch = body[i]
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        if j > i:
            charge = sign * int(body[i:j])
            i = j
        else:
            n = 1
            while i < len(body) and body[i] == ch:
                n += 1
                i += 1
            charge = sign * n

    if i < len(body) and body[i] == ":":
        i += 1
        while i < len(body) and body[i].isdigit():
            i += 1
    if i != len(body):
        raise ParseError(f"unexpected '{body[i]}' in bracket atom", text, start + 1 + i)

    atom = Atom(
        symbol=symbol,
        atomic_num=ATOMIC_NUMBER[symbol],
        charge=charge,
        aromatic=aromatic,
        chiral=chiral,
        explicit_h=hcount,
        isotope=isotope,
        bracket=True,
    )
    return atom, end + 1


_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic",
                 "/": "single", "\\": "single"}


def parse_smiles(text, aromatize=True):
    """Parse a SMILES string into a :class:`MolecularGraph`.

    Raises :class:`ParseError` (with a character position where possible)
    on unclosed rings, unmatched brackets or parentheses, unknown elements
    and valence violations.
    """
    if not isinstance(text, str) or not text:
        raise ParseError("empty SMILES", text or "")
    if not text.isascii():
        raise ParseError("non-ASCII SMILES", text)

    atoms = []
    bonds = []
    # directional marks: bond index -> (first written atom, char, second)
    directions = {}
    bond_explicit = []
    prev = None
    branches = []
    pending = None  # (symbol, position)
    rings = {}  # number -> (atom, bond symbol or None, position, slot)
    seen = set()

    def add_bond(a, b, sym, pos, written):
        if a == b:
            raise ParseError("ring bond from atom to itself", text, pos)
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ParseError("duplicate bond", text, pos)
        seen.add(key)
        if sym is None:
            order = "aromatic" if atoms[a].aromatic and atoms[b].aromatic else "single"
        else:
            order = _BOND_SYMBOLS[sym]
        bonds.append(Bond(a, b, order))
        bond_explicit.append(sym is not None)
        if sym in ("/", "\\"):
            directions[len(bonds) - 1] = (written[0], sym, written[1])
        return len(bonds) - 1

    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "(":
            if prev is None:
                raise ParseError("branch without preceding atom", text, i)
            branches.append((prev, i))
            i += 1
        elif c == ")":
            if not branches:
                raise ParseError("unmatched ')'", text, i)
            if pending is not None:
                raise ParseError("bond symbol before ')'", text, pending[1])
            prev = branches.pop()[0]
            i += 1
        elif c in _BOND_SYMBOLS:
            if pending is not None:
                raise ParseError("consecutive bond symbols", text, i)
            if prev is None:
                raise ParseError("bond without preceding atom", text, i)
            pending = (c, i)
            i += 1
        elif c == "$":
            raise ParseError("quadruple bonds are not supported", text, i)
        elif c == ".":
            if pending is not None:
                raise ParseError("bond symbol before '.'", text, pending[1])
            prev = None
            i += 1
        elif c.isdigit() or c == "%":
            pos = i
            if c == "%":
                digits = text[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise ParseError("malformed %nn ring number", text, i)
                num = int(digits)
                i += 3
            else:
                num = int(c)
                i += 1
            if prev is None:
                raise ParseError("ring number without preceding atom", text, pos)
            sym = pending[0] if pending else None
            pending = None
            if num in rings:
                other, osym, opos, slot = rings.pop(num)
                if sym is not None and osym is not None and sym != osym:
                    if not ({sym, osym} <= {"/", "\\", "-"}):
                        raise ParseError(f"conflicting ring bond {num}", text, pos)
                use = sym if sym is not None else osym
                written = (prev, other) if sym is not None else (other, prev)
                add_bond(other, prev, use, pos, written)
                atoms[other].chiral_order[slot] = prev
                atoms[prev].chiral_order.append(other)
            else:
                rings[num] = (prev, sym, pos, len(atoms[prev].chiral_order))
                atoms[prev].chiral_order.append(None)
        else:
            pos = i
            if c == "[":
                atom, i = _parse_bracket(text, i)
            elif text.startswith("Cl", i) or text.startswith("Br", i):
                atom = Atom(text[i:i + 2], ATOMIC_NUMBER[text[i:i + 2]])
                i += 2
            elif c in ORGANIC_SUBSET:
                atom = Atom(c, ATOMIC_NUMBER[c])
                i += 1
            elif c in AROMATIC_ORGANIC:
                sym = c.upper()
                atom = Atom(sym, ATOMIC_NUMBER[sym], aromatic=True)
                i += 1
            else:
                raise ParseError(f"unexpected character '{c}'", text, pos)
            idx = len(atoms)
            atoms.append(atom)
            if prev is not None:
                sym = pending[0] if pending else None
                add_bond(prev, idx, sym, pending[1] if pending else pos, (prev, idx))
                atoms[prev].chiral_order.append(idx)
                atom.chiral_order.append(prev)
            elif pending is not None:
                raise ParseError("bond without preceding atom", text, pending[1])
            if atom.bracket and atom.explicit_h:
                atom.chiral_order.append(H_MARK)
            pending = None
            prev = idx

    if pending is not None:
        raise ParseError("dangling bond symbol", text, pending[1])
    if rings:
        num, (_, _, pos, _) = next(iter(rings.items()))
        raise ParseError(f"unclosed ring {num}", text, pos)
    if branches:
        raise ParseError("unmatched '('", text, branches[-1][1])
    if not atoms:
        raise ParseError("no atoms", text)

    g = MolecularGraph(atoms, bonds, 0, smiles=text)
    _perceive_rings(g)
    _assign_hydrogens(g, text)
    if aromatize:
        _aromatize(g)
    _assign_double_bond_stereo(g, directions)
    _assign_conjugation(g)
    _clean_chiral_orders(g)
    g.fragment_count = nx.number_connected_components(to_networkx(g))
    return g


# ------------------------------------------------------------- ring logic


def _perceive_rings(g):
    nxg = nx.Graph()
    nxg.add_nodes_from(range(g.num_atoms))
    for k, b in enumerate(g.bonds):
        nxg.add_edge(b.begin, b.end, k=k)
    bridges = {frozenset(e) for e in nx.bridges(nxg)}
    for b in g.bonds:
        b.ring = frozenset((b.begin, b.end)) not in bridges
        if b.order == "aromatic" and not b.ring:
            b.order = "single"


def atom_in_ring(g, idx):
    return any(g.bonds[k].ring for _, k in g.neighbors(idx))


def _bond_sum(g, idx):
    return sum(BOND_VALENCE[g.bonds[k].order] for _, k in g.neighbors(idx))


def _has_aromatic_bond(g, idx):
    return any(g.bonds[k].order == "aromatic" for _, k in g.neighbors(idx))


def default_implicit_h(g, idx):
    """Implicit H an organic-subset atom would get, and whether it needs a
    pi bond from kekulization."""
    atom = g.atoms[idx]
    s = _bond_sum(g, idx)
    allowed = allowed_valences(atom.symbol, 0)
    if not allowed:
        return 0, False
    arom = atom.aromatic and _has_aromatic_bond(g, idx)
    for v in allowed:
        if v >= s:
            if arom and v - s >= 1:
                return v - s - 1, True
            return v - s, False
    return None, False


def _assign_hydrogens(g, text):
    need_pi = set()
    for idx, atom in enumerate(g.atoms):
        if atom.aromatic and not atom_in_ring(g, idx):
            raise ParseError(f"aromatic atom {idx} outside a ring", text)
        s = _bond_sum(g, idx)
        arom = atom.aromatic and _has_aromatic_bond(g, idx)
        if not atom.bracket:
            h, pi = default_implicit_h(g, idx)
            if h is None:
                raise ParseError(f"valence violation on atom {idx} ({atom.symbol})", text)
            atom.implicit_h = h
            if pi:
                need_pi.add(idx)
            continue
        allowed = allowed_valences(atom.symbol, atom.charge)
        total = s + atom.explicit_h
        if not allowed:
            continue
        if arom:
            v = next((v for v in allowed if v >= total), None)
            if v is None:
                raise ParseError(f"valence violation on atom {idx} ({atom.symbol})", text)
            if v - total >= 1:
                need_pi.add(idx)
        elif total > allowed[-1]:
            raise ParseError(f"valence violation on atom {idx} ({atom.symbol})", text)

    if need_pi or any(b.order == "aromatic" for b in g.bonds):
        if kekulize(g, need_pi) is None:
            raise ParseError("cannot kekulize aromatic system", text)


def kekulize(g, need_pi=None):
    """Find a Kekulé assignment for aromatic bonds.

    Returns a dict bond index -> "single"/"double" or None if no assignment
    gives every pi-requiring atom exactly one double bond.
    """
    if need_pi is None:
        need_pi = {
            i for i, a in enumerate(g.atoms)
            if a.aromatic and _needs_pi(g, i)
        }
    m = nx.Graph()
    m.add_nodes_from(need_pi)
    for k, b in enumerate(g.bonds):
        if b.order == "aromatic" and b.begin in need_pi and b.end in need_pi:
            m.add_edge(b.begin, b.end, k=k)
    matching = nx.max_weight_matching(m, maxcardinality=True)
    if 2 * len(matching) != len(need_pi):
        return None
    out = {k: "single" for k, b in enumerate(g.bonds) if b.order == "aromatic"}
    for u, v in matching:
        out[m.edges[u, v]["k"]] = "double"
    return out


def _needs_pi(g, idx):
    atom = g.atoms[idx]
    s = _bond_sum(g, idx) + atom.total_h
    allowed = allowed_valences(atom.symbol, atom.charge)
    v = next((v for v in allowed if v >= s), None)
    return v is not None and v - s >= 1


# ------------------------------------------------------------ aromaticity


def _pi_electrons(g, idx, ring_set):
    """Electrons an atom donates to a ring's pi system, or None if it cannot
    take part."""
    atom = g.atoms[idx]
    if atom.aromatic:
        if _needs_pi(g, idx):
            return 1
        return 2 if VALENCE_ELECTRONS.get(atom.symbol, 0) - atom.charge >= 5 else 0
    ring_double = False
    exo_double = None
    for n, k in g.neighbors(idx):
        b = g.bonds[k]
        if b.order == "double":
            if n in ring_set:
                ring_double = True
            else:
                exo_double = g.atoms[n].symbol
        elif b.order == "triple":
            return None
    if ring_double:
        return 1
    if exo_double is not None:
        return 0 if exo_double in ("O", "N", "S") else None
    ve = VALENCE_ELECTRONS.get(atom.symbol)
    if ve is None:
        return None
    valence = _bond_sum(g, idx) + atom.total_h
    lone = ve - atom.charge - valence
    if g.degree(idx) + atom.total_h > 3:
        return None
    if lone >= 2:
        return 2
    if atom.symbol in ("B", "C") and lone == 0 and valence == 3:
        return 0
    return None


def _aromatize(g):
    nxg = to_networkx(g)
    try:
        cycles = nx.minimum_cycle_basis(nxg)
    except nx.NetworkXException:  # pragma: no cover - defensive
        return
    cycles = [c for c in cycles if len(c) <= 8]
    if not cycles:
        return
    candidates = [set(c) for c in cycles]
    # fused pairs sharing a bond, for systems like azulene
    for i in range(len(cycles)):
        for j in range(i + 1, len(cycles)):
            shared = candidates[i] & candidates[j]
            if len(shared) == 2:
                candidates.append(candidates[i] | candidates[j])

    aromatic_atoms = set()
    for ring in candidates:
        if all(g.atoms[a].aromatic for a in ring):
            continue
        total = 0
        ok = True
        for a in ring:
            e = _pi_electrons(g, a, ring)
            if e is None:
                ok = False
                break
            total += e
        if ok and total % 4 == 2:
            aromatic_atoms |= ring
    if not aromatic_atoms:
        return
    for a in aromatic_atoms:
        g.atoms[a].aromatic = True
    for b in g.bonds:
        if b.ring and b.begin in aromatic_atoms and b.end in aromatic_atoms \
                and b.order in ("single", "double", "aromatic"):
            if _share_ring(b.begin, b.end, candidates, aromatic_atoms):
                b.order = "aromatic"


def _share_ring(u, v, rings, aromatic_atoms):
    return any(u in r and v in r and r <= aromatic_atoms for r in rings)


# ---------------------------------------------------------------- stereo


def _flip(c):
    return "\\" if c == "/" else "/"


def _assign_double_bond_stereo(g, directions):
    """Derive cis/trans relations from '/' and '\\' marks."""
    marks = {}  # bond index -> (first, char, second)
    for k, d in directions.items():
        marks[k] = d
    for k, b in enumerate(g.bonds):
        if b.order != "double" or b.ring:
            continue
        left, right = (b.begin, b.end) if b.begin < b.end else (b.end, b.begin)
        sides = []
        for center, other in ((left, right), (right, left)):
            found = None
            for n, kk in g.neighbors(center):
                if n == other or kk not in marks:
                    continue
                first, ch, second = marks[kk]
                found = (n, first, ch, second)
                break
            sides.append(found)
        if sides[0] is None or sides[1] is None:
            continue
        x, f1, c1, _ = sides[0]
        y, f2, c2, _ = sides[1]
        # normalise to "x c left" and "right c y"
        d1 = c1 if f1 == x else _flip(c1)
        d2 = c2 if f2 == right else _flip(c2)
        b.stereo_atoms = (x, y) if left == b.begin else (y, x)
        b.stereo_relation = "trans" if d1 == d2 else "cis"
        b.stereo = ez_label(g, k)


def ez_label(g, k):
    """E/Z from the stored relation, ranking substituents by atomic number."""
    b = g.bonds[k]
    if b.stereo_relation is None:
        return "none"
    relation = b.stereo_relation
    for center, ref, other in ((b.begin, b.stereo_atoms[0], b.end),
                               (b.end, b.stereo_atoms[1], b.begin)):
        subs = [n for n, _ in g.neighbors(center) if n not in (ref, other)]
        if subs and g.atoms[subs[0]].atomic_num > g.atoms[ref].atomic_num:
            relation = "cis" if relation == "trans" else "trans"
    return "E" if relation == "trans" else "Z"


def _clean_chiral_orders(g):
    for idx, atom in enumerate(g.atoms):
        if atom.chiral == "unspecified":
            atom.chiral_order = []
            continue
        order = [x for x in atom.chiral_order if x is not None]
        if atom.total_h > 1 or len(order) < 3:
            atom.chiral = "unspecified"
            order = []
        atom.chiral_order = order


# ----------------------------------------------------------- conjugation


def lone_pairs(g, idx):
    atom = g.atoms[idx]
    ve = VALENCE_ELECTRONS.get(atom.symbol)
    if ve is None:
        return 0
    valence = _bond_sum(g, idx) + atom.total_h
    if atom.aromatic and _needs_pi(g, idx):
        valence += 1
    return max(0, (ve - atom.charge - valence) // 2)


def _assign_conjugation(g):
    pi_atom = [False] * g.num_atoms
    for b in g.bonds:
        if b.order in ("double", "triple", "aromatic"):
            pi_atom[b.begin] = pi_atom[b.end] = True
    donor = [
        (not pi_atom[i]) and a.symbol in ("N", "O", "S", "P", "F", "Cl", "Br", "I")
        and lone_pairs(g, i) > 0
        for i, a in enumerate(g.atoms)
    ]

    def multiple_elsewhere(idx, k):
        return any(
            g.bonds[kk].order in ("double", "triple", "aromatic")
            for _, kk in g.neighbors(idx) if kk != k
        )

    for k, b in enumerate(g.bonds):
        if b.order == "aromatic":
            b.conjugated = True
        elif b.order == "single":
            u, v = b.begin, b.end
            pu, pv = multiple_elsewhere(u, k), multiple_elsewhere(v, k)
            b.conjugated = (pu and pv) or (pu and donor[v]) or (pv and donor[u])
    for k, b in enumerate(g.bonds):
        if b.order in ("double", "triple"):
            b.conjugated = any(
                g.bonds[kk].conjugated
                for end in (b.begin, b.end)
                for _, kk in g.neighbors(end) if kk != k
            )


# ------------------------------------------------------------- utilities


def to_networkx(g):
    """Undirected networkx view with element/charge/H/bond-order labels."""
    nxg = nx.Graph()
    for i, a in enumerate(g.atoms):
        nxg.add_node(i, z=a.atomic_num, charge=a.charge, aromatic=a.aromatic,
                     h=a.total_h, isotope=a.isotope)
    for b in g.bonds:
        nxg.add_edge(b.begin, b.end, order=b.order)
    return nxg


def isomorphic(g1, g2):
    """Label-preserving graph isomorphism (stereo ignored)."""
    return nx.is_isomorphic(
        to_networkx(g1), to_networkx(g2),
        node_match=lambda a, b: a == b,
        edge_match=lambda a, b: a == b,
    )


def molecular_weight(g):
    """Average molecular weight in daltons, implicit hydrogens included."""
    h = ATOMIC_WEIGHT[1]
    return sum(ATOMIC_WEIGHT[a.atomic_num] + a.total_h * h for a in g.atoms)


def smiles_elements(text):
    """Element symbols referenced by a SMILES string, without full parsing.

    Used by the inorganic-atom filter, which must see elements that the
    parser would otherwise reject.
    """
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "[":
            end = text.find("]", i)
            body = text[i + 1:end if end >= 0 else len(text)]
            j = 0
            while j < len(body) and body[j].isdigit():
                j += 1
            rest = body[j:]
            if rest[:2] in AROMATIC_BRACKET and len(rest) >= 2 and rest[:2].islower():
                out.append(rest[:2].capitalize())
            elif len(rest) >= 2 and rest[0].isupper() and rest[1].islower():
                out.append(rest[:2])
            elif rest:
                out.append(rest[0].upper())
            i = end + 1 if end >= 0 else len(text)
        elif text.startswith("Cl", i) or text.startswith("Br", i):
            out.append(text[i:i + 2])
            i += 2
        elif c.isalpha():
            out.append(c.upper())
            i += 1
        else:
            i += 1
    return out
