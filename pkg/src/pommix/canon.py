"""Canonical SMILES for within-corpus deduplication.

Atoms are ranked by iterative invariant refinement. Remaining ties are broken
by individualizing each candidate of the first tied class in turn; every
completed labelling is written out and the lexicographically smallest string
wins, so stereo marks only matter at that final step. Swapping two
interchangeable atoms (same neighbours, no stereo) yields the same string,
so only one of them is explored.
"""

from __future__ import annotations

import copy
import logging

from .elements import AROMATIC_ORGANIC, ORGANIC_SUBSET
from .smiles import H_MARK, MolecularGraph, atom_in_ring, default_implicit_h, parse_smiles

log = logging.getLogger(__name__)

MAX_LEAVES = 10_000

_BOND_CODE = {"single": 1, "double": 2, "triple": 3, "aromatic": 4}


def _rank(keys):
    order = {k: i for i, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(g, ranks):
    nclass = len(set(ranks))
    while True:
        keys = [
            (ranks[a], tuple(sorted((ranks[n], _BOND_CODE[g.bonds[k].order])
                                    for n, k in g.neighbors(a))))
            for a in range(g.num_atoms)
        ]
        new = _rank(keys)
        m = len(set(new))
        if m == nclass:
            return new
        ranks, nclass = new, m


def _initial_ranks(g):
    keys = [
        (a.atomic_num, a.isotope or 0, a.charge, g.degree(i), a.total_h,
         a.aromatic, atom_in_ring(g, i))
        for i, a in enumerate(g.atoms)
    ]
    return _rank(keys)


def _clear_fake_stereo(g, ranks):
    """Drop stereo marks on centres carrying two interchangeable substituents."""
    stereo = _stereo_atoms(g)

    def twins_among(nbrs):
        for x in range(len(nbrs)):
            for y in range(x + 1, len(nbrs)):
                u, v = nbrs[x], nbrs[y]
                if ranks[u] == ranks[v] and _swap_twins(g, u, v, stereo):
                    return True
        return False

    for i, a in enumerate(g.atoms):
        if a.chiral != "unspecified" and twins_among([n for n, _ in g.neighbors(i)]):
            a.chiral = "unspecified"
            a.chiral_order = []
    for b in g.bonds:
        if b.stereo_relation is None:
            continue
        for end, other in ((b.begin, b.end), (b.end, b.begin)):
            if twins_among([n for n, _ in g.neighbors(end) if n != other]):
                b.stereo_relation = None
                b.stereo_atoms = None
                b.stereo = "none"
                break


def _stereo_atoms(g):
    involved = set()
    for i, a in enumerate(g.atoms):
        if a.chiral != "unspecified":
            involved.add(i)
    for b in g.bonds:
        if b.stereo_relation is not None:
            involved.update((b.begin, b.end))
    return involved


def _swap_twins(g, u, v, stereo):
    if u in stereo or v in stereo:
        return False
    nu = {n: g.bonds[k].order for n, k in g.neighbors(u) if n != v}
    nv = {n: g.bonds[k].order for n, k in g.neighbors(v) if n != u}
    return nu == nv


def canonical_rankings(g):
    """All tie-broken rankings reachable by the individualization search."""
    ranks = _refine(g, _initial_ranks(g))
    stereo = _stereo_atoms(g)
    leaves = []
    stack = [ranks]
    while stack:
        ranks = _refine(g, stack.pop())
        counts = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = [r for r, c in counts.items() if c > 1]
        if not tied:
            leaves.append(ranks)
            if len(leaves) >= MAX_LEAVES:
                log.warning("canonical search truncated at %d labellings for %s",
                            MAX_LEAVES, g.smiles)
                break
            continue
        target = min(tied)
        cands = [a for a in range(g.num_atoms) if ranks[a] == target]
        reps = []
        for c in cands:
            if not any(_swap_twins(g, c, r, stereo) for r in reps):
                reps.append(c)
        for c in reversed(reps):
            stack.append(_rank([(ranks[a], 0 if a == c else 1) for a in range(g.num_atoms)]))
    return leaves


def canonicalize(g):
    """Deterministic canonical string for a molecule (graph or SMILES)."""
    if isinstance(g, str):
        g = parse_smiles(g)
    g = _copy_graph(g)
    _clear_fake_stereo(g, _refine(g, _initial_ranks(g)))
    return min(write_smiles(g, ranks) for ranks in canonical_rankings(g))


def canonical_smiles(text):
    return canonicalize(parse_smiles(text))


def _copy_graph(g):
    out = MolecularGraph(copy.deepcopy(g.atoms), copy.deepcopy(g.bonds),
                         g.fragment_count, g.smiles)
    return out


def random_smiles(g, rng):
    """A valid, randomly ordered SMILES for the same molecule."""
    prio = list(range(g.num_atoms))
    rng.shuffle(prio)
    return write_smiles(g, prio)


def permute_atoms(g, perm):
    """Relabel atoms: new index ``perm[i]`` for old atom ``i``."""
    atoms = [None] * g.num_atoms
    for old, a in enumerate(g.atoms):
        a = copy.deepcopy(a)
        a.chiral_order = [x if x == H_MARK else perm[x] for x in a.chiral_order]
        atoms[perm[old]] = a
    bonds = []
    for b in g.bonds:
        b = copy.deepcopy(b)
        b.begin, b.end = perm[b.begin], perm[b.end]
        if b.stereo_atoms is not None:
            b.stereo_atoms = (perm[b.stereo_atoms[0]], perm[b.stereo_atoms[1]])
        bonds.append(b)
    return MolecularGraph(atoms, bonds, g.fragment_count, g.smiles)


# ----------------------------------------------------------------- writer


def _flip(c):
    return "\\" if c == "/" else "/"


def _parity(src, dst):
    perm = [src.index(x) for x in dst]
    inv = 0
    for i in range(len(perm)):
        for j in range(i + 1, len(perm)):
            inv += perm[i] > perm[j]
    return inv % 2


def _atom_token(g, idx, chiral):
    a = g.atoms[idx]
    sym = a.symbol.lower() if a.aromatic else a.symbol
    organic = sym in AROMATIC_ORGANIC if a.aromatic else sym in ORGANIC_SUBSET
    if organic and a.charge == 0 and a.isotope is None and chiral == "unspecified":
        h, _ = default_implicit_h(g, idx)
        if h == a.total_h:
            return sym
    out = "["
    if a.isotope is not None:
        out += str(a.isotope)
    out += sym
    if chiral == "CCW":
        out += "@"
    elif chiral == "CW":
        out += "@@"
    if a.total_h:
        out += "H" if a.total_h == 1 else f"H{a.total_h}"
    if a.charge:
        sign = "+" if a.charge > 0 else "-"
        out += sign if abs(a.charge) == 1 else f"{sign}{abs(a.charge)}"
    return out + "]"


def _bond_token(g, k, direction=None):
    b = g.bonds[k]
    arom = g.atoms[b.begin].aromatic and g.atoms[b.end].aromatic
    if b.order == "double":
        return "="
    if b.order == "triple":
        return "#"
    if b.order == "aromatic":
        return "" if arom else ":"
    if direction is not None:
        return direction
    return "-" if arom else ""


def write_smiles(g, priority):
    """Write SMILES visiting atoms in ``priority`` order (lower first)."""
    n = g.num_atoms
    visit = {}
    children = {a: [] for a in range(n)}
    parent = {}
    ring_bonds = {a: [] for a in range(n)}
    tree = set()
    ring = set()
    roots = []

    def dfs(a, pbond):
        visit[a] = len(visit)
        for nb, k in sorted(g.neighbors(a), key=lambda t: priority[t[0]]):
            if k == pbond:
                continue
            if nb not in visit:
                tree.add(k)
                children[a].append((nb, k))
                parent[nb] = (a, k)
                dfs(nb, k)
            elif k not in tree and k not in ring:
                ring.add(k)
                ring_bonds[a].append(k)
                ring_bonds[nb].append(k)

    for a in sorted(range(n), key=lambda x: priority[x]):
        if a not in visit:
            roots.append(a)
            dfs(a, None)

    for a in range(n):
        ring_bonds[a].sort(key=lambda k: visit[g.bonds[k].other(a)])

    def written(k):
        b = g.bonds[k]
        u, v = b.begin, b.end
        return (u, v) if visit[u] < visit[v] else (v, u)

    directions = _assign_directions(g, visit, written, tree)

    # neighbour order in the output, for chirality parity
    out_order = {}
    for a in range(n):
        order = []
        if a in parent:
            order.append(parent[a][0])
        if g.atoms[a].chiral != "unspecified" and g.atoms[a].total_h:
            order.append(H_MARK)
        order.extend(g.bonds[k].other(a) for k in ring_bonds[a])
        order.extend(c for c, _ in children[a])
        out_order[a] = order

    def chiral_tag(a):
        atom = g.atoms[a]
        if atom.chiral in ("unspecified", "other"):
            return "unspecified" if atom.chiral == "unspecified" else "other"
        src = atom.chiral_order
        dst = out_order[a]
        if sorted(src) != sorted(dst):
            return "unspecified"
        if _parity(src, dst):
            return "CW" if atom.chiral == "CCW" else "CCW"
        return atom.chiral

    out = []
    free = list(range(1, 100))
    open_digits = {}

    def digit(d):
        return str(d) if d < 10 else f"%{d}"

    def emit(a, pbond):
        if pbond is not None:
            out.append(_bond_token(g, pbond, directions.get(pbond)))
        out.append(_atom_token(g, a, chiral_tag(a)))
        released = []
        for k in ring_bonds[a]:
            if k in open_digits:
                d = open_digits.pop(k)
                out.append(digit(d))
                released.append(d)
            else:
                d = free.pop(0)
                open_digits[k] = d
                out.append(_bond_token(g, k, directions.get(k)) + digit(d))
        for d in released:
            free.append(d)
        free.sort()
        kids = children[a]
        for i, (c, k) in enumerate(kids):
            if i < len(kids) - 1:
                out.append("(")
                emit(c, k)
                out.append(")")
            else:
                emit(c, k)

    parts = []
    for r in roots:
        out = []
        emit(r, None)
        parts.append("".join(out))
    return ".".join(parts)


def _assign_directions(g, visit, written, tree):
    """Choose '/' and '\\' marks reproducing each stored cis/trans relation."""
    chars = {}

    def semantic_left(k, x, center):
        # mark as "x c center"
        first, _ = written(k)
        return chars[k] if first == x else _flip(chars[k])

    def semantic_right(k, center, y):
        first, _ = written(k)
        return chars[k] if first == center else _flip(chars[k])

    def set_left(k, x, d):
        first, _ = written(k)
        chars[k] = d if first == x else _flip(d)

    def set_right(k, center, d):
        first, _ = written(k)
        chars[k] = d if first == center else _flip(d)

    stereo = [k for k, b in enumerate(g.bonds) if b.stereo_relation is not None]
    stereo.sort(key=lambda k: min(visit[g.bonds[k].begin], visit[g.bonds[k].end]))
    for k in stereo:
        b = g.bonds[k]
        a, c = (b.begin, b.end) if visit[b.begin] < visit[b.end] else (b.end, b.begin)
        ref = {b.begin: b.stereo_atoms[0], b.end: b.stereo_atoms[1]}

        def options(center, other):
            opts = [(n, kk) for n, kk in g.neighbors(center)
                    if n != other and g.bonds[kk].order == "single"]
            opts.sort(key=lambda t: (t[1] not in chars, t[1] not in tree, visit[t[0]]))
            return opts

        done = False
        for x, kx in options(a, c):
            for y, ky in options(c, a):
                if kx == ky:
                    continue
                rel = b.stereo_relation
                if x != ref[a]:
                    rel = "cis" if rel == "trans" else "trans"
                if y != ref[c]:
                    rel = "cis" if rel == "trans" else "trans"
                fx, fy = kx in chars, ky in chars
                if fx and fy:
                    d1 = semantic_left(kx, x, a)
                    d2 = semantic_right(ky, c, y)
                    if (d1 == d2) == (rel == "trans"):
                        done = True
                elif fx:
                    d1 = semantic_left(kx, x, a)
                    set_right(ky, c, d1 if rel == "trans" else _flip(d1))
                    done = True
                elif fy:
                    d2 = semantic_right(ky, c, y)
                    set_left(kx, x, d2 if rel == "trans" else _flip(d2))
                    done = True
                else:
                    set_left(kx, x, "/")
                    set_right(ky, c, "/" if rel == "trans" else "\\")
                    done = True
                if done:
                    break
            if done:
                break
        if not done:
            log.warning("dropping unwritable double-bond stereo in %s", g.smiles)
    return chars
