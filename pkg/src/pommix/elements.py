"""Element data: symbols, standard atomic weights and default valences."""

# Z -> (symbol, standard atomic weight). H..Xe plus Bi, which appears in the
# GS-LF inorganic filter list.
_TABLE = [
    (1, "H", 1.008), (2, "He", 4.0026), (3, "Li", 6.94), (4, "Be", 9.0122),
    (5, "B", 10.81), (6, "C", 12.011), (7, "N", 14.007), (8, "O", 15.999),
    (9, "F", 18.998), (10, "Ne", 20.180), (11, "Na", 22.990), (12, "Mg", 24.305),
    (13, "Al", 26.982), (14, "Si", 28.085), (15, "P", 30.974), (16, "S", 32.06),
    (17, "Cl", 35.45), (18, "Ar", 39.948), (19, "K", 39.098), (20, "Ca", 40.078),
    (21, "Sc", 44.956), (22, "Ti", 47.867), (23, "V", 50.942), (24, "Cr", 51.996),
    (25, "Mn", 54.938), (26, "Fe", 55.845), (27, "Co", 58.933), (28, "Ni", 58.693),
    (29, "Cu", 63.546), (30, "Zn", 65.38), (31, "Ga", 69.723), (32, "Ge", 72.630),
    (33, "As", 74.922), (34, "Se", 78.971), (35, "Br", 79.904), (36, "Kr", 83.798),
    (37, "Rb", 85.468), (38, "Sr", 87.62), (39, "Y", 88.906), (40, "Zr", 91.224),
    (41, "Nb", 92.906), (42, "Mo", 95.95), (43, "Tc", 97.907), (44, "Ru", 101.07),
    (45, "Rh", 102.91), (46, "Pd", 106.42), (47, "Ag", 107.87), (48, "Cd", 112.41),
    (49, "In", 114.82), (50, "Sn", 118.71), (51, "Sb", 121.76), (52, "Te", 127.60),
    (53, "I", 126.90), (54, "Xe", 131.29), (83, "Bi", 208.98),
]

ATOMIC_NUMBER = {sym: z for z, sym, _ in _TABLE}
SYMBOL = {z: sym for z, sym, _ in _TABLE}
ATOMIC_WEIGHT = {z: w for z, _, w in _TABLE}

ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("b", "c", "n", "o", "p", "s", "se", "as", "te")

# Valence electron count of main-group elements; used for charge-shifted
# valences, lone-pair counting and hybridization.
VALENCE_ELECTRONS = {
    "H": 1, "Li": 1, "Na": 1, "K": 1, "Rb": 1,
    "Be": 2, "Mg": 2, "Ca": 2, "Sr": 2,
    "B": 3, "Al": 3, "Ga": 3, "In": 3,
    "C": 4, "Si": 4, "Ge": 4, "Sn": 4,
    "N": 5, "P": 5, "As": 5, "Sb": 5, "Bi": 5,
    "O": 6, "S": 6, "Se": 6, "Te": 6,
    "F": 7, "Cl": 7, "Br": 7, "I": 7,
    "He": 8, "Ne": 8, "Ar": 8, "Kr": 8, "Xe": 8,
}

_PERIOD_TWO = {"B", "C", "N", "O", "F"}


def allowed_valences(symbol, charge=0):
    """Return the ascending tuple of normal valences, or () if unconstrained.

    Neutral atoms follow the Daylight organic-subset conventions. Charged
    atoms take the valences of their isoelectronic neutral counterpart.
    """
    if symbol == "H":
        return (1,) if charge == 0 else (0,)
    ve = VALENCE_ELECTRONS.get(symbol)
    if ve is None or ve < 3 or ve == 8:
        return ()
    e = ve - charge
    period2 = symbol in _PERIOD_TWO
    if e == 3:
        return (3,)
    if e == 4:
        return (4,)
    if e == 5:
        return (3,) if (period2 and charge != 0) else (3, 5)
    if e == 6:
        return (2,) if (period2 and charge != 0) or symbol == "O" else (2, 4, 6)
    if e == 7:
        return (1,)
    if e == 2:
        return (2,)
    return ()
