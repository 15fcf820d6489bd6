"""First returns, Kakutani-Rokhlin towers, URP towers, towers from a level function, tilings."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .systems import (
    Clopen,
    Odometer,
    ProductSystem,
    Substitution,
    configurations,
    exact_measure,
    invariance_defect,
)


class ConsistencyError(RuntimeError):
    """An internal certificate failed; indicates a bug, not bad input."""


@dataclass
class ReturnData:
    system: object
    Y: Clopen
    returns: list  # [(J, Z)] with J increasing

    @property
    def heights(self):
        return [J for J, _ in self.returns]

    def kac_sum(self):
        total = 0
        for J, Z in self.returns:
            total = J * exact_measure(Z) + total
        return total


@dataclass
class Tower:
    base: Clopen
    shape: frozenset

    @property
    def height(self):
        return len(self.shape)


@dataclass
class TowerDecomposition:
    system: object
    towers: list
    complement: Clopen
    checks: dict = field(default_factory=dict)

    def rows(self):
        """Table rows: index, height or shape size, base measure, height * measure."""
        out = []
        for i, t in enumerate(self.towers):
            m = exact_measure(t.base)
            out.append((i, len(t.shape), m, len(t.shape) * m))
        return out

    def to_dict(self):
        return {
            "towers": [{"base": t.base.to_dict(), "shape": sorted(_jsonable(g) for g in t.shape)} for t in self.towers],
            "complement": self.complement.to_dict(),
        }


def _jsonable(g):
    return list(g) if isinstance(g, tuple) else g


def _cell_indices(system, Y: Clopen):
    """Occurrence mask of Y along a string, at Y's radius."""
    r = Y.radius

    def scan(s):
        return [j for j in range(r, len(s) - r) if s[j - r:j + r + 1] in Y.words]

    return scan


def first_return_analysis(system, Y: Clopen) -> ReturnData:
    """Exact return times J_1 < ... < J_K to Y and the sets Z_k of points returning at J_k."""
    if isinstance(system, ProductSystem):
        raise ValueError("first returns are defined for Z-systems")
    if Y.system != system:
        raise ValueError("Y belongs to another system")
    if Y.is_empty():
        raise ValueError("Y must be nonempty")
    if not system.minimal:
        raise ValueError("first return analysis needs a minimal system")
    if isinstance(system, Odometer):
        k = Y.radius
        B = system.modulus(k)
        res = sorted(system.decode(w) for w in Y.words)
        groups = {}
        for i, y in enumerate(res):
            nxt = res[(i + 1) % len(res)]
            gap = (nxt - y) % B or B
            groups.setdefault(gap, []).append(system.encode(y, k))
        returns = [(J, Clopen(system, k, groups[J], check=False)) for J in sorted(groups)]
        return ReturnData(system, Y, returns)

    r = Y.radius
    H = system.return_horizon(r)
    m = H + 2 * r + 1
    gaps = set()
    scan = _cell_indices(system, Y)
    for s in system.sweep(m):
        occ = scan(s)
        for a, b in zip(occ, occ[1:]):
            if b - a > H:
                raise ConsistencyError(f"gap {b - a} exceeds the proven horizon {H}")
            gaps.add(b - a)
    if not gaps:
        raise ValueError("no returning orbit found for Y")
    Jmax = max(gaps)
    R = r + Jmax
    groups = {}
    for w in system.words(R):
        if w[R - r:R + r + 1] not in Y.words:
            continue
        J = next((t for t in range(1, Jmax + 1) if w[R + t - r:R + t + r + 1] in Y.words), None)
        if J is None:
            raise ConsistencyError(f"no return within {Jmax} for cell {w}")
        groups.setdefault(J, []).append(w)
    returns = [(J, Clopen(system, R, groups[J], check=False)) for J in sorted(groups)]
    return ReturnData(system, Y, returns)


def check_partition(system, pieces) -> dict:
    """Do the sets sigma^i(Z) for (Z, heights) in `pieces` partition X?

    Scans every configuration at the common radius: each point must sit in
    exactly one translate. Returns counts of uncovered and doubly covered
    configurations with a witness of each.
    """
    if isinstance(system, ProductSystem):
        raise ValueError("partition scan works on single-factor systems; check the factors")
    R = max(Z.radius for Z, _ in pieces)
    span = max(max(abs(i) for i in shape) for _, shape in pieces)
    ct = configurations(system, R, span)
    count = np.zeros(len(ct), dtype=np.int64)
    for Z, shape in pieces:
        mask = ct.cell_mask(Z.at_radius(R))
        for i in shape:
            # x in sigma^i(Z)  <=>  sigma^{-i} x in Z
            count += mask[ct.column(-i)]
    holes = np.flatnonzero(count == 0)
    overlaps = np.flatnonzero(count > 1)
    return {
        "exact": bool(len(holes) == 0 and len(overlaps) == 0),
        "uncovered": int(len(holes)),
        "overlapping": int(len(overlaps)),
        "uncovered_witness": ct.keys[holes[0]] if len(holes) else None,
        "overlap_witness": ct.keys[overlaps[0]] if len(overlaps) else None,
        "configurations": len(ct),
    }


def kakutani_rokhlin(system, Y: Clopen) -> TowerDecomposition:
    """Towers (Z_k, {0..J_k-1}) over the first-return partition of Y."""
    rd = first_return_analysis(system, Y)
    towers = [Tower(Z, frozenset(range(J))) for J, Z in rd.returns]
    # clopen case: the boundary sets between columns are all empty; what must be
    # checked is that the Z_k are disjoint clopens filling Y
    zs = [Z for _, Z in rd.returns]
    disjoint = all(a.isdisjoint(b) for a, b in itertools.combinations(zs, 2))
    union = Clopen.empty(system)
    for Z in zs:
        union = union | Z
    part = check_partition(system, [(t.base, t.shape) for t in towers])
    checks = {
        "w_sets_empty": bool(disjoint and union == Y),
        "partition": part,
        "kac_sum": rd.kac_sum(),
    }
    return TowerDecomposition(system, towers, Clopen.empty(system), checks)


def _least_word_cylinder(system, radius):
    w = min(system.words(radius))
    return Clopen(system, radius, [w], check=False)


def _z_urp(system, K, eps):
    if not system.free:
        raise ValueError("URP towers need a free system")
    K = frozenset(K)
    threshold = 2 * len(K) / eps
    if isinstance(system, Odometer):
        k = 1
        while system.modulus(k) <= threshold:
            k += 1
        Y = Clopen(system, k, [system.encode(0, k)], check=False)
    elif isinstance(system, Substitution):
        rho = 1
        while True:
            Y = _least_word_cylinder(system, rho)
            rd = first_return_analysis(system, Y)
            if rd.heights[0] > threshold:
                break
            rho *= 2
    else:
        raise ValueError(f"no URP schedule for {system.kind}")
    td = kakutani_rokhlin(system, Y)
    td.checks["threshold"] = threshold
    return td


def urp_towers(system, K, eps: float) -> TowerDecomposition:
    """Disjoint clopen towers with (K, eps)-invariant shapes and empty complement."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(system, ProductSystem):
        return _product_urp(system, K, eps)
    td = _z_urp(system, K, eps)
    defects = [invariance_defect(t.shape, K) for t in td.towers]
    td.checks["defects"] = defects
    td.checks["invariant"] = all(d < eps for d in defects)
    if not td.checks["invariant"]:
        raise ConsistencyError(f"tower shapes not ({sorted(K)}, {eps})-invariant: {defects}")
    return td


def _product_urp(system, K, eps):
    d = system.rank
    K = frozenset(K)
    per_eps = eps / d
    for _ in range(20):
        parts = []
        for i, f in enumerate(system.factors):
            Ki = frozenset(k[i] for k in K) | {0}
            parts.append(_z_urp(f, Ki, per_eps))
        towers = []
        for combo in itertools.product(*(p.towers for p in parts)):
            R = max(t.base.radius for t in combo)
            words = itertools.product(*(sorted(t.base.at_radius(R).words) for t in combo))
            base = Clopen(system, R, words, check=False)
            shape = frozenset(itertools.product(*(sorted(t.shape) for t in combo)))
            towers.append(Tower(base, shape))
        defects = [invariance_defect(t.shape, K) for t in towers]
        if all(x < eps for x in defects):
            checks = {"defects": defects, "invariant": True, "factor_checks": [p.checks for p in parts]}
            return TowerDecomposition(system, towers, Clopen.empty(system), checks)
        per_eps /= 2
    raise ConsistencyError("could not reach the invariance target for the product")


# ----------------------------------------------------------------------------
# towers from a level function on a window
# ----------------------------------------------------------------------------

def build_tower_from_level_function(window, n_values, N: int, eps: float | None = None,
                                    delta: float | None = None, box: int | None = None):
    """Towers of height N from an integer level function along a window.

    F0 = sites where the level does not step up by one, F = the 2N-1 translates
    of F0, E_l = sites with level = l mod N, and
    B = (E_0 - F) & shift^-1(E_1 - F) & ... & shift^-(N-1)(E_{N-1} - F).
    Returns (sorted base indices, report).
    """
    n = np.asarray(n_values, dtype=np.int64)
    L = len(n)
    if N < 1:
        raise ValueError("N must be >= 1")
    if L < 4 * N + 1:
        raise ValueError(f"window of length {L} too short for N = {N}")
    if window is not None and len(window) != L:
        raise ValueError("level function and window lengths differ")
    F0 = np.zeros(L, dtype=bool)
    F0[:-1] = n[1:] != n[:-1] + 1
    F = np.zeros(L, dtype=bool)
    for j in range(-(N - 1), N):
        lo, hi = max(0, -j), min(L, L - j)
        F[lo + j:hi + j] |= F0[lo:hi]
    level = np.mod(n, N)
    good = np.ones(L, dtype=bool)
    for j in range(N):
        ok = np.zeros(L, dtype=bool)
        # site i needs i + j to be in E_j and outside F
        ok[:L - j] = (level[j:] == j) & ~F[j:]
        good &= ok
    B = np.flatnonzero(good)
    covered = np.zeros(L, dtype=bool)
    for j in range(N):
        covered[B + j] = True
    comp = ~covered
    band = 2 * N
    interior = comp[band:L - band]
    frac = float(interior.mean()) if len(interior) else 0.0
    if box is None:
        box = min(len(interior), 1000)
    c = np.concatenate([[0], np.cumsum(interior, dtype=np.int64)])
    ocap = float((c[box:] - c[:-box]).max()) / box if len(interior) >= box and box > 0 else frac
    report = {
        "N": N,
        "window_length": L,
        "bad_sites_F0": int(F0[:-1].sum()),
        "bad_sites_F": int(F.sum()),
        "bases": int(len(B)),
        "edge_band": band,
        "complement_fraction": frac,
        "complement_ocap_estimate": ocap,
        "ocap_box": box,
    }
    if delta is not None:
        bound = delta + N * (2 * N + 1) * delta
        report["delta"] = delta
        report["bound"] = bound
        report["edge_allowance"] = 2 * band / L
        report["within_bound"] = bool(frac <= bound + 2 * band / L and ocap <= bound + 2 * band / L)
    if eps is not None:
        report["eps"] = eps
        report["below_eps"] = bool(ocap < eps)
    return B, report


def perfect_level_function(window, Y: Clopen) -> np.ndarray:
    """A global counter along the window, zero at the first visit to Y."""
    lo, hi = window.valid_range(Y.radius)
    first = next(i for i in range(lo, hi) if window.member(Y, i))
    return np.arange(len(window), dtype=np.int64) - first


# ----------------------------------------------------------------------------
# tilings
# ----------------------------------------------------------------------------

@dataclass
class Tiling:
    """Tiles F_k = {0..J_k-1}; assignment maps a cell to (k, i) meaning x in sigma^i(Z_k),
    so the tile of T(x) containing 0 is F_k - i."""

    system: object
    radius: int
    tiles: list
    assignment: dict

    def tile_at(self, cell):
        k, i = self.assignment[cell]
        return frozenset(t - i for t in self.tiles[k])

    def to_dict(self):
        return {
            "radius": self.radius,
            "tiles": [sorted(t) for t in self.tiles],
            "assignment": {c: list(v) for c, v in sorted(self.assignment.items())},
        }


def tiling_from_returns(rd: ReturnData) -> Tiling:
    system = rd.system
    R = max(Z.radius for _, Z in rd.returns)
    Jmax = max(rd.heights)
    tiles = [frozenset(range(J)) for J in rd.heights]
    ct = configurations(system, R, Jmax)
    masks = [ct.cell_mask(Z.at_radius(R)) for _, Z in rd.returns]
    assign = {}
    if isinstance(system, Odometer):
        radius = R
        keys = [system.encode(v, R) for v in ct.keys]
    else:
        radius = R + Jmax
        keys = ct.keys
    for row, key in enumerate(keys):
        found = [(k, i) for k, (J, _) in enumerate(rd.returns) for i in range(J) if masks[k][ct.table[row, ct.span - i]]]
        if len(found) != 1:
            raise ConsistencyError(f"cell {key} lies in {len(found)} tower levels")
        assign[key] = found[0]
    return Tiling(system, radius, tiles, assign)


def _window_tiles(t: Tiling, window):
    lo, hi = window.valid_range(t.radius)
    cells = window.cells(t.radius)
    out = {}
    for n, c in zip(range(lo, hi), cells):
        out[n] = frozenset(n + s for s in t.tile_at(c))
    return lo, hi, out


def verify_tiling(t: Tiling, K, eps: float, box, samples) -> dict:
    """Check tile invariance, exactness of the induced partition on `box`
    around sampled points, and equivariance T(sigma x) = T(x) - 1.

    samples: iterable of OrbitWindow; every point of a window whose box and
    the tiles touching it lie in the valid range is used.
    """
    box = sorted(box)
    defects = [invariance_defect(F, K) for F in t.tiles]
    failures = []
    checked = 0
    equivariance_ok = True
    for si, w in enumerate(samples):
        lo, hi, tiles = _window_tiles(t, w)
        span = max(len(F) for F in t.tiles)
        for p in range(lo + span - box[0], hi - span - box[-1]):
            sites = [p + b for b in box]
            for s in sites:
                T = tiles[s]
                if s not in T or any(tiles.get(m) != T for m in T):
                    failures.append({"sample": si, "point": p, "site_offset": s - p})
                    break
            checked += 1
            # the tile seen from sigma x is the tile seen from x, moved by -1
            here = t.tile_at(w.cell(p, t.radius))
            if 1 in here:
                there = t.tile_at(w.cell(p + 1, t.radius))
                if there != frozenset(x - 1 for x in here):
                    equivariance_ok = False
            if len(failures) >= 20:
                break
    return {
        "tile_defects": defects,
        "tiles_invariant": all(d < eps for d in defects),
        "points_checked": checked,
        "exact": not failures,
        "failures": failures,
        "equivariant": equivariance_ok,
        "continuity_radius": t.radius,
    }
