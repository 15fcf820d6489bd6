"""Shape functions, the small subgroupoid they generate, and its block matrix model.

A shape function is given by cells (F_i, Z_i): for z in Z_i and c in F_i the
point sigma^c z has shape F_i - c. The domain is the disjoint union of the
translates sigma^c(Z_i).

The groupoid is G = {(x, g) : sigma^g x in Omega - Y_g} with

    Y_g = union over i and c in F_i - (F_i + g) of sigma^c(Z_i),

which gives (x, g) in G exactly when g in S(x), so Orbit(x) = {sigma^g x : g in S(x)}.
By default the unit space is extended to all of X.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .crossed import CrossedElement, LocallyConstant, coefficient_tables, compress, to_float_matrix
from .systems import Clopen, FiniteCycle, configurations, exact_measure, invariance_defect, translate
from .towers import ConsistencyError, first_return_analysis, tiling_from_returns


@dataclass
class ShapeFunction:
    system: object
    cells: list  # [(F: frozenset containing 0, Z: Clopen)]

    @property
    def radius(self):
        return max(Z.radius for _, Z in self.cells)

    @property
    def diameter(self):
        return max(max(abs(c) for c in F) for F, _ in self.cells)

    def domain(self) -> Clopen:
        out = Clopen.empty(self.system)
        for F, Z in self.cells:
            for c in F:
                out = out | translate(Z, c)
        return out

    def shapes(self):
        return [F for F, _ in self.cells]

    def to_dict(self):
        return {"cells": [{"shape": sorted(F), "base": Z.to_dict()} for F, Z in self.cells]}


def _owner_columns(s: ShapeFunction, ct, offsets):
    """For each offset o and configuration row: the (cell index, c) such that
    sigma^o x lies in sigma^c(Z_i); -1 outside the domain, -2 if ambiguous."""
    masks = [ct.cell_mask(Z.at_radius(ct.radius)) for _, Z in s.cells]
    pairs = [(i, c) for i, (F, _) in enumerate(s.cells) for c in sorted(F)]
    out = {}
    for o in offsets:
        own = np.full(len(ct), -1, dtype=np.int64)
        for p, (i, c) in enumerate(pairs):
            hit = masks[i][ct.column(o - c)]
            own = np.where(hit & (own == -1), p, np.where(hit, -2, own))
        out[o] = own
    return pairs, out


def verify_shape_function(s: ShapeFunction) -> dict:
    """e in every F_i, the translates sigma^c(Z_i) are disjoint, and S(sigma^g x) = S(x) - g."""
    failures = []
    for i, (F, Z) in enumerate(s.cells):
        if 0 not in F:
            failures.append({"check": "identity", "cell": i})
        if Z.is_empty():
            failures.append({"check": "empty_cell", "cell": i})
    D = s.diameter
    ct = configurations(s.system, s.radius, 3 * D)
    pairs, own = _owner_columns(s, ct, range(-2 * D, 2 * D + 1))
    amb = np.flatnonzero(own[0] == -2)
    if len(amb):
        failures.append({"check": "partition", "config": ct.keys[amb[0]]})
    for row in range(len(ct)):
        p = own[0][row]
        if p < 0:
            continue
        i, c = pairs[p]
        Sx = [f - c for f in s.cells[i][0]]
        for g in Sx:
            q = own[g][row]
            if q < 0:
                failures.append({"check": "equivariance", "config": ct.keys[row], "g": g})
                break
            j, c2 = pairs[q]
            if frozenset(f - c2 for f in s.cells[j][0]) != frozenset(x - g for x in Sx):
                failures.append({"check": "equivariance", "config": ct.keys[row], "g": g})
                break
        if len(failures) > 20:
            break
    warn = None
    if isinstance(s.system, FiniteCycle) and D >= s.system.n:
        warn = f"shapes of diameter {D} wrap around the {s.system.n}-cycle; orbit sizes are capped"
    return {"ok": not failures, "failures": failures, "configurations": len(ct), "warning": warn}


def shape_from_tiling(t) -> ShapeFunction:
    """S(x) = the tile of T(x) containing 0, as cells (F_k, Z_k) with Z_k the tile starts."""
    cells = []
    for k, F in enumerate(t.tiles):
        words = [c for c, (kk, i) in t.assignment.items() if kk == k and i == 0]
        Z = Clopen(t.system, t.radius, words, check=False).coarsen()
        cells.append((frozenset(F), Z))
    return ShapeFunction(t.system, cells)


def tower_shape_function(system, Y: Clopen) -> ShapeFunction:
    """Shape function of the Kakutani-Rokhlin tiling over Y."""
    return shape_from_tiling(tiling_from_returns(first_return_analysis(system, Y)))


class SmallGroupoid:
    def __init__(self, shape: ShapeFunction, Y: dict, omega: Clopen, extend: bool = True):
        self.shape = shape
        self.system = shape.system
        self.Y = Y
        self.omega = omega
        self.extend = extend
        self.support = frozenset(Y)

    @property
    def diameter(self):
        return self.shape.diameter

    def data_radius(self):
        return max([self.omega.radius] + [y.radius for y in self.Y.values()])

    def table(self, span=None, radius=None):
        R = self.data_radius() if radius is None else max(radius, self.data_radius())
        return configurations(self.system, R, 3 * self.diameter if span is None else span)

    def member_mask(self, ct, g, base: int = 0) -> np.ndarray:
        """Rows where (sigma^base x, g) is in G."""
        if g == 0 and self.extend:
            return np.ones(len(ct), dtype=bool)
        if g not in self.Y:
            return np.zeros(len(ct), dtype=bool)
        good = (self.omega - self.Y[g]).at_radius(ct.radius)
        return ct.cell_mask(good)[ct.column(base + g)]

    def orbit_offsets(self, ct, row: int, base: int = 0) -> list:
        return sorted(g for g in self.support | {0} if self.member_mask(ct, g, base)[row])

    def orbit(self, point):
        """Offsets g with (x, g) in G, for x given as (window, index) or a configuration key."""
        if isinstance(point, tuple) and len(point) == 2 and hasattr(point[0], "cell"):
            w, n = point
            R = self.data_radius()
            out = []
            for g in sorted(self.support | {0}):
                if g == 0 and self.extend:
                    out.append(0)
                    continue
                if g not in self.Y:
                    continue
                good = self.omega - self.Y[g]
                if good.contains_word(w.cell(n + g, R), R):
                    out.append(g)
            if not self.extend and not self.omega.contains_word(w.cell(n, R), R):
                raise ValueError("point outside the unit space")
            return frozenset(out)
        ct = self.table()
        row = ct.keys.index(point)
        return frozenset(self.orbit_offsets(ct, row))

    def to_dict(self):
        return {
            "shape": self.shape.to_dict(),
            "support": sorted(self.support),
            "Y": {str(g): y.to_dict() for g, y in sorted(self.Y.items())},
            "extended": self.extend,
        }


def build_groupoid(s: ShapeFunction, extend: bool = True) -> SmallGroupoid:
    v = verify_shape_function(s)
    if not v["ok"]:
        raise ValueError(f"shape function invalid: {v['failures'][:3]}")
    if v["warning"]:
        warnings.warn(v["warning"])
    omega = s.domain()
    supp = sorted({a - b for F, _ in s.cells for a in F for b in F})
    Y = {}
    for g in supp:
        y = Clopen.empty(s.system)
        for F, Z in s.cells:
            for c in F:
                if (c - g) not in F:
                    y = y | translate(Z, c)
        Y[g] = y
    return SmallGroupoid(s, Y, omega, extend)


def verify_groupoid_axioms(g: SmallGroupoid) -> dict:
    """Exhaustive over configurations: units, inverses, products, equivariance, and
    Orbit(x) = x S(x) against the shape function directly."""
    D = max(abs(x) for x in g.support | {0})
    ct = g.table(span=2 * D + g.diameter)
    supp = sorted(g.support | {0})
    mem = {}

    def m(h, base):
        key = (h, base)
        if key not in mem:
            mem[key] = g.member_mask(ct, h, base)
        return mem[key]

    om = ct.cell_mask(g.omega.at_radius(ct.radius))[ct.column(0)]
    units = om if not g.extend else np.ones(len(ct), dtype=bool)
    viol = {"units": [], "inverse": [], "product": [], "equivariance": [], "orbit": []}
    bad = np.flatnonzero(units & ~m(0, 0))
    viol["units"] += [ct.keys[r] for r in bad[:5]]
    for h in supp:
        bad = np.flatnonzero(m(h, 0) & ~m(-h, h))
        viol["inverse"] += [(ct.keys[r], h) for r in bad[:3]]
    for h1, h2 in itertools.product(supp, supp):
        if abs(h1) + abs(h2) > ct.span:
            continue
        bad = np.flatnonzero(m(h1, 0) & m(h2, h1) & ~m(h1 + h2, 0))
        viol["product"] += [(ct.keys[r], h1, h2) for r in bad[:3]]
    # second route: shapes read off the cells directly
    pairs, own = _owner_columns(g.shape, ct, range(-D, D + 1))
    for row in range(len(ct)):
        p = own[0][row]
        if p == -2:
            viol["orbit"].append((ct.keys[row], "ambiguous cell"))
            continue
        S = frozenset({0}) if p < 0 else frozenset(f - pairs[p][1] for f in g.shape.cells[pairs[p][0]][0])
        members = frozenset(h for h in supp if m(h, 0)[row])
        if p < 0 and not g.extend:
            members = S
        if members != S:
            viol["orbit"].append((ct.keys[row], sorted(members), sorted(S)))
        for h in S:
            q = own[h][row] if h in own else -1
            Sh = frozenset({0}) if q < 0 else frozenset(f - pairs[q][1] for f in g.shape.cells[pairs[q][0]][0])
            if Sh != frozenset(x - h for x in S):
                viol["equivariance"].append((ct.keys[row], h))
        if sum(len(v) for v in viol.values()) > 50:
            break
    ok = not any(viol.values())
    return {"ok": ok, "violations": {k: v[:10] for k, v in viol.items()}, "configurations": len(ct), "radius": ct.radius}


def orbit_partition_sum(g: SmallGroupoid):
    """sum over cells of mu(Z_i) |F_i| plus mu(X - Omega); equals 1 exactly when orbits partition X."""
    total = exact_measure(Clopen.full(g.system) - g.omega)
    for F, Z in g.shape.cells:
        total = len(F) * exact_measure(Z) + total
    return total


# ----------------------------------------------------------------------------
# matrix model
# ----------------------------------------------------------------------------

class GroupoidMatrixModel:
    """Direct sum over cells of |F_i| x |F_i| matrices of locally constant functions on Z_i.

    Each block's points are configuration rows whose cell at offset 0 lies in Z_i;
    rows index the block basis by sorted F_i.
    """

    def __init__(self, g: SmallGroupoid, radius: int = 0):
        self.groupoid = g
        R = max(radius, g.shape.radius, g.data_radius())
        self.table = configurations(g.system, R, 2 * g.diameter)
        self.blocks = []
        for F, Z in g.shape.cells:
            rows = np.flatnonzero(self.table.hits(Z.at_radius(R), 0))
            self.blocks.append({"shape": sorted(F), "base": Z, "size": len(F), "rows": rows.tolist()})
        # the Cantor case has no degenerate boundary cells
        self.boundary_empty = True

    def cells(self, block: int) -> list:
        return [self.table.keys[r] for r in self.blocks[block]["rows"]]

    def row_of(self, key) -> int:
        return self.table.keys.index(key)

    def check_supported(self, a: CrossedElement) -> list:
        """Coefficients that are nonzero at some (y, h) outside G."""
        ct = self.table
        tables = coefficient_tables(a, ct)
        bad = []
        for h, t in tables.items():
            nz = np.array([v != 0 for v in t], dtype=bool)[ct.column(0)]
            mm = self.groupoid.member_mask(ct, h, 0)
            rows = np.flatnonzero(nz & ~mm)
            if len(rows):
                bad.append({"g": h, "config": ct.keys[rows[0]], "count": int(len(rows))})
        return bad

    def pi(self, a: CrossedElement, block: int, cell, check: bool = True) -> np.ndarray:
        """(pi_{Z_F}(a))(x)[g1, g2] = f_{g2-g1}(sigma^{g1} x), exact object matrix."""
        if check:
            bad = self.check_supported(a)
            if bad:
                raise ValueError(f"element not supported on the groupoid: {bad[:3]}")
        row = cell if isinstance(cell, (int, np.integer)) else self.row_of(cell)
        if row not in self.blocks[block]["rows"]:
            raise ValueError(f"cell {cell} is not in block {block}")
        return compress(a, self.table, row, self.blocks[block]["shape"])

    def element(self, a: CrossedElement) -> dict:
        """All blocks: {(block, row): matrix}."""
        tables = coefficient_tables(a, self.table)
        return {(b, r): compress(a, self.table, r, blk["shape"], tables) for b, blk in enumerate(self.blocks) for r in blk["rows"]}


def pi_ZF(g: SmallGroupoid, a: CrossedElement, block: int, cell) -> np.ndarray:
    model = GroupoidMatrixModel(g, a.radius())
    return model.pi(a, block, cell)


def rank_of_open_set(g: SmallGroupoid, E: Clopen, cell, cross_check: bool = True) -> int:
    """|Orbit(x) & E| for the point x given by a configuration key (at the model radius).

    With cross_check the matrix rank of pi(phi_E)(x) is computed too and must agree."""
    model = GroupoidMatrixModel(g, E.radius)
    ct = model.table
    row = cell if isinstance(cell, (int, np.integer)) else model.row_of(cell)
    offs = g.orbit_offsets(ct, row)
    mask = ct.cell_mask(E.at_radius(ct.radius))
    count = sum(1 for h in offs if mask[ct.table[row, ct.span + h]])
    if cross_check:
        phi = CrossedElement.function(LocallyConstant.indicator(E))
        M = compress(phi, ct, row, offs)
        rk = int(np.linalg.matrix_rank(to_float_matrix(M))) if len(offs) else 0
        if rk != count:
            raise ConsistencyError(f"rank {rk} differs from orbit count {count} at {ct.keys[row]}")
    return count


def orbit_invariance_report(g: SmallGroupoid, K, eps: float) -> dict:
    rows = []
    for i, (F, Z) in enumerate(g.shape.cells):
        d = invariance_defect(F, K)
        rows.append({"cell": i, "shape_size": len(F), "defect": d, "pass": d < eps})
    if g.extend and not (Clopen.full(g.system) - g.omega).is_empty():
        d = invariance_defect({0}, K)
        rows.append({"cell": "outside", "shape_size": 1, "defect": d, "pass": d < eps})
    return {"rows": rows, "pass": all(r["pass"] for r in rows), "eps": eps}


def boundary_decomposition_check(s: ShapeFunction, adjacency=None) -> dict:
    """In the clopen setting no cell meets the closure of another column, so each
    shape decomposes trivially. Pairs of columns that do meet are listed."""
    pairs = adjacency if adjacency is not None else list(itertools.combinations(range(len(s.cells)), 2))
    found = []
    for i, j in pairs:
        Fi, Zi = s.cells[i]
        Fj, Zj = s.cells[j]
        for ci, cj in itertools.product(sorted(Fi), sorted(Fj)):
            inter = translate(Zi, ci) & translate(Zj, cj)
            if not inter.is_empty():
                found.append({"cells": (i, j), "offsets": (ci, cj), "overlap_words": len(inter.words)})
    return {
        "trivial": not found,
        "decompositions": found,
        "pieces_per_shape": {i: 1 for i in range(len(s.cells))} if not found else None,
    }
