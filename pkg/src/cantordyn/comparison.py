"""Dynamical subequivalence, the quarter criterion, rank comparison with explicit
Cuntz witnesses, cut-downs and divisible elements."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .crossed import CrossedElement, LocallyConstant, cut, cut_down_crossed
from .systems import (
    Clopen,
    FiniteCycle,
    Odometer,
    configurations,
    exact_measure,
    translate,
)

QUARTER = Fraction(1, 4)


def as_fraction(x) -> Fraction:
    """Floats are read through their decimal repr, so 0.3 means 3/10."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


# ----------------------------------------------------------------------------
# dynamical subequivalence
# ----------------------------------------------------------------------------

@dataclass
class SubequivalenceWitness:
    pieces: list  # [(A_i: Clopen, g_i)]

    def validate(self, A: Clopen, B: Clopen) -> dict:
        """Exact check: the A_i partition A, their images are disjoint and inside B."""
        union = Clopen.empty(A.system)
        disjoint_pieces = True
        for P, _ in self.pieces:
            if not union.isdisjoint(P):
                disjoint_pieces = False
            union = union | P
        images = [translate(P, g) for P, g in self.pieces]
        disjoint_images = all(a.isdisjoint(b) for a, b in itertools.combinations(images, 2))
        inside = all(im.issubset(B) for im in images)
        ok = disjoint_pieces and union == A and disjoint_images and inside
        return {"valid": ok, "partition": disjoint_pieces and union == A,
                "disjoint_images": disjoint_images, "inside_B": inside}

    def to_dict(self):
        return {"pieces": [{"piece": P.to_dict(), "translation": g} for P, g in self.pieces]}


@dataclass
class NotFound:
    radius: int
    window: tuple
    reason: str = "no assignment at this radius and translation window"
    exhaustive: bool = True

    def __bool__(self):
        return False

    def to_dict(self):
        return {"found": False, "radius": self.radius, "window": list(self.window),
                "reason": self.reason, "exhaustive": self.exhaustive}


def _preference(translations):
    return sorted(set(translations), key=lambda g: (abs(g), g))


def _merge(system, radius, assignment):
    by_g = {}
    for cell, g in assignment:
        by_g.setdefault(g, []).append(cell)
    return SubequivalenceWitness(
        [(Clopen(system, radius, cells, check=False), g) for g, cells in sorted(by_g.items(), key=lambda t: (abs(t[0]), t[0]))]
    )


def _cell_permutation(system, R):
    """For systems whose action permutes the radius-R cells: cell -> (g -> image cell)."""
    if isinstance(system, Odometer):
        B = system.modulus(R)
        return lambda w, g: system.encode((system.decode(w) + g) % B, R)
    if isinstance(system, FiniteCycle):
        return lambda w, g: system.point_word(system.position(w, R) + g, 2 * R + 1, -R)
    return None


def _kuhn(left, options):
    """Maximum matching by augmenting paths, trying options in the given order."""
    match_right = {}

    def augment(a, seen):
        for g, b in options[a]:
            if b in seen:
                continue
            seen.add(b)
            if b not in match_right or augment(match_right[b][0], seen):
                match_right[b] = (a, g)
                return True
        return False

    for a in left:
        if not augment(a, set()):
            return None
    return {a: g for b, (a, g) in match_right.items()}


def _csp(atoms, options, budget):
    """Pick one option per atom with pairwise disjoint image sets (depth-first search)."""
    order = sorted(atoms, key=lambda a: (len(options[a]), a))
    chosen = {}
    used = set()
    nodes = [0]

    def go(k):
        if k == len(order):
            return True
        a = order[k]
        for g, img in options[a]:
            nodes[0] += 1
            if nodes[0] > budget:
                raise TimeoutError
            if used.isdisjoint(img):
                used.update(img)
                chosen[a] = g
                if go(k + 1):
                    return True
                used.difference_update(img)
                del chosen[a]
        return False

    return chosen if go(0) else None


def dynamical_compare(system, A: Clopen, B: Clopen, translations, budget: int = 10**6):
    """Find a partition of A into pieces translated disjointly into B.

    Pieces are unions of cells at the common radius of A and B, translations come
    from `translations`. For odometers and cycles the action permutes those cells
    and the search is a bipartite matching (augmenting paths, smaller |g| first).
    Subshifts use an exact depth-first search on the image words. NotFound only
    speaks about the given radius and window.
    """
    translations = list(translations)
    if not translations:
        raise ValueError("translation set must be nonempty")
    if A.system != system or B.system != system:
        raise ValueError("A and B must belong to the system")
    window = tuple(sorted(set(translations)))
    R = max(A.radius, B.radius)
    if A.is_empty():
        return SubequivalenceWitness([])
    pref = _preference(translations)
    Aw = sorted(A.at_radius(R).words)
    Bw = B.at_radius(R).words
    perm = _cell_permutation(system, R)
    if perm is not None:
        options = {a: [(g, perm(a, g)) for g in pref if perm(a, g) in Bw] for a in Aw}
        m = _kuhn(Aw, options)
        if m is None:
            return NotFound(R, window)
        return _merge(system, R, [(a, m[a]) for a in Aw])
    W = max(abs(g) for g in window)
    RW = R + W
    options = {}
    Bset = set(Bw)
    for a in Aw:
        opts = []
        for g in pref:
            r2, img = system.translate_words([a], R, g)
            if all(system.restrict(w, r2, R) in Bset for w in img):
                opts.append((g, frozenset(system.refine_words(img, r2, RW))))
        options[a] = opts
    try:
        chosen = _csp(Aw, options, budget)
    except TimeoutError:
        return NotFound(R, window, reason=f"search budget of {budget} nodes exhausted", exhaustive=False)
    if chosen is None:
        return NotFound(R, window)
    return _merge(system, R, [(a, chosen[a]) for a in Aw])


def window_threshold(td) -> int:
    """The heuristic translation window: 4 x the largest tower height."""
    return 4 * max(len(t.shape) for t in td.towers)


# ----------------------------------------------------------------------------
# quarter criterion
# ----------------------------------------------------------------------------

def _orbit_counts(g, E: Clopen, F: Clopen):
    R = max(E.radius, F.radius)
    ct = g.table(radius=R)
    mE = ct.cell_mask(E.at_radius(ct.radius))
    mF = ct.cell_mask(F.at_radius(ct.radius))
    supp = sorted(g.support | {0})
    size = np.zeros(len(ct), dtype=np.int64)
    nE = np.zeros(len(ct), dtype=np.int64)
    nF = np.zeros(len(ct), dtype=np.int64)
    for h in supp:
        m = g.member_mask(ct, h, 0)
        col = ct.column(h)
        size += m
        nE += m & mE[col]
        nF += m & mF[col]
    return ct, size, nE, nF


def quarter_criterion(g, E: Clopen, F: Clopen, lam=QUARTER) -> dict:
    """|Orbit(x) & E| < lam |Orbit(x) & F| for all x, and
    1/|Orbit(x0)| < lam |Orbit(x) & F| / |Orbit(x)| for all x0, x."""
    lam = as_fraction(lam)
    ct, size, nE, nF = _orbit_counts(g, E, F)
    slack1 = None
    worst1 = None
    for row in range(len(ct)):
        s = lam * int(nF[row]) - int(nE[row])
        if slack1 is None or s < slack1:
            slack1, worst1 = s, row
    max_inv = Fraction(1, int(size.min()))
    min_ratio = None
    worst2 = None
    for row in range(len(ct)):
        q = lam * Fraction(int(nF[row]), int(size[row]))
        if min_ratio is None or q < min_ratio:
            min_ratio, worst2 = q, row
    slack2 = min_ratio - max_inv
    return {
        "first": slack1 > 0,
        "second": slack2 > 0,
        "pass": slack1 > 0 and slack2 > 0,
        "slack_first": slack1,
        "slack_second": slack2,
        "worst_first": ct.keys[worst1],
        "worst_second": ct.keys[worst2],
        "lambda": lam,
        "configurations": len(ct),
    }


def measure_gap_check(system, E: Clopen, F: Clopen, lam) -> bool:
    """mu(E) < lam mu(F) for the unique invariant measure, exactly."""
    lam = as_fraction(lam)
    return exact_measure(E) < lam * exact_measure(F)


# ----------------------------------------------------------------------------
# diagonal elements
# ----------------------------------------------------------------------------

@dataclass
class DiagonalElement:
    """Diagonal entries per (block, cell); each cell carries its measure."""

    sizes: list
    entries: dict  # (block, cell) -> tuple of values
    weights: dict = field(default_factory=dict)

    def ranks(self, tol=0) -> dict:
        return {k: sum(1 for v in e if v > tol) for k, e in self.entries.items()}

    def map(self, fn) -> "DiagonalElement":
        return DiagonalElement(self.sizes, {k: tuple(fn(v) for v in e) for k, e in self.entries.items()}, self.weights)

    def max(self):
        return max((max(e, default=0) for e in self.entries.values()), default=0)

    def trace(self):
        """sum over cells of weight x sum of entries."""
        total = 0
        for k, e in self.entries.items():
            total = self.weights[k] * sum(e, 0) + total
        return total


def diagonal_from_function(model, f: LocallyConstant) -> DiagonalElement:
    """Entries f(sigma^g x), g in F_i, for every cell of a GroupoidMatrixModel."""
    ct = model.table
    if f.radius > ct.radius:
        raise ValueError("function radius exceeds the model radius")
    vals = f.cell_vector(ct.cells, ct.radius)
    weights_all = ct.weights()
    entries, weights = {}, {}
    for b, blk in enumerate(model.blocks):
        for r in blk["rows"]:
            entries[(b, ct.keys[r])] = tuple(vals[ct.table[r, ct.span + o]] for o in blk["shape"])
            weights[(b, ct.keys[r])] = weights_all[r]
    return DiagonalElement([blk["size"] for blk in model.blocks], entries, weights)


def diagonal_indicator(model, E: Clopen) -> DiagonalElement:
    return diagonal_from_function(model, LocallyConstant.indicator(E))


def rank_compare_diagonal(a: DiagonalElement, b: DiagonalElement, lam=QUARTER) -> dict:
    """Per-cell ranks with the <= verdict and the lam verdict (zero cells of a pass trivially)."""
    lam = as_fraction(lam)
    if set(a.entries) != set(b.entries):
        raise ValueError("a and b live on different models")
    ra, rb = a.ranks(), b.ranks()
    table = []
    le_ok = q_ok = True
    for k in sorted(ra, key=str):
        le = ra[k] <= rb[k]
        q = ra[k] == 0 or ra[k] < lam * rb[k]
        le_ok &= le
        q_ok &= q
        table.append({"cell": k, "rank_a": ra[k], "rank_b": rb[k], "le": le, "quarter": q})
    return {"le_pass": le_ok, "quarter_pass": q_ok, "rows": table, "lambda": lam}


def cut_down(a, eps, window=None):
    """(a - eps)_+.

    Diagonal elements and functions are cut entrywise (exact). A general crossed
    element is cut on the regular representation over `window` and the window
    matrix is returned.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if isinstance(a, DiagonalElement):
        return a.map(lambda t: cut(t, eps))
    if isinstance(a, LocallyConstant):
        return a.map(lambda t: cut(t, eps))
    if isinstance(a, CrossedElement):
        if set(a.coeffs) <= {0}:
            return CrossedElement.function(a.coefficient(0).map(lambda t: cut(t, eps)))
        if window is None:
            raise ValueError("a window is needed to cut a non-diagonal element")
        return cut_down_crossed(a, eps, window)
    raise TypeError(f"cannot cut {type(a).__name__}")


@dataclass
class CuntzWitness:
    eps: float
    matrices: dict
    errors: dict
    norms: dict

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def max_norm(self):
        return max(self.norms.values(), default=0.0)

    def valid(self, slack=1e-9) -> bool:
        return self.max_error <= self.eps + slack and self.max_norm <= 1 + slack


def cuntz_witness_diagonal(a: DiagonalElement, b: DiagonalElement, eps: float, model=None) -> CuntzWitness:
    """Per cell, a partial permutation with scaling s with s* b s close to (a - eps)_+.

    The largest entries of (a - eps)_+ are matched to the largest entries of b;
    scales are sqrt((a_i - eps) / b_j) capped at 1 so that ||s|| <= 1.
    """
    if set(a.entries) != set(b.entries):
        raise ValueError("a and b live on different models")
    mats, errs, norms = {}, {}, {}
    for k in sorted(a.entries, key=str):
        av = np.array([float(v) for v in a.entries[k]])
        bv = np.array([float(v) for v in b.entries[k]])
        n = len(av)
        src = [i for i in sorted(range(n), key=lambda i: (-av[i], i)) if av[i] > eps]
        dst = [j for j in sorted(range(n), key=lambda j: (-bv[j], j)) if bv[j] > 0]
        if len(src) > len(dst):
            raise ValueError(f"rank precondition fails at cell {k}: rank (a-eps)_+ = {len(src)} > rank b = {len(dst)}")
        s = np.zeros((n, n))
        for i, j in zip(src, dst):
            s[j, i] = min(1.0, math.sqrt((av[i] - eps) / bv[j]))
        target = np.diag(np.maximum(av - eps, 0.0))
        err = float(np.abs(s.T @ np.diag(bv) @ s - target).max()) if n else 0.0
        mats[k] = s
        errs[k] = err
        norms[k] = float(np.abs(s).max()) if n else 0.0
    return CuntzWitness(eps, mats, errs, norms)


# ----------------------------------------------------------------------------
# divisible elements
# ----------------------------------------------------------------------------

@dataclass
class DivisibleElement:
    h0: LocallyConstant
    ones: int
    F: Clopen
    d: object
    d_model: object
    levels: list
    diagonal: DiagonalElement
    report: dict

    def blocks(self):
        return 1 + self.ones


def build_divisible_element(system, towers, r, eps) -> DivisibleElement:
    """h = diag(h0, 1, ..., 1) with floor(r) ones and h0 the indicator of the lowest
    ceil({r} |G_s|) levels of each tower, so that |d_mu(h) - r| < eps."""
    rq = as_fraction(r)
    if rq <= 0:
        raise ValueError("r must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = math.floor(rq)
    frac = rq - m
    levels = []
    for t in towers.towers:
        hgt = len(t.shape)
        k = math.ceil(frac * hgt)
        if abs(Fraction(k, hgt) - frac) >= as_fraction(eps):
            need = math.floor(1 / as_fraction(eps)) + 1
            raise ValueError(f"tower of height {hgt} too short for r = {r}, eps = {eps}; height {need} always suffices")
        levels.append(sorted(t.shape)[:k])
    F = Clopen.empty(system)
    for t, lev in zip(towers.towers, levels):
        for g in lev:
            F = F | translate(t.base, g)
    # route 1: level counting
    d = Fraction(m)
    for t, lev in zip(towers.towers, levels):
        d = len(lev) * exact_measure(t.base) + d
    # route 2: diagonal model over tower columns, evaluating F along each column
    R = max([F.radius] + [t.base.radius for t in towers.towers])
    span = max(max(abs(g) for g in t.shape) for t in towers.towers)
    ct = configurations(system, R, span)
    mF = ct.cell_mask(F.at_radius(R))
    w = ct.weights()
    entries, weights = {}, {}
    for b, t in enumerate(towers.towers):
        base_rows = np.flatnonzero(ct.hits(t.base.at_radius(R), 0))
        for row in base_rows:
            key = (b, ct.keys[row])
            entries[key] = tuple(int(mF[ct.table[row, ct.span + g]]) for g in sorted(t.shape))
            weights[key] = w[row]
    diag = DiagonalElement([len(t.shape) for t in towers.towers], entries, weights)
    # lim_n tau(h^(1/n)): entries in {0, 1} are fixed by t -> t^(1/n), so the limit is the support count
    d_model = Fraction(m)
    for k, e in entries.items():
        d_model = weights[k] * sum(1 for v in e if v > 0) + d_model
    h0 = LocallyConstant.indicator(F)
    muF = exact_measure(F)
    report = {
        "r": rq,
        "eps": eps,
        "d": d,
        "d_model": d_model,
        "agree": d == d_model,
        "error": abs(float(d) - float(rq)),
        "within_eps": abs(d - rq) < as_fraction(eps),
        "mu_F": muF,
        "mu_F_ok": muF >= frac - as_fraction(eps),
        "levels": [len(x) for x in levels],
        "heights": [len(t.shape) for t in towers.towers],
    }
    return DivisibleElement(h0, m, F, d, d_model, levels, diag, report)
