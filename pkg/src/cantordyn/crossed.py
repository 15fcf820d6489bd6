"""Crossed-product numerics for C(X) x| Z.

Elements are finite sums sum_g f_g u_g with locally constant f_g. The
covariance relation is u_g f u_g* = f o sigma^g, so

    (f u_g)(h u_k) = f (h o sigma^g) u_{g+k},    (f u_g)* = (conj(f) o sigma^-g) u_{-g}.

On an orbit window the regular representation is

    (f xi)(n) = f(sigma^n x) xi(n),    (u_g xi)(n) = xi(n + g),

truncated to the window; this is the direction compatible with the covariance
relation above.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .systems import (
    Clopen,
    Odometer,
    configurations,
    exact_measure,
    interior,
    invariance_defect,
    sumset,
    translate,
)
from .towers import ConsistencyError, first_return_analysis

DENSE_LIMIT = 512


def _zero(v) -> bool:
    return v == 0


def _conj(v):
    return v.conjugate() if isinstance(v, complex) else v


class LocallyConstant:
    """A function on X that is constant on the cells of some radius; missing cells are 0."""

    __slots__ = ("system", "radius", "values")

    def __init__(self, system, radius: int, values=None):
        self.system = system
        self.radius = radius
        self.values = {w: v for w, v in (values or {}).items() if not _zero(v)}

    @classmethod
    def constant(cls, system, c):
        return cls(system, 0, {w: c for w in system.words(0)})

    @classmethod
    def indicator(cls, E: Clopen, value=1):
        return cls(E.system, E.radius, {w: value for w in E.words})

    def __call__(self, word, radius=None):
        if radius is None:
            radius = self.radius
        return self.values.get(self.system.restrict(word, radius, self.radius), 0)

    def at_radius(self, R: int) -> "LocallyConstant":
        if R == self.radius:
            return self
        if R < self.radius:
            raise ValueError("cannot coarsen a function implicitly")
        out = {}
        for w, v in self.values.items():
            for w2 in self.system.refine_words([w], self.radius, R):
                out[w2] = v
        return LocallyConstant(self.system, R, out)

    def _pair(self, other):
        if self.system != other.system:
            raise ValueError("functions over different systems")
        R = max(self.radius, other.radius)
        return R, self.at_radius(R), other.at_radius(R)

    def __add__(self, other):
        if not isinstance(other, LocallyConstant):
            other = LocallyConstant.constant(self.system, other)
        R, a, b = self._pair(other)
        keys = set(a.values) | set(b.values)
        return LocallyConstant(self.system, R, {w: a.values.get(w, 0) + b.values.get(w, 0) for w in keys})

    __radd__ = __add__

    def __neg__(self):
        return LocallyConstant(self.system, self.radius, {w: -v for w, v in self.values.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, LocallyConstant) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, LocallyConstant):
            return LocallyConstant(self.system, self.radius, {w: v * other for w, v in self.values.items()})
        R, a, b = self._pair(other)
        return LocallyConstant(self.system, R, {w: v * b.values[w] for w, v in a.values.items() if w in b.values})

    __rmul__ = __mul__

    def map(self, fn) -> "LocallyConstant":
        """Pointwise fn, applied to every cell including the zero ones."""
        return LocallyConstant(self.system, self.radius, {w: fn(self.values.get(w, 0)) for w in self.system.words(self.radius)})

    def conj(self):
        return LocallyConstant(self.system, self.radius, {w: _conj(v) for w, v in self.values.items()})

    def shift(self, g: int) -> "LocallyConstant":
        """f o sigma^g."""
        if g == 0 or not self.values:
            return self
        s = self.system
        if isinstance(s, Odometer):
            B = s.modulus(self.radius)
            return LocallyConstant(s, self.radius, {s.encode((s.decode(w) - g) % B, self.radius): v for w, v in self.values.items()})
        r = self.radius
        R = r + abs(g)
        lo = R + g - r
        out = {}
        for w in s.words(R):
            v = self.values.get(w[lo:lo + 2 * r + 1])
            if v is not None:
                out[w] = v
        return LocallyConstant(s, R, out)

    def support(self) -> Clopen:
        return Clopen(self.system, self.radius, self.values.keys(), check=False)

    def max_abs(self) -> float:
        return max((abs(v) for v in self.values.values()), default=0)

    def cell_vector(self, cells, radius):
        """Values on a list of cells given at `radius` (>= self.radius)."""
        return [self.values.get(self.system.restrict(c, radius, self.radius), 0) for c in cells]

    def __eq__(self, other):
        if not isinstance(other, LocallyConstant):
            return NotImplemented
        R, a, b = self._pair(other)
        return a.values == b.values

    def __hash__(self):
        return hash((self.radius, frozenset(self.values.items())))

    def is_zero(self) -> bool:
        return not self.values

    def __repr__(self):
        items = sorted(self.values.items())[:6]
        return f"LocallyConstant(r={self.radius}, {items}{' ...' if len(self.values) > 6 else ''})"

    def to_dict(self):
        return {"radius": self.radius, "values": {w: _num_out(v) for w, v in sorted(self.values.items())}}


def _num_out(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else v.numerator
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def _num_in(v):
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, list):
        return complex(v[0], v[1])
    return v


class CrossedElement:
    """Finite sum sum_g f_g u_g over a Z-system."""

    __slots__ = ("system", "coeffs")

    def __init__(self, system, coeffs=None):
        self.system = system
        self.coeffs = {int(g): f for g, f in (coeffs or {}).items() if not f.is_zero()}

    # constructors
    @classmethod
    def unitary(cls, system, g: int, f=None):
        f = f if f is not None else LocallyConstant.constant(system, 1)
        return cls(system, {g: f})

    @classmethod
    def function(cls, f: LocallyConstant):
        return cls(f.system, {0: f})

    @classmethod
    def scalar(cls, system, c):
        return cls(system, {0: LocallyConstant.constant(system, c)})

    @property
    def support(self) -> frozenset:
        return frozenset(self.coeffs)

    def coefficient(self, g) -> LocallyConstant:
        return self.coeffs.get(g, LocallyConstant(self.system, 0, {}))

    def radius(self) -> int:
        return max((f.radius for f in self.coeffs.values()), default=0)

    def band(self) -> int:
        return max((abs(g) for g in self.coeffs), default=0)

    def _coerce(self, other):
        if isinstance(other, CrossedElement):
            if other.system != self.system:
                raise ValueError("elements over different systems")
            return other
        if isinstance(other, LocallyConstant):
            return CrossedElement.function(other)
        return CrossedElement.scalar(self.system, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.coeffs)
        for g, f in other.coeffs.items():
            out[g] = out[g] + f if g in out else f
        return CrossedElement(self.system, out)

    __radd__ = __add__

    def __neg__(self):
        return CrossedElement(self.system, {g: -f for g, f in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, (CrossedElement, LocallyConstant)):
            return CrossedElement(self.system, {g: f * other for g, f in self.coeffs.items()})
        other = self._coerce(other)
        out = {}
        for (g, f), (k, h) in itertools.product(self.coeffs.items(), other.coeffs.items()):
            term = f * h.shift(g)
            out[g + k] = out[g + k] + term if g + k in out else term
        return CrossedElement(self.system, out)

    def __rmul__(self, other):
        if isinstance(other, LocallyConstant):
            return CrossedElement.function(other) * self
        return self * other

    def adjoint(self) -> "CrossedElement":
        return CrossedElement(self.system, {-g: f.conj().shift(-g) for g, f in self.coeffs.items()})

    star = adjoint

    def __eq__(self, other):
        if not isinstance(other, CrossedElement):
            return NotImplemented
        keys = set(self.coeffs) | set(other.coeffs)
        return all(self.coefficient(g) == other.coefficient(g) for g in keys)

    def __hash__(self):
        return hash(frozenset(self.coeffs))

    def is_zero(self):
        return not self.coeffs

    def max_coeff(self) -> float:
        return max((f.max_abs() for f in self.coeffs.values()), default=0)

    def __repr__(self):
        return "CrossedElement(" + " + ".join(f"[{f!r}] u_{g}" for g, f in sorted(self.coeffs.items())) + ")"

    def to_dict(self):
        return {"support": sorted(self.coeffs), "coeffs": {str(g): f.to_dict() for g, f in sorted(self.coeffs.items())}}

    @classmethod
    def from_dict(cls, system, d):
        if set(d) != {"support", "coeffs"}:
            raise ValueError("crossed element needs exactly 'support' and 'coeffs'")
        coeffs = {}
        for g, c in d["coeffs"].items():
            if int(g) not in d["support"]:
                raise ValueError(f"coefficient at {g} outside the declared support")
            words = c["values"]
            for w in words:
                if w not in set(system.words(int(c["radius"]))):
                    raise ValueError(f"inadmissible word {w!r}")
            coeffs[int(g)] = LocallyConstant(system, int(c["radius"]), {w: _num_in(v) for w, v in words.items()})
        return cls(system, coeffs)


def u(system, g: int) -> CrossedElement:
    return CrossedElement.unitary(system, g)


def conditional_expectation(a: CrossedElement) -> LocallyConstant:
    """The e-coefficient f_0."""
    return a.coefficient(0)


# ----------------------------------------------------------------------------
# regular representation
# ----------------------------------------------------------------------------

class RegularRepMatrix:
    def __init__(self, matrix, lo: int, hi: int, band: int):
        self.matrix = matrix
        self.lo = lo
        self.hi = hi
        self.band = band

    @property
    def size(self):
        return self.hi - self.lo

    def edge_bound(self) -> float:
        return self.band / self.size if self.size else 1.0

    def toarray(self):
        return self.matrix.toarray()


def _numeric(v):
    if isinstance(v, complex):
        return v
    return float(v)


def represent(a: CrossedElement, w, radius: int | None = None) -> RegularRepMatrix:
    """Matrix of a on l^2 of the valid window positions (truncated at the edges)."""
    r = a.radius() if radius is None else radius
    lo, hi = w.valid_range(r)
    n = hi - lo
    if n < 2 * a.band() + 1:
        raise ValueError(f"window too small: {n} valid sites for band {a.band()}")
    cells = w.cells(r)
    rows, cols, vals = [], [], []
    cplx = False
    idx = np.arange(n)
    for g, f in a.coeffs.items():
        vals_g = np.array([_numeric(v) for v in f.cell_vector(cells, r)])
        cplx = cplx or np.iscomplexobj(vals_g)
        ok = (idx + g >= 0) & (idx + g < n) & (vals_g != 0)
        rows.append(idx[ok])
        cols.append(idx[ok] + g)
        vals.append(vals_g[ok])
    if rows:
        rr, cc, vv = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        rr = cc = np.zeros(0, dtype=np.int64)
        vv = np.zeros(0)
    M = scipy.sparse.csr_matrix((vv.astype(complex if cplx else float), (rr, cc)), shape=(n, n))
    return RegularRepMatrix(M, lo, hi, a.band())


def spectral_norm(M, seed: int = 0, tol: float = 1e-9) -> float:
    """Largest singular value: dense SVD up to DENSE_LIMIT, seeded Lanczos above."""
    n = M.shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_LIMIT:
        A = M.toarray() if scipy.sparse.issparse(M) else np.asarray(M)
        return float(scipy.linalg.svdvals(A)[0]) if A.size else 0.0
    M = scipy.sparse.csr_matrix(M)
    if M.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    H = (M.conj().T @ M).tocsr()
    val = scipy.sparse.linalg.eigsh(H, k=1, which="LA", v0=v0, tol=tol, maxiter=10**4, return_eigenvectors=False)
    return float(np.sqrt(max(val[0], 0.0)))


def norm(a: CrossedElement, w, seed: int = 0) -> tuple:
    """(spectral norm on the window, edge bound = band / size)."""
    R = represent(a, w)
    return spectral_norm(R.matrix, seed=seed), R.edge_bound()


# ----------------------------------------------------------------------------
# functional calculus helpers
# ----------------------------------------------------------------------------

def cut(t, eps):
    """max(t - eps, 0) on a number."""
    d = t - eps
    return d if d > 0 else 0 * d


def cut_down_crossed(a: CrossedElement, eps: float, w):
    """(a - eps)_+ on the window, by eigendecomposition of the (self-adjoint) window matrix."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    A = represent(a, w).toarray()
    if not np.allclose(A, A.conj().T, atol=1e-12):
        raise ValueError("element is not self-adjoint on the window")
    vals, vecs = np.linalg.eigh(A)
    return (vecs * np.maximum(vals - eps, 0.0)) @ vecs.conj().T


# ----------------------------------------------------------------------------
# compression to finitely many orbit points
# ----------------------------------------------------------------------------

def coefficient_tables(a: CrossedElement, ct):
    """Per coefficient, its values on the cells of a configuration table."""
    out = {}
    for g, f in a.coeffs.items():
        if f.radius > ct.radius:
            raise ValueError(f"coefficient radius {f.radius} exceeds table radius {ct.radius}")
        out[g] = np.array(f.cell_vector(ct.cells, ct.radius), dtype=object)
    return out


def compress(a: CrossedElement, ct, row: int, offsets, tables=None) -> np.ndarray:
    """M[i, j] = f_{o_j - o_i}(sigma^{o_i} x): the matrix of a on span{e_o : o in offsets}
    at the point x given by configuration `row`.  Object dtype, exact."""
    tables = tables if tables is not None else coefficient_tables(a, ct)
    offs = list(offsets)
    n = len(offs)
    M = np.zeros((n, n), dtype=object)
    for i, oi in enumerate(offs):
        cell = ct.table[row, ct.span + oi]
        for j, oj in enumerate(offs):
            g = oj - oi
            if g in tables:
                M[i, j] = tables[g][cell]
    return M


def leakage(a: CrossedElement, ct, row: int, offsets, tables=None) -> list:
    """Nonzero coefficients at points of `offsets` that reach outside `offsets`."""
    tables = tables if tables is not None else coefficient_tables(a, ct)
    offs = set(offsets)
    bad = []
    for oi in sorted(offs):
        cell = ct.table[row, ct.span + oi]
        for g, t in tables.items():
            if t[cell] != 0 and (oi + g) not in offs:
                bad.append((oi, g))
    return bad


def to_float_matrix(M) -> np.ndarray:
    if M.dtype != object:
        return M
    if any(isinstance(v, complex) for v in M.flat):
        return M.astype(complex)
    return np.array([[float(v) for v in row] for row in M], dtype=float).reshape(M.shape)


# ----------------------------------------------------------------------------
# partitions of unity
# ----------------------------------------------------------------------------

def _common_radius(fs):
    R = max(f.radius for f in fs)
    return R, [f.at_radius(R) for f in fs]


def partition_of_unity(gs, D: Clopen, V=None):
    """phi_n = (1-g_1)...(1-g_{n-1}) g_n.

    Requires values in [0, 1], supp g_i inside V_i when V is given, and D inside
    the union of the sets {g_i = 1}. Returns (phis, report).
    """
    gs = list(gs)
    if not gs:
        raise ValueError("need at least one function")
    R, gs = _common_radius(gs + [LocallyConstant.indicator(D)])
    Dl = gs.pop()
    R = max(R, D.radius)
    gs = [g.at_radius(R) for g in gs]
    Dl = Dl.at_radius(R)
    for i, g in enumerate(gs):
        bad = [w for w, v in g.values.items() if not (0 <= v <= 1)]
        if bad:
            raise ValueError(f"g_{i + 1} leaves [0, 1] on cell {bad[0]}")
        if V is not None and not g.support().issubset(V[i]):
            raise ValueError(f"supp g_{i + 1} is not inside V_{i + 1}")
    for w in Dl.values:
        if not any(g.values.get(w, 0) == 1 for g in gs):
            raise ValueError(f"D is not covered by the cores {{g_i = 1}}: uncovered cell {w}")
    phis = []
    rest = LocallyConstant.constant(D.system, 1).at_radius(R)
    for g in gs:
        phis.append(rest * g)
        rest = rest * (1 - g)
    total = phis[0]
    for p in phis[1:]:
        total = total + p
    prod = LocallyConstant.constant(D.system, 1).at_radius(R)
    for g in gs:
        prod = prod * (1 - g)
    report = {
        "sum_identity": (total + prod).at_radius(R) == LocallyConstant.constant(D.system, 1).at_radius(R),
        "sum_one_on_D": all(total.values.get(w, 0) == 1 for w in Dl.values),
        "supports_ok": all(p.support().issubset(g.support()) for p, g in zip(phis, gs)),
        "radius": R,
    }
    return phis, report


def extend_partition(phi_V, gs, W):
    """h_n = (1-g)(1-g_1)...(1-g_{n-1}) g_n with g = sum phi_V.

    Checks on every cell: (i) values in [0,1] and g <= 1, (ii) supp g_i inside
    W_i, (iii) wherever g < 1 some g_i equals 1. Returns (hs, report).
    """
    phi_V = list(phi_V)
    gs = list(gs)
    system = (phi_V or gs)[0].system
    allf = phi_V + gs
    R = max(f.radius for f in allf)
    R = max([R] + [w.radius for w in W])
    phi_V = [f.at_radius(R) for f in phi_V]
    gs = [f.at_radius(R) for f in gs]
    one = LocallyConstant.constant(system, 1).at_radius(R)
    g = LocallyConstant(system, R, {})
    for f in phi_V:
        g = g + f
    failures = []
    for w in system.words(R):
        gv = g.values.get(w, 0)
        if gv < 0 or gv > 1:
            failures.append(("i", w))
        if gv < 1 and not any(x.values.get(w, 0) == 1 for x in gs):
            failures.append(("iii", w))
    for i, x in enumerate(gs):
        if not x.support().issubset(W[i]):
            failures.append(("ii", i))
    if failures:
        raise ValueError(f"partition extension hypotheses fail: {failures[:5]}")
    hs = []
    rest = one - g
    for x in gs:
        hs.append(rest * x)
        rest = rest * (1 - x)
    total = g
    for h in hs:
        total = total + h
    report = {
        "sum_is_one": total.at_radius(R) == one,
        "subordinate": all(h.support().issubset(Wi) for h, Wi in zip(hs, W)),
        "radius": R,
    }
    return hs, report


# ----------------------------------------------------------------------------
# tower algebras
# ----------------------------------------------------------------------------

def _as_element(a):
    return a if isinstance(a, CrossedElement) else CrossedElement.function(a)


def _window_error(A, B, band):
    D = (A - B).tocsr()[band:A.shape[0] - band, band:A.shape[1] - band]
    return float(abs(D).max()) if D.nnz else 0.0


def tower_algebra_check(towers, generators, w, tol: float = 1e-9) -> dict:
    """Relations of the algebra generated by u_g* a u_g over one tower.

    For generators a, b supported on the base B of a tower with shape G:
    (a u_i)(u_j* b) = 0 for i != j (checked as an exact crossed-product identity
    and by clopen disjointness), v_i v_j* = delta_ij p with v_i = p u_{g_i} and p
    the base indicator (exact, and on the window away from the edges), and the
    diagonal embedding sum_i u_i* a_i u_i -> diag(a_1, ..., a_n) is multiplicative.
    """
    system = towers.system
    gens = [_as_element(g) for g in generators]
    for i, g in enumerate(gens):
        if set(g.support) - {0}:
            raise ValueError(f"generator {i} is not a function")
    T = towers.towers
    assigned = {s: [] for s in range(len(T))}
    off_base = []
    for i, a in enumerate(gens):
        supp = a.coefficient(0).support()
        owners = [s for s, t in enumerate(T) if supp.issubset(t.base)]
        if owners:
            assigned[owners[0]].append(i)
            continue
        off_base.append(i)
        met = []
        for s, t in enumerate(T):
            region = Clopen.empty(system)
            for g in t.shape:
                region = region | translate(t.base, g)
            if not supp.isdisjoint(region):
                met.append(s)
        for s in met:
            assigned[s].append(i)

    violations = []
    mu_errors = []
    mu_exact = True
    embedding_ok = True
    for s, t in enumerate(T):
        shape = sorted(t.shape)
        first_pair = {}
        for gi in shape:
            for gj in shape:
                if gi != gj:
                    first_pair.setdefault(gi - gj, (gi, gj))
        G = assigned[s]
        for ia, ib in itertools.product(G, G):
            a, b = gens[ia], gens[ib]
            for d, (gi, gj) in sorted(first_pair.items()):
                prod = (a * u(system, gi)) * (u(system, gj).adjoint() * b)
                clopen_zero = a.coefficient(0).support().isdisjoint(translate(b.coefficient(0).support(), -d))
                if prod.is_zero() != clopen_zero:
                    raise ConsistencyError(f"algebraic and clopen orthogonality disagree at d={d}")
                if not prod.is_zero():
                    violations.append({"tower": s, "a": ia, "b": ib, "i": gi, "j": gj,
                                       "witness": sorted(prod.coefficient(d).values)[:3]})
        # matrix units
        p = CrossedElement.function(LocallyConstant.indicator(t.base))
        v = {g: p * u(system, g) for g in shape}
        for gi in shape:
            for gj in shape:
                lhs = v[gi] * v[gj].adjoint()
                rhs = p if gi == gj else CrossedElement(system)
                if lhs != rhs:
                    mu_exact = False
        band = max(abs(g) for g in shape)
        R = t.base.radius
        P = represent(p, w, radius=R).matrix
        U = {g: represent(u(system, g), w, radius=R).matrix for g in shape}
        V = {g: (P @ U[g]).tocsr() for g in shape}
        Z = scipy.sparse.csr_matrix(P.shape)
        for gi in shape:
            for gj in shape:
                mu_errors.append(_window_error(V[gi] @ V[gj].conj().T, P if gi == gj else Z, band))
        # diagonal embedding
        if G:
            fa = [gens[G[k % len(G)]].coefficient(0) for k in range(len(shape))]
            fb = [gens[G[(k + 1) % len(G)]].coefficient(0) for k in range(len(shape))]

            def embed(fs):
                out = CrossedElement(system)
                for g, f in zip(shape, fs):
                    out = out + u(system, g).adjoint() * CrossedElement.function(f) * u(system, g)
                return out

            ea, eb = embed(fa), embed(fb)
            if ea * eb != embed([x * y for x, y in zip(fa, fb)]) or ea.adjoint() != embed([x.conj() for x in fa]):
                embedding_ok = False
    err = max(mu_errors, default=0.0)
    ok = not violations and not off_base and mu_exact and err <= tol and embedding_ok
    return {
        "pass": ok,
        "orthogonality_exact": not violations,
        "violations": violations,
        "off_base": off_base,
        "matrix_units_exact": mu_exact,
        "matrix_unit_error": err,
        "embedding_multiplicative": embedding_ok,
        "tol": tol,
    }


# ----------------------------------------------------------------------------
# the orbit-cutting subalgebra A_Y
# ----------------------------------------------------------------------------

def ay_generator(system, g: LocallyConstant, Y: Clopen) -> CrossedElement:
    """u_{-1} g, the generator that moves one step down each return column.

    Rejected unless g vanishes on Y."""
    if not g.support().isdisjoint(Y):
        bad = sorted((g.support() & Y).words)[:3]
        raise ValueError(f"g does not vanish on Y (e.g. cells {bad})")
    return u(system, -1) * CrossedElement.function(g)


class AYModel:
    """Block matrices of A_Y: a point x of Z_k (first return J_k) carries the
    basis sigma^1 x, ..., sigma^{J_k} x, and a acts by compress(a, ...)."""

    def __init__(self, system, Y: Clopen, radius: int = 0):
        self.system = system
        self.Y = Y
        self.returns = first_return_analysis(system, Y)
        R = max([radius, Y.radius] + [Z.radius for _, Z in self.returns.returns])
        self.radius = R
        Jmax = max(J for J, _ in self.returns.returns)
        self.table = configurations(system, R, Jmax)
        self.blocks = []
        for J, Z in self.returns.returns:
            rows = np.flatnonzero(self.table.hits(Z.at_radius(R), 0)).tolist()
            self.blocks.append({"J": J, "base": Z, "offsets": list(range(1, J + 1)), "rows": rows})

    def __call__(self, a: CrossedElement) -> dict:
        """{(block, configuration key): exact matrix}; raises if a leaves the blocks."""
        if a.radius() > self.radius:
            raise ValueError(f"element radius {a.radius()} exceeds the model radius {self.radius}")
        tables = coefficient_tables(a, self.table)
        out = {}
        for k, blk in enumerate(self.blocks):
            for r in blk["rows"]:
                bad = leakage(a, self.table, r, blk["offsets"], tables)
                if bad:
                    raise ValueError(f"element is not in A_Y: offset/step {bad[0]} leaves the return column at {self.table.keys[r]}")
                out[(k, self.table.keys[r])] = compress(a, self.table, r, blk["offsets"], tables)
        return out


def ay_model(system, Y: Clopen, a: CrossedElement) -> dict:
    return AYModel(system, Y, a.radius())(a)


def _conj_t(M):
    return np.array([[_conj(v) for v in row] for row in M.T], dtype=object).reshape(M.T.shape)


def ay_homomorphism_check(model: AYModel, a: CrossedElement, b: CrossedElement) -> dict:
    """Exact comparison of the model of a*b, a+b, a* with matrix operations."""
    ma, mb = model(a), model(b)
    mab, msum, mst = model(a * b), model(a + b), model(a.adjoint())
    prod_ok = all(np.array_equal(np.dot(ma[k], mb[k]), mab[k]) for k in ma)
    sum_ok = all(np.array_equal(ma[k] + mb[k], msum[k]) for k in ma)
    adj_ok = all(np.array_equal(_conj_t(ma[k]), mst[k]) for k in ma)
    return {"product": prod_ok, "sum": sum_ok, "adjoint": adj_ok, "pass": prod_ok and sum_ok and adj_ok}


# ----------------------------------------------------------------------------
# small domain elements
# ----------------------------------------------------------------------------

def _min_eigenvalue(M) -> float:
    n = M.shape[0]
    if n <= 2000:
        return float(np.linalg.eigvalsh(M.toarray()).min())
    v0 = np.random.default_rng(0).standard_normal(n)
    return float(scipy.sparse.linalg.eigsh(M, k=1, which="SA", v0=v0, tol=1e-9, maxiter=10**4, return_eigenvectors=False)[0])


def validate_small_domain(a: CrossedElement, P: Clopen, eps, w) -> dict:
    """Is the indicator p of P a valid choice for a (already normalized to max|f_0| = 1)?

    Needs p (p o sigma^g) = 0 for g in supp(a) minus 0 and f_0 >= 1 - eps on P;
    then pap - p^2 = p (f_0 - 1) exactly, checked in sup norm and on the window."""
    pf = LocallyConstant.indicator(P)
    disjoint = all(P.isdisjoint(translate(P, -g)) for g in a.support if g != 0)
    p = CrossedElement.function(pf)
    resid = p * a * p - p * p
    exact = resid.max_coeff()
    win, edge = norm(resid, w) if not resid.is_zero() else (0.0, 0.0)
    return {
        "disjoint": disjoint,
        "residual_sup": float(exact),
        "residual_window": win,
        "edge_bound": edge,
        "within": disjoint and float(exact) < 2 * eps and win < 2 * eps,
        "offdiagonal_vanish": set(resid.support) <= {0},
    }


def small_domain_element(a: CrossedElement, w, eps: float, extra_radius: int = 8):
    """A cylinder p near a maximum of E(a) with pap ~ p^2, and h = (p^2 - 2 eps)_+.

    a is first checked positive on the window and scaled so that max|E(a)| = 1.
    Cylinders are tried by increasing radius, in word order."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    A = represent(a, w).matrix
    if abs(A - A.conj().T).max() > 1e-12:
        raise ValueError("a is not self-adjoint")
    lam = _min_eigenvalue(A)
    if lam < -1e-9 * max(1.0, float(a.max_coeff())):
        raise ValueError(f"a is not positive: window eigenvalue {lam:.3g}")
    fe = conditional_expectation(a)
    if fe.is_zero():
        raise ValueError("E(a) = 0")
    M = max(abs(v) for v in fe.values.values())
    scale = 1 / M
    an = a * scale
    fn = fe * scale
    system = a.system
    found = None
    for r in range(fe.radius, fe.radius + extra_radius + 1):
        for c in system.words(r):
            if fn(c, r) < 1 - eps:
                continue
            P = Clopen(system, r, [c], check=False)
            if all(P.isdisjoint(translate(P, -g)) for g in a.support if g != 0):
                found = P
                break
        if found is not None:
            break
    if found is None:
        raise ValueError(f"no admissible cylinder up to radius {fe.radius + extra_radius}; refine the radius")
    degenerate = eps >= 0.5
    h = LocallyConstant(system, found.radius, {}) if degenerate else LocallyConstant.indicator(found, 1 - 2 * eps)
    report = validate_small_domain(an, found, eps, w)
    report.update({"cylinder": found, "scale": scale, "min_eigenvalue": lam, "degenerate": degenerate})
    return h, report


# ----------------------------------------------------------------------------
# tracial approximation by tower algebras
# ----------------------------------------------------------------------------

def _power(N, l):
    S = frozenset({0})
    for _ in range(l):
        S = sumset(S, N)
    return S


def level_labels(towers):
    """(radius, {cell word: (tower, level)}) for the cells lying in some level sigma^g(B_s)."""
    system = towers.system
    T = towers.towers
    rB = max(t.base.radius for t in T)
    span = max(abs(g) for t in T for g in t.shape)
    ct = configurations(system, rB, span)
    masks = [ct.cell_mask(t.base.at_radius(rB)) for t in T]
    labels = {}
    odo = isinstance(system, Odometer)
    for row in range(len(ct)):
        key = system.encode(ct.keys[row], rB) if odo else ct.keys[row]
        for s, t in enumerate(T):
            for g in t.shape:
                if masks[s][ct.table[row, ct.span - g]]:
                    if key in labels:
                        raise ConsistencyError(f"tower levels overlap at {key}")
                    labels[key] = (s, g)
    return (rB if odo else rB + span), labels


class TSDGConstruction:
    def __init__(self, **kw):
        self.__dict__.update(kw)

    def level_counts(self):
        return [{l: sum(1 for v in lv.values() if v == l) for l in range(self.L + 2)} for lv in self.levels]


def _snap(f: LocallyConstant, rho: int) -> LocallyConstant:
    """Constant on radius-rho cells, using the value at the least refining word."""
    system = f.system
    R = max(rho, f.radius)
    out = {}
    for c in system.words(rho):
        x = min(system.refine_words([c], rho, R))
        v = f(x, R)
        if v != 0:
            out[c] = v
    return LocallyConstant(system, rho, out)


def tsdg_construct(system, towers, f_list, h: LocallyConstant, F: Clopen, delta, L: int, N,
                   strict: bool = True, snap_radius: int | None = None) -> TSDGConstruction:
    """Levels by nested interiors, the ramp p, and snapped f', h'.

    Preconditions (L > 8 M |N| / delta, (N^(L+1), delta/2|N^(L+1)|)-invariant
    shapes, h >= 3/4 on F) raise when strict, and are recorded otherwise.
    """
    N = frozenset(N)
    if 0 not in N or any(-g not in N for g in N):
        raise ValueError("N must be symmetric and contain 0")
    if L < 1:
        raise ValueError("L must be >= 1")
    f_list = [_as_element(f) for f in f_list]
    for i, f in enumerate(f_list):
        if not f.support <= N:
            raise ValueError(f"f_{i + 1} has support {sorted(f.support)} outside N")
    M = max([1] + [float(f.max_coeff()) for f in f_list])
    NL1 = _power(N, L + 1)
    thr = delta / (2 * len(NL1))
    defects = [invariance_defect(t.shape, NL1) for t in towers.towers]
    ext = max(abs(g) for g in NL1)
    pre = {
        "L_large": L > 8 * M * len(N) / delta,
        "L_required": 8 * M * len(N) / delta,
        "invariance": all(float(d) < thr for d in defects),
        "invariance_defects": [float(d) for d in defects],
        "invariance_threshold": thr,
        "required_height": int(2 * ext / thr) + 1,
    }
    R0 = max(h.radius, F.radius)
    hv = h.at_radius(R0)
    pre["h_on_F"] = all(hv(c, R0) >= Fraction(3, 4) for c in F.at_radius(R0).words)
    if strict:
        if not pre["invariance"]:
            raise ValueError(f"tower shapes not invariant enough: defects {pre['invariance_defects']} vs {thr:.3g}; "
                             f"interval shapes need height >= {pre['required_height']}")
        if not pre["L_large"]:
            raise ValueError(f"L must exceed {pre['L_required']:.4g}")
        if not pre["h_on_F"]:
            raise ValueError("h must be >= 3/4 on F")
    levels = []
    for t in towers.towers:
        ints = [interior(t.shape, _power(N, l)) for l in range(L + 2)]
        levels.append({g: max(l for l in range(L + 2) if g in ints[l]) for g in t.shape})
    R_lab, labels = level_labels(towers)

    def ramp(l):
        return Fraction(l - 1, L) if l >= 1 else Fraction(0)

    p = LocallyConstant(system, R_lab, {c: ramp(levels[s][g]) for c, (s, g) in labels.items()})
    rho = R_lab if snap_radius is None else snap_radius
    if rho < R_lab:
        raise ValueError(f"snap radius must be at least the level radius {R_lab}")
    f_prime = [CrossedElement(system, {g: _snap(c, rho) for g, c in f.coeffs.items()}) for f in f_list]
    h_prime = _snap(h, rho)
    return TSDGConstruction(
        system=system, towers=towers, N=N, L=L, delta=delta, levels=levels, p=p,
        labels=labels, label_radius=R_lab, snap_radius=rho, f_list=f_list, f_prime=f_prime,
        h=h, h_prime=h_prime, F=F, M=M, preconditions=pre,
    )


def _sup_diff(f: LocallyConstant, g: LocallyConstant) -> float:
    d = f - g
    return float(d.max_abs())


def tsdg_verify(con: TSDGConstruction, delta, w, seed: int = 0) -> dict:
    """Report rows (property, bound, measured, pass) for the eight properties."""
    system = con.system
    T = con.towers.towers
    rows = []

    def row(pid, bound, measured, ok, **extra):
        rows.append({"property": pid, "bound": bound, "measured": measured, "pass": bool(ok), **extra})

    # (1) approximation
    f_err = max([sum(_sup_diff(f.coefficient(g), fp.coefficient(g)) for g in f.support | fp.support)
                 for f, fp in zip(con.f_list, con.f_prime)] + [0.0])
    h_err = _sup_diff(con.h, con.h_prime)
    row("1", delta, max(f_err, h_err), max(f_err, h_err) < delta, f_error=f_err, h_error=h_err)

    # (2) commutators on the window
    P = CrossedElement.function(con.p)
    comm = 0.0
    edge = 0.0
    for fp in con.f_prime:
        c = P * fp - fp * P
        if not c.is_zero():
            v, e = norm(c, w, seed=seed)
            comm, edge = max(comm, v), max(edge, e)
    mech = len(con.N) * con.M / con.L
    row("2", delta, comm, comm < delta, mechanism_bound=mech, within_mechanism=comm <= mech + 1e-6, edge_bound=edge)
    shift = u(system, 1).adjoint() * P * u(system, 1) - P
    sv = norm(shift, w, seed=seed)[0] if not shift.is_zero() else 0.0
    row("p-shift", 1 / con.L, sv, sv <= 1 / con.L + 1e-12)

    # (3) membership in C: every coefficient of p f' p and p h' p joins two levels of one tower
    R_lab = con.label_radius
    bad = []
    elems = [P * fp * P for fp in con.f_prime] + [P * CrossedElement.function(con.h_prime) * P]
    for e in elems:
        if e.is_zero():
            continue
        R = max(R_lab, e.radius())
        ct = configurations(system, R, max(1, e.band()))
        lab = [con.labels.get(system.restrict(c, R, R_lab)) for c in ct.cells]
        for g, f in e.coeffs.items():
            vals = f.cell_vector(ct.cells, R)
            for r in range(len(ct)):
                c0 = ct.table[r, ct.span]
                if vals[c0] == 0:
                    continue
                a, b = lab[c0], lab[ct.table[r, ct.span + g]]
                if a is None or b is None or a[0] != b[0] or b[1] != a[1] + g:
                    bad.append((g, ct.keys[r]))
    row("3", "coefficients within tower blocks", len(bad), not bad, witnesses=bad[:3])

    # (4) Cantor bases: dim([Z_s]) = 0
    row("4", "< mdim + delta", 0.0, 0 < delta)

    # (5) measure of {p != 1}, by level counting and by measuring the clopen
    by_levels = sum(((len(t.shape) - sum(1 for v in lv.values() if v == con.L + 1)) * exact_measure(t.base)
                     for t, lv in zip(T, con.levels)), exact_measure(con.towers.complement))
    not_one = Clopen(system, con.p.radius, [c for c in system.words(con.p.radius) if con.p(c) != 1], check=False)
    by_clopen = exact_measure(not_one)
    row("5", delta, float(by_clopen), by_clopen < delta, exact=str(by_clopen), agree=by_levels == by_clopen)

    # (6), (7) along every tower column
    R = max(R_lab, con.h_prime.radius)
    span = max(abs(g) for t in T for g in t.shape)
    ct = configurations(system, R, span)
    pv = con.p.cell_vector(ct.cells, R)
    hv = con.h_prime.cell_vector(ct.cells, R)
    muF = exact_measure(con.F)
    worst6 = worst7 = None
    ok6 = ok7 = True
    for t in T:
        K = len(t.shape)
        shape = sorted(t.shape)
        for r in np.flatnonzero(ct.hits(t.base.at_radius(R), 0)):
            cells = [ct.table[r, ct.span + g] for g in shape]
            rank6 = sum(1 for c in cells if pv[c] * pv[c] * hv[c] > Fraction(1, 4))
            ones = sum(1 for c in cells if pv[c] == 1)
            rank7 = sum(1 for c in cells if pv[c] > 0)
            q6 = rank6 - K * (muF - delta)
            q7 = Fraction(ones, K) - (1 - Fraction(repr(float(delta))))
            if worst6 is None or q6 < worst6[0]:
                worst6 = (q6, rank6, K)
            if worst7 is None or q7 < worst7[0]:
                worst7 = (q7, rank7, ones, K)
            ok6 &= q6 >= 0
            ok7 &= q7 > 0 and rank7 > K * (1 - delta)
    row("6", "rank >= K (min mu(F) - delta)", worst6[1] if worst6 else None, ok6, K=worst6[2] if worst6 else None)
    row("7", "rank p(z) > K (1 - delta)", worst7[1] if worst7 else None, ok7,
        ones=worst7[2] if worst7 else None, K=worst7[3] if worst7 else None)

    # (8) a diagonal element equal to 1 on every level misses only the complement
    c_mu = exact_measure(con.towers.complement)
    row("8", delta, float(c_mu), c_mu < delta, exact=str(c_mu))
    return {"rows": rows, "pass": all(r["pass"] for r in rows), "preconditions": con.preconditions}
