"""Cantor Z-systems, clopen set algebra, invariant measures, Folner sets and orbit capacity.

Three generators are supported: odometers, primitive substitution subshifts and
finite cycles, plus coordinatewise products of them acting by Z^d.

Conventions
-----------
* Subshifts act by the left shift, (sigma x)_n = x_{n+1}. A clopen of radius r
  is a set of centered words x_{-r} .. x_r (length 2r+1).
* Odometers are written least significant digit first. A clopen of radius r is
  a set of r-digit prefixes, i.e. a union of residue classes mod B_r, and the
  action is x -> x + 1 with carry. Radius 0 means the whole space.
* Group elements are ints for Z and tuples for Z^d.
"""

from __future__ import annotations

import itertools
import json
import math
from fractions import Fraction
from functools import reduce

import numpy as np

from .exact import FieldNumber, perron_field

ALPHABET = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ-_"

EXHAUSTIVE_LIMIT = 10**5


def symbol(i: int) -> str:
    if i < len(ALPHABET):
        return ALPHABET[i]
    return chr(0xC0 + i - len(ALPHABET))


def symbol_index(c: str) -> int:
    k = ALPHABET.find(c)
    if k >= 0:
        return k
    return ord(c) - 0xC0 + len(ALPHABET)


# ----------------------------------------------------------------------------
# group elements and Folner combinatorics
# ----------------------------------------------------------------------------

def gadd(a, b):
    if isinstance(a, int):
        return a + b
    return tuple(x + y for x, y in zip(a, b))


def gneg(a):
    if isinstance(a, int):
        return -a
    return tuple(-x for x in a)


def gnorm(a) -> int:
    """Sup norm of a group element."""
    if isinstance(a, int):
        return abs(a)
    return max((abs(x) for x in a), default=0)


def identity(d: int = 1):
    return 0 if d == 1 else (0,) * d


def as_group_element(coords, d: int = 1):
    """Normalize JSON-ish input (int or list) into an int or tuple."""
    if isinstance(coords, (list, tuple)):
        if len(coords) != d:
            raise ValueError(f"group element {coords} has length {len(coords)}, expected {d}")
        if d == 1:
            return int(coords[0])
        return tuple(int(c) for c in coords)
    if d != 1:
        raise ValueError(f"scalar group element given for rank {d}")
    return int(coords)


def sumset(F, K) -> frozenset:
    return frozenset(gadd(f, k) for f in F for k in K)


def folner_boxes(d: int, n: int) -> frozenset:
    """The box {0..n-1}^d; ints when d == 1."""
    if d < 1 or n < 1:
        raise ValueError("need d >= 1 and n >= 1")
    if d == 1:
        return frozenset(range(n))
    return frozenset(itertools.product(range(n), repeat=d))


def invariance_defect(F, K) -> Fraction:
    """|FK symmetric-difference F| / |F|, returned as an exact Fraction."""
    F = frozenset(F)
    if not F:
        raise ValueError("F must be nonempty")
    FK = sumset(F, K)
    return Fraction(len(FK ^ F), len(F))


def interior(F, K) -> frozenset:
    """int_K(F) = {g in F : g + K inside F}."""
    F = frozenset(F)
    return frozenset(g for g in F if all(gadd(g, k) in F for k in K))


# ----------------------------------------------------------------------------
# systems
# ----------------------------------------------------------------------------

class CantorSystem:
    kind = "abstract"
    rank = 1
    minimal = True
    free = True

    def __init__(self):
        self._cache = {}

    def key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def __eq__(self, other):
        return isinstance(other, CantorSystem) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"{type(self).__name__}({self.key()})"

    def _memo(self, key, fn):
        c = self._cache
        if key not in c:
            c[key] = fn()
        return c[key]

    # subclasses supply words, restrict, translate_words, word_measures, to_dict

    def refine_words(self, words, radius: int, new_radius: int) -> frozenset:
        if new_radius == radius:
            return frozenset(words)
        if new_radius < radius:
            raise ValueError("refinement must not decrease the radius")
        words = set(words)
        return frozenset(w for w in self.words(new_radius) if self.restrict(w, new_radius, radius) in words)


class Odometer(CantorSystem):
    """Odometer on prod Z/b_i; the base list repeats periodically."""

    kind = "odometer"

    def __init__(self, bases):
        super().__init__()
        bases = [int(b) for b in bases]
        if not bases:
            raise ValueError("odometer needs at least one base")
        if any(b < 2 for b in bases):
            raise ValueError(f"odometer bases must be >= 2, got {bases}")
        self.bases = tuple(bases)

    def to_dict(self):
        return {"kind": "odometer", "bases": list(self.bases)}

    def base(self, i: int) -> int:
        return self.bases[i % len(self.bases)]

    def modulus(self, k: int) -> int:
        m = 1
        for i in range(k):
            m *= self.base(i)
        return m

    def encode(self, v: int, k: int) -> str:
        out = []
        for i in range(k):
            b = self.base(i)
            v, d = divmod(v, b)
            out.append(symbol(d))
        return "".join(out)

    def decode(self, word: str) -> int:
        v, m = 0, 1
        for i, c in enumerate(word):
            v += symbol_index(c) * m
            m *= self.base(i)
        return v

    def word_length(self, radius: int) -> int:
        return radius

    def words(self, radius: int) -> tuple:
        return self._memo(("words", radius), lambda: tuple(sorted(self.encode(v, radius) for v in range(self.modulus(radius)))))

    def restrict(self, word, radius, new_radius):
        return word[:new_radius]

    def refine_words(self, words, radius, new_radius):
        if new_radius == radius:
            return frozenset(words)
        if new_radius < radius:
            raise ValueError("refinement must not decrease the radius")
        B, B2 = self.modulus(radius), self.modulus(new_radius)
        out = set()
        for w in words:
            v = self.decode(w)
            for t in range(B2 // B):
                out.add(self.encode(v + t * B, new_radius))
        return frozenset(out)

    def translate_words(self, words, radius, g):
        B = self.modulus(radius)
        return radius, frozenset(self.encode((self.decode(w) + g) % B, radius) for w in words)

    def word_measures(self, radius):
        q = Fraction(1, self.modulus(radius))
        return self._memo(("mu", radius), lambda: {w: q for w in self.words(radius)})

    def return_horizon(self, radius):
        return self.modulus(radius)


class SymbolicSystem(CantorSystem):
    """Common code for subshifts: clopens are sets of centered words."""

    def word_length(self, radius):
        return 2 * radius + 1

    def words(self, radius):
        return self.language(2 * radius + 1)

    def restrict(self, word, radius, new_radius):
        d = radius - new_radius
        return word[d:len(word) - d]

    def refine_words(self, words, radius, new_radius):
        if new_radius == radius:
            return frozenset(words)
        if new_radius < radius:
            raise ValueError("refinement must not decrease the radius")
        d = new_radius - radius
        words = set(words)
        return frozenset(w for w in self.words(new_radius) if w[d:len(w) - d] in words)

    def translate_words(self, words, radius, g):
        # y in sigma^g(E)  <=>  sigma^{-g} y in E  <=>  y[-r-g .. r-g] in W
        R = radius + abs(g)
        words = set(words)
        lo = R - radius - g
        hi = lo + 2 * radius + 1
        return R, frozenset(w for w in self.words(R) if w[lo:hi] in words)

    def language(self, m: int) -> tuple:
        def build():
            out = set()
            for s in self.sweep(m):
                for i in range(len(s) - m + 1):
                    out.add(s[i:i + m])
            return tuple(sorted(out))
        if m < 1:
            raise ValueError("word length must be >= 1")
        return self._memo(("lang", m), build)

    def complexity(self, m: int) -> int:
        return len(self.language(m))


class Substitution(SymbolicSystem):
    """Subshift generated by a primitive substitution on single-character letters."""

    kind = "substitution"

    def __init__(self, rules: dict):
        super().__init__()
        if not rules:
            raise ValueError("substitution needs at least one rule")
        rules = {str(k): str(v) for k, v in rules.items()}
        for a, img in rules.items():
            if len(a) != 1:
                raise ValueError(f"letters must be single characters, got {a!r}")
            if not img:
                raise ValueError(f"image of {a!r} is empty")
            bad = set(img) - set(rules)
            if bad:
                raise ValueError(f"image of {a!r} uses undefined letters {sorted(bad)}")
        self.rules = rules
        self.alphabet = tuple(sorted(rules))
        if all(len(v) == 1 for v in rules.values()):
            raise ValueError("substitution is not growing (every image has length 1)")
        n = len(self.alphabet)
        M = np.zeros((n, n), dtype=np.int64)
        pos = {a: i for i, a in enumerate(self.alphabet)}
        for j, c in enumerate(self.alphabet):
            for a in rules[c]:
                M[pos[a], j] += 1
        self.matrix = M
        if not self._primitive():
            raise ValueError("substitution matrix is not primitive")
        self.free = self._aperiodic()
        self.minimal = True

    def to_dict(self):
        return {"kind": "substitution", "rules": {a: self.rules[a] for a in self.alphabet}}

    def _primitive(self) -> bool:
        n = len(self.alphabet)
        B = (self.matrix > 0).astype(np.int64)
        P = B.copy()
        for _ in range((n - 1) ** 2):  # Wielandt bound
            P = ((P @ B) > 0).astype(np.int64)
        return bool(P.all())

    def _aperiodic(self, up_to: int = 64) -> bool:
        # Morse-Hedlund: periodic iff p(m) <= m for some m; periods above `up_to` are not detected
        return all(self.complexity(m) > m for m in range(1, up_to + 1))

    def image(self, word: str, k: int = 1) -> str:
        for _ in range(k):
            word = "".join(self.rules[c] for c in word)
        return word

    def power_lengths(self, k: int) -> dict:
        v = {a: 1 for a in self.alphabet}
        for _ in range(k):
            v = {a: sum(v[c] for c in self.rules[a]) for a in self.alphabet}
        return v

    def level_for(self, m: int) -> int:
        """Smallest k with min |sigma^k(c)| >= m."""
        k = 0
        while min(self.power_lengths(k).values()) < m:
            k += 1
        return k

    def two_words(self) -> tuple:
        def build():
            seeds = set()
            for c in self.alphabet:
                k = 0
                while len(self.image(c, k)) < 2:
                    k += 1
                w = self.image(c, k)
                seeds.update(w[i:i + 2] for i in range(len(w) - 1))
            todo = list(seeds)
            while todo:
                u = todo.pop()
                w = self.image(u)
                for i in range(len(w) - 1):
                    f = w[i:i + 2]
                    if f not in seeds:
                        seeds.add(f)
                        todo.append(f)
            return tuple(sorted(seeds))
        return self._memo("L2", build)

    def sweep(self, m: int) -> list:
        """Strings containing every admissible word of length m as a factor."""
        k = self.level_for(m)
        return self._memo(("sweep", k), lambda: [self.image(u, k) for u in self.two_words()])

    def recurrence_level(self) -> int:
        """Smallest j such that every sigma^j(c) contains every admissible 2-word."""
        def build():
            L2 = set(self.two_words())
            j = 0
            while True:
                if all(L2 <= {w[i:i + 2] for i in range(len(w) - 1)} for w in (self.image(c, j) for c in self.alphabet)):
                    return j
                j += 1
        return self._memo("j0", build)

    def return_horizon(self, radius: int) -> int:
        """A proven bound on gaps between consecutive occurrences of any word of length 2r+1."""
        m = 2 * radius + 1
        k = self.level_for(m)
        j0 = self.recurrence_level()
        return 2 * max(self.power_lengths(k + j0).values())

    # -- exact frequencies ------------------------------------------------------

    def _perron(self):
        def build():
            p = 1
            while min(self.power_lengths(p).values()) < 2:
                p += 1
            lam, field = perron_field(self.matrix.tolist())
            theta = lam ** p if field is None else reduce(lambda a, b: a * b, [lam] * p)
            return p, lam, theta, field
        return self._memo("perron", build)

    def number_field(self):
        return self._perron()[3]

    def perron_value(self):
        return self._perron()[1]

    def _two_word_frequencies(self):
        from sympy.polys.matrices import DomainMatrix
        from sympy import QQ

        p, lam, theta, field = self._perron()
        L2 = self.two_words()
        idx = {w: i for i, w in enumerate(L2)}
        n = len(L2)
        counts = [[0] * n for _ in range(n)]
        for j, w in enumerate(L2):
            img = self.image(w, p)
            first = len(self.image(w[0], p))
            for i in range(first):
                counts[idx[img[i:i + 2]]][j] += 1
        if field is None:
            dom = QQ
            th = QQ(theta.numerator, theta.denominator)
            conv = lambda c: QQ(c)
        else:
            dom = field.K
            th = theta.rep
            conv = lambda c: dom.convert(QQ(c))
        rows = [[conv(counts[i][j]) - (th if i == j else dom.zero) for j in range(n)] for i in range(n)]
        ns = DomainMatrix(rows, (n, n), dom).nullspace().to_list()
        if len(ns) != 1:
            raise ArithmeticError(f"2-word Perron eigenspace has dimension {len(ns)}")
        vec = ns[0]
        total = dom.zero
        for v in vec:
            total = total + v
        vec = [v / total for v in vec]
        if field is None:
            vals = [Fraction(int(v.numerator), int(v.denominator)) for v in vec]
        else:
            vals = [FieldNumber(field, v) for v in vec]
        return {w: vals[i] for i, w in enumerate(L2)}

    def frequencies(self, m: int) -> dict:
        """Exact frequency of every admissible word of length m."""
        if m < 1:
            raise ValueError("word length must be >= 1")
        def build():
            if m == 2:
                return self._two_word_frequencies()
            if m == 1:
                f2 = self.frequencies(2)
                out = {}
                for w, v in f2.items():
                    out[w[0]] = out.get(w[0], 0) + v
                return out
            p, _lam, theta, _field = self._perron()
            minlen = min(self.power_lengths(p).values())
            mp = 1 + -(-(m - 1) // minlen)
            prev = self.frequencies(mp)
            out = {w: 0 for w in self.language(m)}
            for w, v in prev.items():
                img = self.image(w, p)
                first = len(self.image(w[0], p))
                for i in range(first):
                    out[img[i:i + m]] = out[img[i:i + m]] + v
            return {w: v / theta for w, v in out.items()}
        return self._memo(("freq", m), build)

    def word_measures(self, radius):
        return self.frequencies(2 * radius + 1)


class FiniteCycle(SymbolicSystem):
    """The rotation of Z/n, coded by distinct symbols. Minimal, never free."""

    kind = "cycle"

    def __init__(self, n: int):
        super().__init__()
        n = int(n)
        if n < 1:
            raise ValueError("cycle length must be >= 1")
        self.n = n
        self.minimal = True
        self.free = False
        self.alphabet = tuple(symbol(i) for i in range(n))

    def to_dict(self):
        return {"kind": "cycle", "n": self.n}

    def point_word(self, p: int, m: int, start: int = 0) -> str:
        return "".join(self.alphabet[(p + start + j) % self.n] for j in range(m))

    def sweep(self, m):
        s = "".join(self.alphabet)
        reps = -(-(self.n + m - 1) // self.n)
        return [(s * reps)[: self.n + m - 1]]

    def position(self, word: str, radius: int) -> int:
        """The point of Z/n whose radius-r word this is."""
        return symbol_index(word[radius])

    def word_measures(self, radius):
        # the center symbol names the point, so each word is one point
        q = Fraction(1, self.n)
        return self._memo(("mu", radius), lambda: {w: q for w in self.words(radius)})

    def return_horizon(self, radius):
        return self.n


class ProductSystem(CantorSystem):
    """Z^d acting coordinatewise on a product of Z-systems."""

    kind = "product"

    def __init__(self, factors):
        super().__init__()
        factors = list(factors)
        if not factors:
            raise ValueError("product needs at least one factor")
        for f in factors:
            if isinstance(f, ProductSystem):
                raise ValueError("nested products are not supported; flatten the factor list")
        self.factors = tuple(factors)
        self.rank = len(factors)
        self.minimal = all(f.minimal for f in factors)
        self.free = all(f.free for f in factors)
        self.free_per_factor = tuple(f.free for f in factors)

    def to_dict(self):
        return {"kind": "product", "factors": [f.to_dict() for f in self.factors]}

    def words(self, radius):
        return self._memo(("words", radius), lambda: tuple(itertools.product(*(f.words(radius) for f in self.factors))))

    def restrict(self, word, radius, new_radius):
        return tuple(f.restrict(w, radius, new_radius) for f, w in zip(self.factors, word))

    def refine_words(self, words, radius, new_radius):
        if new_radius == radius:
            return frozenset(words)
        out = set()
        for w in words:
            parts = [sorted(f.refine_words([x], radius, new_radius)) for f, x in zip(self.factors, w)]
            out.update(itertools.product(*parts))
        return frozenset(out)

    def translate_words(self, words, radius, g):
        g = as_group_element(g, self.rank)
        if self.rank == 1:
            g = (g,)
        moved = []
        R = radius
        for w in words:
            parts = []
            for f, x, gi in zip(self.factors, w, g):
                r_i, s = f.translate_words([x], radius, gi)
                parts.append((r_i, s))
            R = max(R, max(r for r, _ in parts))
            moved.append(parts)
        out = set()
        for parts in moved:
            lifted = [sorted(f.refine_words(s, r_i, R)) for f, (r_i, s) in zip(self.factors, parts)]
            out.update(itertools.product(*lifted))
        return R, frozenset(out)

    def word_measures(self, radius):
        def build():
            per = [f.word_measures(radius) for f in self.factors]
            fields = {f.number_field() for f in self.factors if isinstance(f, Substitution) and f.number_field() is not None}
            if len(fields) > 1:
                raise ValueError("exact product measure needs all factor frequencies in one number field")
            out = {}
            for w in self.words(radius):
                v = 1
                for m, x in zip(per, w):
                    v = m[x] * v
                out[w] = v
            return out
        return self._memo(("mu", radius), build)


def system_from_dict(d: dict) -> CantorSystem:
    if not isinstance(d, dict) or "kind" not in d:
        raise ValueError("system description must be an object with a 'kind' field")
    kind = d["kind"]
    allowed = {"odometer": {"kind", "bases"}, "substitution": {"kind", "rules"},
               "cycle": {"kind", "n"}, "product": {"kind", "factors"}}
    if kind not in allowed:
        raise ValueError(f"unknown system kind {kind!r}")
    extra = set(d) - allowed[kind]
    if extra:
        raise ValueError(f"unknown fields for {kind}: {sorted(extra)}")
    missing = allowed[kind] - set(d)
    if missing:
        raise ValueError(f"missing fields for {kind}: {sorted(missing)}")
    if kind == "odometer":
        return Odometer(d["bases"])
    if kind == "substitution":
        if not isinstance(d["rules"], dict):
            raise ValueError("substitution rules must be an object")
        return Substitution(d["rules"])
    if kind == "cycle":
        return FiniteCycle(d["n"])
    return ProductSystem([system_from_dict(f) for f in d["factors"]])


def system_to_dict(s: CantorSystem) -> dict:
    return s.to_dict()


def admissible_words(system, length: int):
    """Words of the given length in the language (odometer: digit blocks)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if isinstance(system, Odometer):
        return set(system.words(length))
    if isinstance(system, SymbolicSystem):
        return set(system.language(length))
    if isinstance(system, ProductSystem):
        return set(itertools.product(*(admissible_words(f, length) for f in system.factors)))
    raise TypeError(f"unsupported system {system!r}")


# ----------------------------------------------------------------------------
# clopens
# ----------------------------------------------------------------------------

class Clopen:
    """A clopen set given by admissible words at a fixed radius."""

    __slots__ = ("system", "radius", "words")

    def __init__(self, system, radius: int, words, check: bool = True):
        if radius < 0:
            raise ValueError("radius must be >= 0")
        words = frozenset(words)
        if check:
            legal = set(system.words(radius))
            bad = [w for w in words if w not in legal]
            if bad:
                raise ValueError(f"inadmissible words at radius {radius}: {sorted(bad)[:5]}")
        self.system = system
        self.radius = radius
        self.words = words

    @classmethod
    def empty(cls, system):
        return cls(system, 0, (), check=False)

    @classmethod
    def full(cls, system):
        return cls(system, 0, system.words(0), check=False)

    def at_radius(self, R: int) -> "Clopen":
        if R == self.radius:
            return self
        return Clopen(self.system, R, self.system.refine_words(self.words, self.radius, R), check=False)

    def _pair(self, other):
        if self.system != other.system:
            raise ValueError("clopens belong to different systems")
        R = max(self.radius, other.radius)
        return R, self.at_radius(R).words, other.at_radius(R).words

    def __or__(self, other):
        R, a, b = self._pair(other)
        return Clopen(self.system, R, a | b, check=False)

    def __and__(self, other):
        R, a, b = self._pair(other)
        return Clopen(self.system, R, a & b, check=False)

    def __sub__(self, other):
        R, a, b = self._pair(other)
        return Clopen(self.system, R, a - b, check=False)

    def complement(self) -> "Clopen":
        return Clopen(self.system, self.radius, set(self.system.words(self.radius)) - self.words, check=False)

    union = __or__
    intersection = __and__
    difference = __sub__

    def is_empty(self) -> bool:
        return not self.words

    def is_full(self) -> bool:
        return len(self.words) == len(self.system.words(self.radius))

    def issubset(self, other) -> bool:
        R, a, b = self._pair(other)
        return a <= b

    def isdisjoint(self, other) -> bool:
        R, a, b = self._pair(other)
        return not (a & b)

    def coarsen(self) -> "Clopen":
        """The same set at the smallest radius that can express it."""
        c = self
        while c.radius > 0:
            r = c.radius - 1
            proj = frozenset(self.system.restrict(w, c.radius, r) for w in c.words)
            if self.system.refine_words(proj, r, c.radius) != c.words:
                break
            c = Clopen(self.system, r, proj, check=False)
        return c

    def __eq__(self, other):
        if not isinstance(other, Clopen):
            return NotImplemented
        if self.system != other.system:
            return False
        R, a, b = self._pair(other)
        return a == b

    def __hash__(self):
        c = self.coarsen()
        return hash((c.radius, c.words))

    def __repr__(self):
        ws = sorted(self.words)
        show = ws[:6]
        more = "" if len(ws) <= 6 else f", ... (+{len(ws) - 6})"
        return f"Clopen(r={self.radius}, {show}{more})"

    def to_dict(self) -> dict:
        ws = sorted(self.words)
        if isinstance(self.system, ProductSystem):
            ws = ["|".join(w) for w in ws]
        return {"radius": self.radius, "words": ws}

    @classmethod
    def from_dict(cls, system, d: dict) -> "Clopen":
        if not isinstance(d, dict) or set(d) != {"radius", "words"}:
            raise ValueError("clopen must be an object with exactly 'radius' and 'words'")
        words = d["words"]
        if isinstance(system, ProductSystem):
            words = [tuple(w.split("|")) for w in words]
        return cls(system, int(d["radius"]), words)

    def contains_word(self, word, radius) -> bool:
        """Is the cell given by `word` at `radius` (>= self.radius) inside the set?"""
        return self.system.restrict(word, radius, self.radius) in self.words


def cylinder(system, word, start=0) -> Clopen:
    """Cylinder fixing `word` at positions start, start+1, ...

    Odometer: `word` is a digit prefix and `start` must be 0.
    Product: `word` and `start` are tuples, one entry per factor.
    """
    if isinstance(system, ProductSystem):
        if isinstance(start, int):
            start = (start,) * system.rank
        parts = [cylinder(f, w, s) for f, w, s in zip(system.factors, word, start)]
        R = max(p.radius for p in parts)
        lifted = [sorted(p.at_radius(R).words) for p in parts]
        return Clopen(system, R, itertools.product(*lifted), check=False)
    if isinstance(system, Odometer):
        if start != 0:
            raise ValueError("odometer cylinders are digit prefixes (start must be 0)")
        return Clopen(system, len(word), [word])
    n = len(word)
    R = max(-start, start + n - 1, 0)
    lo = R + start
    return Clopen(system, R, [w for w in system.words(R) if w[lo:lo + n] == word], check=False)


def translate(E: Clopen, g) -> Clopen:
    """The image of E under the action of g (for subshifts, sigma^g E)."""
    if E.is_empty():
        return E
    R, ws = E.system.translate_words(E.words, E.radius, g)
    return Clopen(E.system, R, ws, check=False)


def boolean_ops(E: Clopen, F: Clopen, op: str) -> Clopen:
    if op == "union":
        return E | F
    if op == "intersection":
        return E & F
    if op == "difference":
        return E - F
    if op == "complement":
        return E.complement()
    raise ValueError(f"unknown operation {op!r}")


# ----------------------------------------------------------------------------
# measures
# ----------------------------------------------------------------------------

class InvariantMeasure:
    """The invariant probability measure of a uniquely ergodic supported system.

    mode="exact" gives Fraction or FieldNumber values; mode="empirical" gives a
    Birkhoff frequency over a seeded window of `window_length` points.
    """

    def __init__(self, system, mode: str = "exact", window_length: int | None = None, seed: int | None = None):
        if mode not in ("exact", "empirical"):
            raise ValueError("mode must be 'exact' or 'empirical'")
        if mode == "empirical":
            if window_length is None or seed is None:
                raise ValueError("empirical mode needs window_length and seed")
            if isinstance(system, ProductSystem):
                raise ValueError("empirical mode is only implemented for Z-systems")
        self.system = system
        self.mode = mode
        self.window_length = window_length
        self.seed = seed
        self._window = None

    def __call__(self, E: Clopen):
        return measure(self, E)

    def window(self):
        if self._window is None:
            self._window = generate_window(self.system, self.window_length, self.seed)
        return self._window


def measure(mu: InvariantMeasure, E: Clopen):
    if E.system != mu.system:
        raise ValueError("clopen and measure belong to different systems")
    if mu.mode == "exact":
        if E.is_empty():
            return Fraction(0)
        table = mu.system.word_measures(E.radius)
        total = 0
        for w in sorted(E.words):
            total = table[w] + total
        return total
    w = mu.window()
    lo, hi = w.valid_range(E.radius)
    m = w.mask(E)[lo:hi]
    return float(m.mean())


def exact_measure(E: Clopen):
    return measure(InvariantMeasure(E.system), E)


# ----------------------------------------------------------------------------
# orbit windows
# ----------------------------------------------------------------------------

class OrbitWindow:
    """Finite piece sigma^n x, n = 0..L-1, of one orbit.

    Subshifts store the symbol string (x_n)_{n<L}; the radius-r cell of point n
    is symbols[n-r : n+r+1] and is only available for r <= n < L-r.
    Odometers store the integer x0 (enough digits for any radius we query) and
    every index is valid.
    """

    def __init__(self, system, symbols: str, start: int | None = None, depth: int = 0):
        self.system = system
        self.symbols = symbols
        self.start = start
        self.depth = depth
        self.length = len(symbols)

    def __len__(self):
        return self.length

    def valid_range(self, radius: int) -> tuple:
        if isinstance(self.system, Odometer):
            if radius > self.depth:
                raise ValueError(f"window only carries {self.depth} digits")
            return 0, self.length
        if 2 * radius + 1 > self.length:
            raise ValueError(f"window of length {self.length} too short for radius {radius}")
        return radius, self.length - radius

    def cell(self, n: int, radius: int):
        lo, hi = self.valid_range(radius)
        if not lo <= n < hi:
            raise IndexError(f"index {n} outside the valid range [{lo}, {hi}) for radius {radius}")
        if isinstance(self.system, Odometer):
            return self.system.encode((self.start + n) % self.system.modulus(radius), radius)
        return self.symbols[n - radius:n + radius + 1]

    def cells(self, radius: int) -> list:
        """Cells of all valid indices, in order."""
        lo, hi = self.valid_range(radius)
        if isinstance(self.system, Odometer):
            B = self.system.modulus(radius)
            base = self.start % B
            return [self.system.encode((base + n) % B, radius) for n in range(lo, hi)]
        s = self.symbols
        w = 2 * radius + 1
        return [s[n - radius:n - radius + w] for n in range(lo, hi)]

    def residues(self, radius: int) -> np.ndarray:
        B = self.system.modulus(radius)
        return (np.arange(self.length, dtype=np.int64) + (self.start % B)) % B

    def member(self, E: Clopen, n: int) -> bool:
        return E.contains_word(self.cell(n, E.radius), E.radius)

    def mask(self, E: Clopen) -> np.ndarray:
        """Boolean indicator of E along the window; positions outside the valid range are False."""
        out = np.zeros(self.length, dtype=bool)
        lo, hi = self.valid_range(E.radius)
        if E.is_empty():
            return out
        if isinstance(self.system, Odometer):
            B = self.system.modulus(E.radius)
            hit = np.zeros(B, dtype=bool)
            for w in E.words:
                hit[self.system.decode(w)] = True
            out[:] = hit[self.residues(E.radius)]
            return out
        words = E.words
        out[lo:hi] = [c in words for c in self.cells(E.radius)]
        return out

    def values(self, f, radius: int) -> np.ndarray:
        """Evaluate a cell-indexed dict or callable along the valid range."""
        cells = self.cells(radius)
        if callable(f):
            return np.array([f(c) for c in cells])
        return np.array([f[c] for c in cells])


def generate_window(system, L: int, seed: int, radius: int = 0, start: int | None = None, depth: int = 128) -> OrbitWindow:
    """A legal orbit segment of length L, deterministic in seed."""
    if L < 2 * radius + 1 or L < 1:
        raise ValueError(f"window length {L} too small for radius {radius}")
    rng = np.random.default_rng(seed)
    if isinstance(system, ProductSystem):
        raise ValueError("orbit windows are one-dimensional; use per-factor windows for products")
    if isinstance(system, Odometer):
        if start is None:
            start = 0
            mult = 1
            for i in range(depth):
                b = system.base(i)
                start += int(rng.integers(b)) * mult
                mult *= b
        first = system.base(0)
        syms = "".join(symbol((start + n) % first) for n in range(L))
        return OrbitWindow(system, syms, start=start, depth=depth)
    if isinstance(system, FiniteCycle):
        p = int(rng.integers(system.n)) if start is None else start % system.n
        return OrbitWindow(system, system.point_word(p, L), start=p)
    if isinstance(system, Substitution):
        k = system.level_for(L)
        L2 = system.two_words()
        u = L2[int(rng.integers(len(L2)))]
        s = system.image(u, k)
        off = int(rng.integers(len(s) - L + 1))
        return OrbitWindow(system, s[off:off + L])
    raise TypeError(f"unsupported system {system!r}")


# ----------------------------------------------------------------------------
# configuration tables
# ----------------------------------------------------------------------------

class ConfigTable:
    """Every local picture of an orbit: which radius-r cell sits at each offset.

    Row c lists, for offsets -span..span, the index (into `cells`) of the cell
    containing sigma^o x, for x ranging over one representative per
    configuration. Configurations exhaust the system, so any statement about
    finitely many translates of radius-r data can be checked by scanning rows.
    """

    def __init__(self, system, radius, span, cells, table, keys):
        self.system = system
        self.radius = radius
        self.span = span
        self.cells = cells
        self.index = {c: i for i, c in enumerate(cells)}
        self.table = table
        self.keys = keys

    def __len__(self):
        return self.table.shape[0]

    def column(self, offset: int) -> np.ndarray:
        if abs(offset) > self.span:
            raise ValueError(f"offset {offset} beyond span {self.span}")
        return self.table[:, offset + self.span]

    def cell_mask(self, E: Clopen) -> np.ndarray:
        if E.radius > self.radius:
            raise ValueError(f"clopen radius {E.radius} exceeds table radius {self.radius}")
        return np.array([E.contains_word(c, self.radius) for c in self.cells], dtype=bool)

    def hits(self, E: Clopen, offset: int = 0) -> np.ndarray:
        return self.cell_mask(E)[self.column(offset)]

    def weights(self) -> list:
        """Exact measure of each configuration."""
        s = self.system
        if isinstance(s, Odometer):
            q = Fraction(1, s.modulus(self.radius))
            return [q] * len(self)
        if isinstance(s, FiniteCycle):
            return [Fraction(1, s.n)] * len(self)
        mu = s.frequencies(2 * (self.radius + self.span) + 1)
        return [mu[k] for k in self.keys]


def configurations(system, radius: int, span: int) -> ConfigTable:
    key = ("configs", radius, span)
    if key in system._cache:
        return system._cache[key]
    cells = tuple(system.words(radius))
    idx = {c: i for i, c in enumerate(cells)}
    if isinstance(system, Odometer):
        B = system.modulus(radius)
        res = np.arange(B, dtype=np.int64)
        code = np.array([idx[system.encode(v, radius)] for v in range(B)], dtype=np.int64)
        table = np.stack([code[(res + o) % B] for o in range(-span, span + 1)], axis=1)
        keys = list(range(B))
    elif isinstance(system, SymbolicSystem):
        m = 2 * (radius + span) + 1
        keys = list(system.language(m))
        w = 2 * radius + 1
        table = np.array([[idx[k[span + o:span + o + w]] for o in range(-span, span + 1)] for k in keys], dtype=np.int64)
        if isinstance(system, FiniteCycle) and len(keys) != system.n:
            raise AssertionError("cycle configurations must be the n points")
    else:
        raise ValueError("configuration tables are implemented for Z-systems only")
    ct = ConfigTable(system, radius, span, cells, table, keys)
    system._cache[key] = ct
    return ct


# ----------------------------------------------------------------------------
# orbit capacity
# ----------------------------------------------------------------------------

def _max_window_sum(ind: np.ndarray, n: int, circular: bool) -> int:
    if circular:
        reps = -(-(len(ind) + n) // len(ind))
        ind = np.tile(ind, reps)[: len(ind) + n - 1]
    if len(ind) < n:
        raise ValueError("indicator shorter than the window")
    c = np.concatenate([[0], np.cumsum(ind, dtype=np.int64)])
    return int((c[n:] - c[:-n]).max())


def _factor_windows(system, radius: int, n: int, exhaustive_cap: int):
    """All distinct length-n cell-index sequences of a Z-system, or None if too many."""
    cells = system.words(radius)
    idx = {c: i for i, c in enumerate(cells)}
    if isinstance(system, Odometer):
        B = system.modulus(radius)
        if B > exhaustive_cap:
            return None
        code = np.array([idx[system.encode(v, radius)] for v in range(B)], dtype=np.int64)
        return [code[(v + np.arange(n)) % B] for v in range(B)]
    seqs = {}
    total = sum(len(s) for s in system.sweep(n + 2 * radius))
    if total > 50 * exhaustive_cap:
        return None
    for s in system.sweep(n + 2 * radius):
        row = np.array([idx[s[j - radius:j + radius + 1]] for j in range(radius, len(s) - radius)], dtype=np.int64)
        for t in range(len(row) - n + 1):
            seqs.setdefault(row[t:t + n].tobytes(), row[t:t + n])
            if len(seqs) > exhaustive_cap:
                return None
    return list(seqs.values())


def estimate_ocap(system, E: Clopen, n: int, sample_count: int = 1000, seed: int = 0) -> float:
    """(1/|box_n|) max_x sum_{g in box_n} 1_E(xg).

    The max is exact when the local pictures can be enumerated (odometers,
    cycles, and subshifts via sweep strings); otherwise it is a max over
    `sample_count` seeded windows and therefore a lower estimate.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sample_count is not None and sample_count <= 0:
        raise ValueError("sample_count must be positive")
    if E.is_empty():
        return 0.0
    if E.is_full():
        return 1.0
    r = E.radius
    if isinstance(system, ProductSystem):
        return _ocap_product(system, E, n, sample_count, seed)
    if isinstance(system, Odometer):
        B = system.modulus(r)
        ind = np.zeros(B, dtype=np.int64)
        for w in E.words:
            ind[system.decode(w)] = 1
        if B <= 50 * EXHAUSTIVE_LIMIT:
            return _max_window_sum(ind, n, circular=True) / n
        rng = np.random.default_rng(seed)
        best = 0
        for _ in range(sample_count):
            v = int(rng.integers(B))
            best = max(best, int(ind[(v + np.arange(n)) % B].sum()))
        return best / n
    sweeps = system.sweep(n + 2 * r)
    total = sum(len(s) for s in sweeps)
    if total <= 50 * EXHAUSTIVE_LIMIT:
        best = 0
        for s in sweeps:
            ind = np.array([s[j - r:j + r + 1] in E.words for j in range(r, len(s) - r)], dtype=np.int64)
            if len(ind) >= n:
                best = max(best, _max_window_sum(ind, n, circular=False))
        return best / n
    rng = np.random.default_rng(seed)
    best = 0
    for _ in range(sample_count):
        w = generate_window(system, n + 2 * r, int(rng.integers(2**63 - 1)), radius=r)
        best = max(best, int(w.mask(E).sum()))
    return best / n


def _ocap_product(system, E, n, sample_count, seed):
    r = E.radius
    d = system.rank
    shape = [len(f.words(r)) for f in system.factors]
    arr = np.zeros(shape, dtype=np.int64)
    idx = [{c: i for i, c in enumerate(f.words(r))} for f in system.factors]
    for w in E.words:
        arr[tuple(ix[x] for ix, x in zip(idx, w))] = 1
    per = [_factor_windows(f, r, n, EXHAUSTIVE_LIMIT) for f in system.factors]
    count = math.prod(len(p) for p in per) if all(p is not None for p in per) else None
    best = 0
    if count is not None and count <= EXHAUSTIVE_LIMIT:
        for combo in itertools.product(*per):
            best = max(best, int(arr[np.ix_(*combo)].sum()))
        return best / n**d
    rng = np.random.default_rng(seed)
    for _ in range(sample_count):
        combo = []
        for f, p in zip(system.factors, per):
            if p is not None:
                combo.append(p[int(rng.integers(len(p)))])
            else:
                w = generate_window(f, n + 2 * r, int(rng.integers(2**63 - 1)), radius=r)
                cells = w.cells(r)
                combo.append(np.array([idx[len(combo)][c] for c in cells[:n]], dtype=np.int64))
        best = max(best, int(arr[np.ix_(*combo)].sum()))
    return best / n**d
