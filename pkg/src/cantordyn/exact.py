"""Exact arithmetic in Q(lambda) for Perron eigenvalues of substitution matrices.

Values are sympy ANP elements wrapped so they mix freely with int and Fraction.
Comparisons go through a 60-digit evaluation of the generator, which is exact
for any nonzero difference we will ever meet at desk scale.
"""

from __future__ import annotations

from fractions import Fraction

import mpmath
import sympy
from sympy import QQ


class NumberField:
    def __init__(self, minpoly, root_index: int):
        x = sympy.Symbol("x")
        self.poly = sympy.Poly(minpoly, x)
        self.root = sympy.CRootOf(self.poly, root_index)
        self.K = QQ.algebraic_field(self.root)
        with mpmath.workdps(70):
            self._gen = mpmath.mpf(str(self.root.evalf(70)))
        self.degree = self.poly.degree()

    def __eq__(self, other):
        return isinstance(other, NumberField) and self.poly == other.poly and str(self.root) == str(other.root)

    def __hash__(self):
        return hash((str(self.poly), str(self.root)))

    def __repr__(self):
        return f"NumberField({self.root})"

    def generator(self) -> "FieldNumber":
        return FieldNumber(self, self.K.from_sympy(self.root))

    def lift(self, value) -> "FieldNumber":
        if isinstance(value, FieldNumber):
            if value.field != self:
                raise ValueError("values live in different number fields")
            return value
        if isinstance(value, Fraction):
            return FieldNumber(self, self.K.convert(QQ(value.numerator, value.denominator)))
        if isinstance(value, int):
            return FieldNumber(self, self.K.convert(QQ(value)))
        raise TypeError(f"cannot lift {type(value).__name__} into {self}")


class FieldNumber:
    __slots__ = ("field", "rep")

    def __init__(self, field: NumberField, rep):
        self.field = field
        self.rep = rep

    def _other(self, other):
        if isinstance(other, (int, Fraction, FieldNumber)):
            return self.field.lift(other).rep
        return NotImplemented

    def __add__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return FieldNumber(self.field, self.rep + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return FieldNumber(self.field, self.rep - o)

    def __rsub__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return FieldNumber(self.field, o - self.rep)

    def __mul__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return FieldNumber(self.field, self.rep * o)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        if not o:
            raise ZeroDivisionError("division by zero in number field")
        return FieldNumber(self.field, self.rep / o)

    def __rtruediv__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return FieldNumber(self.field, o / self.rep)

    def __neg__(self):
        return FieldNumber(self.field, -self.rep)

    def __pos__(self):
        return self

    def __abs__(self):
        return -self if self < 0 else self

    def _mp(self):
        coeffs = self.rep.to_list()
        with mpmath.workdps(70):
            acc = mpmath.mpf(0)
            for c in coeffs:
                acc = acc * self.field._gen + mpmath.mpf(int(c.numerator)) / int(c.denominator)
            return acc

    def sign(self) -> int:
        if not self.rep:
            return 0
        return 1 if self._mp() > 0 else -1

    def __float__(self):
        return float(self._mp())

    def __eq__(self, other):
        if isinstance(other, (int, Fraction, FieldNumber)):
            try:
                return self.rep == self.field.lift(other).rep
            except ValueError:
                return False
        if isinstance(other, float):
            return float(self) == other
        return NotImplemented

    def __hash__(self):
        if self.rep.is_ground or not self.rep:
            lst = self.rep.to_list()
            v = lst[0] if lst else 0
            return hash(Fraction(int(v.numerator), int(v.denominator)) if lst else 0)
        return hash(tuple(str(c) for c in self.rep.to_list()))

    def _cmp(self, other) -> int:
        if isinstance(other, float):
            a = float(self)
            return (a > other) - (a < other)
        return (self - other).sign()

    def __lt__(self, other):
        return self._cmp(other) < 0

    def __le__(self, other):
        return self._cmp(other) <= 0

    def __gt__(self, other):
        return self._cmp(other) > 0

    def __ge__(self, other):
        return self._cmp(other) >= 0

    def to_sympy(self):
        return self.field.K.to_sympy(self.rep)

    def __repr__(self):
        return f"FieldNumber({self.to_sympy()} ~ {float(self):.12g})"

    def __str__(self):
        return str(self.to_sympy())


def perron_field(matrix) -> tuple[object, object]:
    """Return (lambda, field) for the Perron root of a nonnegative integer matrix.

    field is None when lambda is rational; lambda is then a Fraction.
    """
    M = sympy.Matrix(matrix)
    x = sympy.Symbol("x")
    cp = M.charpoly(x).as_expr()
    _, factors = sympy.factor_list(cp, x)
    best = None
    for fac, _mult in factors:
        p = sympy.Poly(fac, x)
        # real_roots come in increasing order, matching CRootOf indices
        for i, r in enumerate(p.real_roots()):
            val = float(r.evalf(30))
            if best is None or val > best[0] + 1e-12:
                best = (val, p, i)
    _, p, idx = best
    if p.degree() == 1:
        c = p.all_coeffs()
        q = -sympy.Rational(c[1]) / sympy.Rational(c[0])
        return Fraction(int(q.p), int(q.q)), None
    field = NumberField(p.as_expr(), idx)
    return field.generator(), field


def to_float(v) -> float:
    return float(v)
