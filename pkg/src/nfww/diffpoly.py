"""Exact differential polynomials in the jet variables ``r_k``, ``s_k`` (k >= -1).

Jet variables are jets of two potentials: ``r_k`` is the (k+1)-th jet of the
R-potential, so ``r_{-1}`` is the potential itself and ``D r_{-1} = r`` holds
structurally.  With that convention "is a total derivative" is decided
exactly by the Euler operators of the two potentials.

Besides jets, a polynomial may contain *antiderivative atoms* ``dinv(b)``
with ``D dinv(b) = b``.  For a single field, ``b`` is one canonical monomial
without a jet antiderivative; this keeps atom-linear densities canonical.
Atoms carry the nonlocal part of gradients and of generating functions such
as ``-1/2 int dinv(r^2) s^2``.

Coefficients are :class:`fractions.Fraction`; floats are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Iterator, Mapping, NamedTuple

FIELDS = ("r", "s")
MIN_ORDER = -1


class OrderUnderflow(ValueError):
    """Raised when an operation needs a jet of order <= -2."""


class NotTotalDerivative(ValueError):
    """Raised when an exact antiderivative does not exist in the jet algebra."""


class ReductionFailure(RuntimeError):
    """A nonlocal term survived a reduction that should have removed it."""


class Jet(NamedTuple):
    """A jet ``field_order``, or an atom ``dinv(arg)`` when ``arg`` is non-empty.

    ``arg`` holds the sorted items of the atom's argument polynomial.  Atom
    fields are ``"r"``/``"s"`` for single-field arguments and ``"rs"`` for
    mixed ones; their order is nominally -1.
    """

    field: str
    order: int
    arg: tuple = ()

    @property
    def is_atom(self) -> bool:
        return bool(self.arg)

    def argument(self) -> "DiffPoly":
        return DiffPoly(dict(self.arg))

    def shifted(self, k: int = 1) -> "Jet":
        if self.arg:
            raise ValueError("atoms have no jet shift")
        order = self.order + k
        if order < MIN_ORDER:
            raise OrderUnderflow(f"{self.field}_{{{order}}} is not a jet variable")
        return Jet(self.field, order)

    def __str__(self) -> str:
        if self.arg:
            return f"dinv({self.argument()})"
        if self.order == 0:
            return self.field
        if self.order < 0:
            return f"{self.field}_{{{self.order}}}"
        return f"{self.field}{self.order}"


def jet(field: str, order: int = 0) -> Jet:
    if field not in FIELDS:
        raise ValueError(f"unknown field {field!r}")
    if not isinstance(order, int) or order < MIN_ORDER:
        raise OrderUnderflow(f"jet order {order} below {MIN_ORDER}")
    return Jet(field, order)


# A monomial key is a sorted tuple of (Jet, power) with power >= 1.
Key = tuple


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, bool):
        raise TypeError("booleans are not coefficients")
    if isinstance(c, (int, Rational)):
        return Fraction(c)
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"coefficients must be exact rationals, got {type(c).__name__}")


def _mul_keys(a: Key, b: Key) -> Key:
    if not a:
        return b
    if not b:
        return a
    powers = dict(a)
    for v, e in b:
        powers[v] = powers.get(v, 0) + e
    return tuple(sorted(powers.items()))


def _key_degree(key: Key) -> int:
    return sum(e for _, e in key)


def _mono_sort(key: Key):
    return (_key_degree(key), key)


def key_fields(key: Key) -> frozenset:
    out = set()
    for v, _ in key:
        out.update(v.field)
    return frozenset(out)


def key_atoms(key: Key) -> list:
    return [(v, e) for v, e in key if v.arg]


@dataclass(frozen=True)
class DiffMono:
    """One term ``coeff * prod(var**power)``."""

    coeff: Fraction
    factors: Key

    @property
    def degree(self) -> int:
        return _key_degree(self.factors)

    def fields(self) -> frozenset:
        return key_fields(self.factors)

    def poly(self) -> "DiffPoly":
        return DiffPoly({self.factors: self.coeff})

    def __str__(self) -> str:
        return str(self.poly())


class DiffPoly:
    """Canonical sparse polynomial over :class:`Jet` variables.

    The zero polynomial has no terms.  A term with an empty factor tuple is a
    constant; constants are legal here (they show up as partial derivatives
    of linear terms) but are rejected as densities of :class:`Functional`.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Key, object] | None = None):
        clean = {}
        if terms:
            for key, c in terms.items():
                c = _as_fraction(c)
                if c:
                    clean[key] = c
        self._terms: dict = clean
        self._hash = None

    # -- construction -------------------------------------------------
    @classmethod
    def var(cls, field: str, order: int = 0, power: int = 1) -> "DiffPoly":
        if power < 1:
            raise ValueError("power must be >= 1")
        return cls({((jet(field, order), power),): 1})

    @classmethod
    def const(cls, c) -> "DiffPoly":
        return cls({(): c})

    @classmethod
    def _raw(cls, terms: dict) -> "DiffPoly":
        out = cls.__new__(cls)
        out._terms = terms
        out._hash = None
        return out

    # -- inspection ---------------------------------------------------
    def items(self) -> list:
        return sorted(self._terms.items(), key=lambda kv: _mono_sort(kv[0]))

    def monomials(self) -> list:
        return [DiffMono(c, k) for k, c in self.items()]

    def coeff(self, key: Key) -> Fraction:
        return self._terms.get(key, Fraction(0))

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator:
        return iter(self.items())

    def __bool__(self) -> bool:
        return bool(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def variables(self) -> set:
        return {v for key in self._terms for v, _ in key}

    def jets(self) -> set:
        return {v for v in self.variables() if not v.arg}

    def atoms(self) -> set:
        return {v for v in self.variables() if v.arg}

    def has_atoms(self) -> bool:
        return any(v.arg for key in self._terms for v, _ in key)

    def fields(self) -> set:
        out = set()
        for v in self.variables():
            out.update(v.field)
        return out

    def degree(self) -> int:
        return max((_key_degree(k) for k in self._terms), default=0)

    def max_order(self, field: str | None = None) -> int | None:
        orders = [v.order for v in self.jets() if field is None or v.field == field]
        return max(orders) if orders else None

    def min_order(self, field: str | None = None) -> int | None:
        orders = [v.order for v in self.jets() if field is None or v.field == field]
        return min(orders) if orders else None

    def has_constant(self) -> bool:
        return () in self._terms

    # -- arithmetic ---------------------------------------------------
    def __add__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for k, c in other._terms.items():
            v = terms.get(k, 0) + c
            if v:
                terms[k] = v
            else:
                terms.pop(k, None)
        return DiffPoly._raw(terms)

    __radd__ = __add__

    def __neg__(self):
        return DiffPoly._raw({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c) -> "DiffPoly":
        c = _as_fraction(c)
        if not c:
            return DiffPoly()
        return DiffPoly._raw({k: v * c for k, v in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, DiffPoly):
            terms: dict = {}
            for ka, ca in self._terms.items():
                for kb, cb in other._terms.items():
                    k = _mul_keys(ka, kb)
                    v = terms.get(k, 0) + ca * cb
                    if v:
                        terms[k] = v
                    else:
                        terms.pop(k, None)
            return DiffPoly._raw(terms)
        try:
            return self.scale(other)
        except TypeError:
            return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.scale(1 / _as_fraction(other))

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers are not polynomials")
        out = DiffPoly.const(1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    # -- transforms ---------------------------------------------------
    def partial(self, v: Jet) -> "DiffPoly":
        """Partial derivative with respect to the variable ``v``."""
        terms: dict = {}
        for key, c in self._terms.items():
            for i, (w, e) in enumerate(key):
                if w == v:
                    rest = key[:i] + (((w, e - 1),) if e > 1 else ()) + key[i + 1:]
                    terms[rest] = terms.get(rest, 0) + c * e
                    break
        return DiffPoly(terms)

    def restrict(self, pred) -> "DiffPoly":
        """Keep the terms whose key satisfies ``pred``."""
        return DiffPoly._raw({k: c for k, c in self._terms.items() if pred(k)})

    def rename(self, mapping: Mapping[str, str]) -> "DiffPoly":
        if self.has_atoms():
            raise ValueError("rename is defined for jet polynomials only")
        terms: dict = {}
        for key, c in self._terms.items():
            nk = tuple(sorted((Jet(mapping.get(v.field, v.field), v.order), e) for v, e in key))
            terms[nk] = terms.get(nk, 0) + c
        return DiffPoly(terms)

    def reflect(self) -> "DiffPoly":
        """Image under ``y -> -y``: a jet of order k picks up ``(-1)**k``."""
        if self.has_atoms():
            raise ValueError("reflect is defined for jet polynomials only")
        return DiffPoly._raw({
            k: c * (-1) ** (sum(v.order * e for v, e in k) % 2) for k, c in self._terms.items()
        })

    def subs(self, v: Jet, value: "DiffPoly") -> "DiffPoly":
        out = DiffPoly()
        for key, c in self._terms.items():
            term = DiffPoly.const(c)
            for w, e in key:
                term = term * (value ** e if w == v else DiffPoly({((w, e),): 1}))
            out = out + term
        return out

    # -- display ------------------------------------------------------
    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for key, c in self.items():
            body = "*".join(str(v) if e == 1 else f"{v}^{e}" for v, e in key)
            if not body:
                parts.append(str(c))
            elif c == 1:
                parts.append(body)
            elif c == -1:
                parts.append("-" + body)
            else:
                parts.append(f"{c}*{body}")
        return " + ".join(parts).replace("+ -", "- ")

    def __repr__(self) -> str:
        return f"DiffPoly({self})"

    # -- serialization ------------------------------------------------
    def to_json(self) -> dict:
        monos = []
        for key, c in self.items():
            factors = []
            for v, e in key:
                entry = {"field": v.field, "order": v.order, "power": e}
                if v.arg:
                    entry["dinv"] = v.argument().to_json()
                factors.append(entry)
            monos.append({
                "coeff": {"num": str(c.numerator), "den": str(c.denominator)},
                "vars": factors,
            })
        return {"monomials": monos}

    @classmethod
    def from_json(cls, data: Mapping) -> "DiffPoly":
        terms: dict = {}
        for m in data["monomials"]:
            c = Fraction(int(m["coeff"]["num"]), int(m["coeff"]["den"]))
            key = []
            for f in m["vars"]:
                power = int(f["power"])
                if power < 1:
                    raise ValueError("powers must be positive")
                if "dinv" in f:
                    key.append((_atom(cls.from_json(f["dinv"])), power))
                else:
                    key.append((jet(f["field"], int(f["order"])), power))
            key = tuple(sorted(key))
            if len({v for v, _ in key}) != len(key):
                raise ValueError("repeated variable in monomial")
            if key in terms:
                raise ValueError("duplicate monomial in serialized DiffPoly")
            terms[key] = c
        return cls(terms)


def _coerce(x):
    if isinstance(x, DiffPoly):
        return x
    try:
        return DiffPoly.const(x)
    except TypeError:
        return NotImplemented


def var(field: str, order: int = 0) -> DiffPoly:
    return DiffPoly.var(field, order)


def r(order: int = 0) -> DiffPoly:
    return DiffPoly.var("r", order)


def s(order: int = 0) -> DiffPoly:
    return DiffPoly.var("s", order)


def poly_sum(items: Iterable[DiffPoly]) -> DiffPoly:
    out: dict = {}
    for p in items:
        for k, c in p._terms.items():
            v = out.get(k, 0) + c
            if v:
                out[k] = v
            else:
                out.pop(k, None)
    return DiffPoly._raw(out)


def from_key(key: Key, coeff=1) -> DiffPoly:
    return DiffPoly({key: coeff})


def split_by_field(key: Key) -> tuple:
    """Split a monomial key into r-part and s-part keys (atoms go by their field)."""
    rk = tuple((v, e) for v, e in key if v.field == "r")
    sk = tuple((v, e) for v, e in key if v.field == "s")
    if len(rk) + len(sk) != len(key):
        raise ValueError("monomial contains a mixed atom")
    return rk, sk


# ----------------------------------------------------------------------
# total derivative, Euler operators, antiderivatives
# ----------------------------------------------------------------------

def total_derivative(p: DiffPoly, times: int = 1) -> DiffPoly:
    """Apply ``D = d/dy`` ``times`` times (``v_k -> v_{k+1}``, ``D dinv(b) = b``)."""
    for _ in range(times):
        terms: dict = {}
        for key, c in p._terms.items():
            for i, (v, e) in enumerate(key):
                rest = key[:i] + (((v, e - 1),) if e > 1 else ()) + key[i + 1:]
                if v.arg:
                    images = v.arg
                else:
                    images = ((((Jet(v.field, v.order + 1), 1),), 1),)
                for k2, c2 in images:
                    nk = _mul_keys(rest, k2)
                    val = terms.get(nk, 0) + c * e * c2
                    if val:
                        terms[nk] = val
                    else:
                        terms.pop(nk, None)
        p = DiffPoly._raw(terms)
    return p


D = total_derivative


def euler(p: DiffPoly, field: str) -> DiffPoly:
    """Euler operator of the potential of ``field`` (jet polynomials only).

    ``E(p) = sum_{k >= -1} (-D)^{k+1} dp/d(field_k)``; it vanishes for both
    fields iff ``p`` (without constant term) is a total derivative.
    """
    if p.has_atoms():
        raise ValueError("the Euler test applies to jet polynomials only")
    out = DiffPoly()
    for v in sorted(x for x in p.variables() if x.field == field):
        n = v.order + 1
        term = total_derivative(p.partial(v), n)
        out = out + (term if n % 2 == 0 else -term)
    return out


def _is_exact_jets(p: DiffPoly) -> bool:
    if p.has_constant():
        return False
    return all(euler(p, f).is_zero() for f in FIELDS)


def _integrate_in(a: DiffPoly, v: Jet) -> DiffPoly:
    """Polynomial antiderivative of ``a`` in the single variable ``v``."""
    terms = {}
    for key, c in a._terms.items():
        powers = dict(key)
        e = powers.get(v, 0) + 1
        powers[v] = e
        terms[tuple(sorted(powers.items()))] = c / e
    return DiffPoly(terms)


def _peel(p: DiffPoly) -> DiffPoly | None:
    """Greedy inverse-Leibniz peeling of the top jet, field by field.

    Returns ``q`` with ``D q == p`` or ``None``.
    """
    q = DiffPoly()
    rest = p
    for field in FIELDS:
        while True:
            top = rest.max_order(field)
            if top is None:
                break
            if top == MIN_ORDER:
                return None
            v = Jet(field, top)
            linear = {}
            for key, c in rest._terms.items():
                powers = dict(key)
                e = powers.get(v, 0)
                if e > 1:
                    return None
                if e == 1:
                    del powers[v]
                    linear[tuple(sorted(powers.items()))] = c
            step = _integrate_in(DiffPoly(linear), Jet(field, top - 1))
            q = q + step
            rest = rest - total_derivative(step)
    return q if rest.is_zero() else None


def antiderivative_exact(p: DiffPoly) -> DiffPoly:
    """Return ``q`` (jet orders >= -1, no constant) with ``D q == p``.

    Raises :class:`OrderUnderflow` if ``p`` would only be a total derivative
    once order -2 jets are admitted (e.g. ``s_{-1}``), and
    :class:`NotTotalDerivative` otherwise.
    """
    if p.is_zero():
        return DiffPoly()
    if p.has_atoms():
        q = _antiderivative_atoms(p)
        if q is None:
            raise NotTotalDerivative(str(p))
        return q
    if not p.has_constant():
        eul = [euler(p, f) for f in FIELDS]
        if all(e.is_zero() for e in eul):
            q = _peel(p)
            if q is None or total_derivative(q) != p:
                raise AssertionError(f"peeling failed on an exact polynomial: {p}")
            return q
        if all(e.is_zero() or e.degree() == 0 for e in eul):
            raise OrderUnderflow(f"antiderivative of {p} needs order -2 jets")
    raise NotTotalDerivative(str(p))


def _antiderivative_atoms(p: DiffPoly) -> DiffPoly | None:
    """Peel ``c * a^e * m`` as ``D(a^(e+1)/(e+1) * m/b)`` where ``a = dinv(b)``.

    A heuristic: it covers the shapes produced by gradients of atom-linear
    densities and returns ``None`` when it does not apply.
    """
    q = DiffPoly()
    rest = p
    for _ in range(32):
        atomic = rest.restrict(lambda k: bool(key_atoms(k)))
        if atomic.is_zero():
            break
        key, c = atomic.items()[-1]
        v, e = key_atoms(key)[-1]
        others = tuple(f for f in key if f[0] != v)
        quotient = _divide_monomial(from_key(others, c), v.argument())
        if quotient is None:
            return None
        step = from_key(((v, e + 1),), Fraction(1, e + 1)) * quotient
        q = q + step
        rest = rest - total_derivative(step)
    else:
        return None
    tail = try_antiderivative(rest)
    if tail is None:
        return None
    q = q + tail
    return q if total_derivative(q) == p else None


def _divide_monomial(a: DiffPoly, b: DiffPoly) -> DiffPoly | None:
    """Exact quotient ``a / b`` when ``b`` is a single monomial dividing every term of ``a``."""
    if len(b) != 1:
        return None
    (bk, bc), = b.items()
    terms = {}
    for key, c in a._terms.items():
        powers = dict(key)
        for v, e in bk:
            if powers.get(v, 0) < e:
                return None
            powers[v] -= e
            if not powers[v]:
                del powers[v]
        terms[tuple(sorted(powers.items()))] = c / bc
    return DiffPoly(terms)


def try_antiderivative(p: DiffPoly) -> DiffPoly | None:
    try:
        return antiderivative_exact(p)
    except (NotTotalDerivative, OrderUnderflow):
        return None


def is_total_derivative(p: DiffPoly) -> bool:
    """Exact test of ``int p = 0``; densities with atoms are reduced first.

    For jet polynomials the answer is decided by the Euler operators.  With
    atoms it is exact for atom-linear densities whose atoms and multipliers
    are single-field, and conservative (may answer ``False``) otherwise.
    """
    if p.is_zero():
        return True
    if not p.has_atoms():
        return _is_exact_jets(p)
    local, nonlocal_part = reduce_density(p)
    if nonlocal_part.is_zero():
        return local.is_zero() or _is_exact_jets(local)
    if (local + nonlocal_part).has_constant():
        return False
    return all(is_zero_function(_gradient_poly(local + nonlocal_part, f)) for f in FIELDS)


def _euler_vector(q: DiffPoly) -> dict:
    vec = {}
    for f in FIELDS:
        for key, c in euler(q, f)._terms.items():
            vec[(f, key)] = c
    return vec


def atom_relations(atoms: Iterable[Jet]) -> dict:
    """Express linearly dependent atoms (modulo ``D``) through independent ones.

    Returns ``{atom: replacement}`` where each replacement is a combination of
    the retained atoms plus a jet polynomial.  Dependencies are found by exact
    elimination on the Euler images of the arguments; atoms whose arguments
    carry atoms themselves are kept as they are.
    """
    echelon: list = []  # (pivot, vector, combination {atom: coeff})
    out = {}
    for a in sorted(atoms):
        q = a.argument()
        if q.has_atoms():
            continue
        vec = _euler_vector(q)
        combo = {a: Fraction(1)}
        for pivot, pvec, pcombo in echelon:
            c = vec.get(pivot)
            if c:
                for k, v in pvec.items():
                    nv = vec.get(k, 0) - c * v
                    if nv:
                        vec[k] = nv
                    else:
                        vec.pop(k, None)
                for k, v in pcombo.items():
                    combo[k] = combo.get(k, 0) - c * v
        if vec:
            pivot = min(vec)
            pc = vec[pivot]
            echelon.append((pivot, {k: v / pc for k, v in vec.items()},
                            {k: v / pc for k, v in combo.items()}))
            continue
        # sum combo[b] * arg(b) is exact: a = -sum_{b != a} combo[b] b + dinv(exact)
        exact = poly_sum(b.argument().scale(c) for b, c in combo.items())
        repl = antiderivative_exact(exact)
        for b, c in combo.items():
            if b != a and c:
                repl = repl - atom(b.argument()).scale(c)
        out[a] = repl
    return out


def is_zero_function(p: DiffPoly) -> bool:
    """True iff ``p`` vanishes identically as a function of the fields.

    Dependent atoms are eliminated first; the remaining atoms are
    algebraically independent over the jets, so the check is then syntactic.
    """
    if p.is_zero():
        return True
    if not p.has_atoms():
        return False
    for a, repl in atom_relations(p.atoms()).items():
        p = p.subs(a, repl)
    return p.is_zero()


def split_exact(p: DiffPoly) -> tuple:
    """Single-field normal form modulo total derivatives: ``p = canon + D n``.

    ``canon`` only contains monomials whose top-order jet appears with power
    >= 2, or the bare potential ``field_{-1}``.  Those monomials form a basis
    of the quotient, so ``canon`` is unique.
    """
    if p.has_atoms() or len(p.fields()) > 1:
        raise ValueError("split_exact needs a single-field jet polynomial")
    n = DiffPoly()
    rest = p
    while True:
        pick = None
        for key, c in rest._terms.items():
            if not key:
                continue
            top, e = max(key, key=lambda f: f[0].order)
            if e == 1 and top.order >= 0 and (pick is None or top.order > pick[2].order):
                pick = (key, c, top)
        if pick is None:
            return rest, n
        key, c, top = pick
        below = Jet(top.field, top.order - 1)
        powers = dict(key)
        del powers[top]
        a = powers.pop(below, 0)
        powers[below] = a + 1
        piece = DiffPoly({tuple(sorted(powers.items())): c / (a + 1)})
        n = n + piece
        rest = rest - total_derivative(piece)


def _atom(arg: DiffPoly) -> Jet:
    fields = arg.fields()
    name = "".join(sorted(fields)) if fields else "r"
    return Jet(name, -1, tuple(arg.items()))


def atom(arg: DiffPoly) -> DiffPoly:
    """The bare atom ``dinv(arg)`` with no normalisation (``arg`` taken as given)."""
    return DiffPoly({((_atom(arg), 1),): 1})


def _is_bare_potential(key: Key) -> bool:
    return len(key) == 1 and key[0][1] == 1 and not key[0][0].arg and key[0][0].order == MIN_ORDER


def dinv(p: DiffPoly) -> DiffPoly:
    """``D^{-1} p``: the jet antiderivative when it exists, otherwise atoms.

    Single-field arguments are split into canonical basis monomials with one
    atom each.  Mixed or atom-bearing arguments become a single atom with
    leading coefficient 1.
    """
    if p.is_zero():
        return DiffPoly()
    exact = try_antiderivative(p)
    if exact is not None:
        return exact
    if p.has_constant():
        raise NotTotalDerivative("dinv of a constant needs an explicit coordinate")
    if not p.has_atoms() and len(p.fields()) == 1:
        canon, n = split_exact(p)
        out = n
        for key, c in canon.items():
            if _is_bare_potential(key):
                raise OrderUnderflow(f"dinv({from_key(key)}) needs order -2 jets")
            out = out + DiffPoly({((_atom(from_key(key)), 1),): c})
        return out
    if p.has_atoms():
        return _dinv_atomic(p)
    lead = p.items()[0][1]
    return atom(p.scale(1 / lead)).scale(lead)


def _dinv_atomic(p: DiffPoly) -> DiffPoly:
    """``dinv`` of an atom-bearing polynomial via ``dinv(a D n) = a n - dinv(b n)``."""
    jets_part = p.restrict(lambda k: not key_atoms(k))
    out = DiffPoly()
    kept = DiffPoly()
    for key, c in p._terms.items():
        atoms = key_atoms(key)
        if not atoms:
            continue
        if len(atoms) != 1 or atoms[0][1] != 1:
            kept = kept + from_key(key, c)
            continue
        v = atoms[0][0]
        C = from_key(tuple(f for f in key if f[0] != v), c)
        n = try_antiderivative(C)
        if n is None and len(C.fields()) == 1 and not C.has_constant():
            canon, n = split_exact(C)
            kept = kept + atom(v.argument()) * canon
        elif n is None:
            kept = kept + from_key(key, c)
            continue
        out = out + atom(v.argument()) * n
        jets_part = jets_part - v.argument() * n
    if not jets_part.is_zero():
        out = out + dinv(jets_part)
    if not kept.is_zero():
        q = _antiderivative_atoms(kept)
        if q is None:
            lead = kept.items()[0][1]
            q = atom(kept.scale(1 / lead)).scale(lead)
        out = out + q
    return out


# ----------------------------------------------------------------------
# reduction of nonlocal densities modulo total derivatives
# ----------------------------------------------------------------------

def reduce_density(d: DiffPoly) -> tuple:
    """Rewrite ``d`` modulo total derivatives as ``(local, nonlocal)``.

    Atom-linear terms ``dinv(b) * C`` are normalised with
    ``int dinv(b) D n = -int b n`` and ``int dinv(b) c + dinv(c) b = 0``, plus
    the single-field normal form of ``C``.  When atoms and multipliers are
    single-field the nonlocal remainder is canonical: atoms sit on the r side
    of mixed pairs, and same-field pairs are antisymmetrised.  Mixed atoms and
    products of atoms are kept as computed.
    """
    local = d.restrict(lambda k: not key_atoms(k))
    groups: dict = {}
    other = DiffPoly()
    for key, c in d._terms.items():
        atoms = key_atoms(key)
        if not atoms:
            continue
        if len(atoms) == 1 and atoms[0][1] == 1:
            v = atoms[0][0]
            rest = tuple(f for f in key if f[0] != v)
            groups[v] = groups.get(v, DiffPoly()) + from_key(rest, c)
        else:
            other = other + from_key(key, c)

    bilinear: dict = {}
    kept = DiffPoly()
    for v in sorted(groups):
        C = groups[v]
        b = v.argument()
        if C.is_zero():
            continue
        if C.has_atoms():
            kept = kept + atom(b) * C
            continue
        n = try_antiderivative(C)
        if n is not None:
            local = local - b * n
            continue
        if v.field in FIELDS and len(b) == 1 and len(C.fields()) == 1 and not C.has_constant():
            canon, n = split_exact(C)
            local = local - b * n
            (bkey, bc), = b.items()
            for ck, cc in canon.items():
                bilinear[(bkey, ck)] = bilinear.get((bkey, ck), 0) + cc * bc
            continue
        # C = lam * b + D n
        field = sorted(b.fields())[0]
        if not b.has_atoms():
            eb, em = euler(b, field), euler(C, field)
            if not eb.is_zero():
                k0, c0 = eb.items()[0]
                lam = em.coeff(k0) / c0
                n = try_antiderivative(C - b.scale(lam))
                if n is not None:
                    local = local - b * n
                    continue
        kept = kept + atom(b) * C

    canonical: dict = {}
    for (a, c), coef in bilinear.items():
        if not coef or a == c:
            continue
        fa, fc = key_fields(a), key_fields(c)
        if fa == fc:
            swap = c < a
        else:
            swap = fa == frozenset("s")
        if swap and not _is_bare_potential(c):
            a, c, coef = c, a, -coef
        canonical[(a, c)] = canonical.get((a, c), 0) + coef
    nonlocal_part = kept + other
    for (a, c), coef in canonical.items():
        if coef:
            nonlocal_part = nonlocal_part + DiffPoly({_mul_keys(((_atom(from_key(a)), 1),), c): coef})
    return local, nonlocal_part


def canonical_density(d: DiffPoly) -> DiffPoly:
    """Representative of ``int d`` with its nonlocal part reduced."""
    if not d.has_atoms():
        return d
    local, nonlocal_part = reduce_density(d)
    return local + nonlocal_part


# ----------------------------------------------------------------------
# functionals, gradients, bracket
# ----------------------------------------------------------------------

class Functional:
    """``int density dy``; equality is equality modulo total derivatives."""

    __slots__ = ("density", "name")

    def __init__(self, density: DiffPoly, name: str = ""):
        if density.has_constant():
            raise ValueError("constant densities are not integrable on the line")
        self.density = density
        self.name = name

    def __add__(self, other: "Functional") -> "Functional":
        return Functional(self.density + other.density)

    def __sub__(self, other: "Functional") -> "Functional":
        return Functional(self.density - other.density)

    def __neg__(self) -> "Functional":
        return Functional(-self.density)

    def scale(self, c) -> "Functional":
        return Functional(self.density.scale(c))

    __mul__ = scale
    __rmul__ = scale

    def is_local(self) -> bool:
        return not self.density.has_atoms()

    def is_zero(self) -> bool:
        return is_total_derivative(self.density)

    def named(self, name: str) -> "Functional":
        return Functional(self.density, name)

    def __eq__(self, other):
        if not isinstance(other, Functional):
            return NotImplemented
        return functional_equal(self, other)

    __hash__ = None

    def __repr__(self) -> str:
        label = f"{self.name}=" if self.name else ""
        return f"Functional({label}int {self.density})"

    def to_json(self) -> dict:
        return {"name": self.name, "density": self.density.to_json()}

    @classmethod
    def from_json(cls, data: Mapping) -> "Functional":
        return cls(DiffPoly.from_json(data["density"]), data.get("name", ""))


def functional_equal(a: Functional, b: Functional) -> bool:
    """True iff the densities differ by a total derivative."""
    return is_total_derivative(a.density - b.density)


class ExtendedExpr:
    """Gradient value: a local polynomial plus terms that carry ``dinv`` atoms."""

    __slots__ = ("poly",)

    def __init__(self, poly: DiffPoly):
        self.poly = poly

    @property
    def local(self) -> DiffPoly:
        return self.poly.restrict(lambda k: not key_atoms(k))

    @property
    def nonlocal_part(self) -> DiffPoly:
        return self.poly.restrict(lambda k: bool(key_atoms(k)))

    @property
    def nonlocal_terms(self) -> list:
        """``(coeff, q)`` for each bare ``coeff * dinv(q)``; products are listed whole."""
        out = []
        for key, c in self.nonlocal_part.items():
            if len(key) == 1 and key[0][1] == 1:
                out.append((c, key[0][0].argument()))
            else:
                out.append((c, from_key(key)))
        return out

    def is_local(self) -> bool:
        return not self.poly.has_atoms()

    def derivative(self) -> DiffPoly:
        """``D`` of the expression; ``D o dinv`` is the identity."""
        return total_derivative(self.poly)

    def __add__(self, other: "ExtendedExpr") -> "ExtendedExpr":
        return ExtendedExpr(self.poly + other.poly)

    def scale(self, c) -> "ExtendedExpr":
        return ExtendedExpr(self.poly.scale(c))

    def __eq__(self, other):
        if not isinstance(other, ExtendedExpr):
            return NotImplemented
        return self.poly == other.poly

    __hash__ = None

    def __str__(self) -> str:
        return str(self.poly)

    __repr__ = __str__

    def to_json(self) -> dict:
        return {"local": self.local.to_json(), "nonlocal": self.nonlocal_part.to_json()}


def _linear_gradient(b: DiffPoly, weight: DiffPoly, field: str) -> DiffPoly:
    """Gradient of ``int weight * b`` in ``field`` with ``weight`` held fixed."""
    out = DiffPoly()
    for v in b.jets():
        if v.field != field:
            continue
        part = b.partial(v) * weight
        if v.order == MIN_ORDER:
            out = out - dinv(part)
        else:
            term = total_derivative(part, v.order)
            out = out + (term if v.order % 2 == 0 else -term)
    return out


def _gradient_poly(density: DiffPoly, field: str) -> DiffPoly:
    out = DiffPoly()
    for v in density.variables():
        part = density.partial(v)
        if v.arg:
            # int f_a dinv(delta b) = -int dinv(f_a) delta b
            if field in v.field:
                out = out + _linear_gradient(v.argument(), -dinv(part), field)
        elif v.field == field:
            if v.order == MIN_ORDER:
                out = out - dinv(part)
            else:
                term = total_derivative(part, v.order)
                out = out + (term if v.order % 2 == 0 else -term)
    return out


def variational_gradient(F: Functional | DiffPoly, field: str | None = None):
    """L2 gradient ``sum_{k>=-1} (-D)^k df/dv_k``; the ``k=-1`` term is ``-dinv(df/dv_{-1})``.

    With ``field`` given returns one :class:`ExtendedExpr`, otherwise the pair
    ``(grad_r, grad_s)``.
    """
    density = F.density if isinstance(F, Functional) else F
    if field is None:
        return tuple(variational_gradient(density, f) for f in FIELDS)
    return ExtendedExpr(_gradient_poly(density, field))


def hamiltonian_field(F: Functional | DiffPoly) -> tuple:
    """Vector field ``(-D grad_r F, D grad_s F)`` of the flow ``z' = J grad F``."""
    gr, gs = variational_gradient(F)
    return (-gr.derivative(), gs.derivative())


@dataclass(frozen=True)
class EvoField:
    """Pair of component polynomials ``(r, s)``."""

    r: DiffPoly
    s: DiffPoly

    def __add__(self, other: "EvoField") -> "EvoField":
        return EvoField(self.r + other.r, self.s + other.s)

    def scale(self, c) -> "EvoField":
        return EvoField(self.r.scale(c), self.s.scale(c))

    def __sub__(self, other: "EvoField") -> "EvoField":
        return EvoField(self.r - other.r, self.s - other.s)

    @classmethod
    def hamiltonian(cls, F) -> "EvoField":
        return cls(*hamiltonian_field(F))

    def components(self) -> dict:
        return {"r": self.r, "s": self.s}

    def is_zero(self) -> bool:
        return self.r.is_zero() and self.s.is_zero()

    def to_json(self) -> dict:
        return {"r": self.r.to_json(), "s": self.s.to_json(),
                "display": {"r": str(self.r), "s": str(self.s)}}


def directional_derivative(p: DiffPoly, X: EvoField) -> DiffPoly:
    """``dp[X]``: vary every jet of ``p`` along the field ``X``.

    ``r_k`` moves by ``D^k X.r`` (``dinv X.r`` for k = -1) and an atom
    ``dinv(b)`` moves by ``dinv(db[X])``.
    """
    comps = X.components()
    out = DiffPoly()
    for v in p.variables():
        if v.arg:
            dv = dinv(directional_derivative(v.argument(), X))
        elif v.order < 0:
            dv = dinv(comps[v.field])
        else:
            dv = total_derivative(comps[v.field], v.order)
        out = out + p.partial(v) * dv
    return out


def field_prolongation(Y: EvoField, X: EvoField) -> EvoField:
    """``dY X`` componentwise."""
    return EvoField(directional_derivative(Y.r, X), directional_derivative(Y.s, X))


def poisson_bracket(F: Functional, G: Functional) -> Functional:
    """``{F, G} = int (grad_s F * D grad_s G - grad_r F * D grad_r G) dy``.

    The result is reduced modulo total derivatives.  Pairings that are
    genuinely nonlocal survive as atom terms (see :meth:`Functional.is_local`).
    """
    fr, fs = variational_gradient(F)
    gr, gs = variational_gradient(G)
    dens = fs.poly * gs.derivative() - fr.poly * gr.derivative()
    return Functional(canonical_density(dens))


def require_local(F: Functional, what: str = "functional") -> Functional:
    """Return ``F`` unchanged, raising :class:`ReductionFailure` if it carries atoms."""
    if not F.is_local():
        extra = F.density.restrict(lambda k: bool(key_atoms(k)))
        raise ReductionFailure(f"{what} kept nonlocal terms: {extra}")
    return F
