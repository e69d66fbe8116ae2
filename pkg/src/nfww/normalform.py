"""Birkhoff normalisation of the characteristic-variable Hamiltonian up to order two.

The pipeline works entirely with exact :class:`~nfww.diffpoly.Functional`
objects.  Every homological solution is checked by recomputing
``{H0, G} + W`` and asking the algebra whether it vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import factorial

from .diffpoly import (
    DiffMono,
    DiffPoly,
    Functional,
    MIN_ORDER,
    canonical_density,
    dinv,
    from_key,
    key_atoms,
    key_fields,
    poisson_bracket,
    r,
    s,
    split_by_field,
    total_derivative,
    split_exact,
    try_antiderivative,
    var,
)


class ObstructionError(ValueError):
    """The homological equation has no admissible solution for some monomials."""

    def __init__(self, records: list):
        self.records = records
        listing = ", ".join(str(rec.monomial) for rec in records)
        super().__init__(f"no admissible homological solution for: {listing}")


class VerificationError(AssertionError):
    """An internal identity that must hold exactly did not."""


# ----------------------------------------------------------------------
# Hamiltonians
# ----------------------------------------------------------------------

def kdv_hamiltonian(j: int, field: str = "s") -> Functional:
    """First three KdV-hierarchy Hamiltonians in the variable ``field``."""
    u = lambda k=0: var(field, k)
    if j == 0:
        dens = u() ** 2 / 2
    elif j == 1:
        dens = -(u(1) ** 2) / 12 + u() ** 3 / 3
    elif j == 2:
        dens = u(2) ** 2 / 2 - Fraction(5, 2) * u(1) ** 2 * u() + Fraction(5, 8) * u() ** 4
    else:
        raise ValueError("only K0, K1, K2 are available")
    return Functional(dens, f"K{j}")


@dataclass(frozen=True)
class HamiltonianLibrary:
    H0: Functional
    H1: Functional
    H2: Functional
    K0: Functional
    K1: Functional
    K2: Functional
    Hres: Functional

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("H0", "H1", "H2", "K0", "K1", "K2", "Hres")}


def builtin_hamiltonians(kdv_field: str = "r") -> HamiltonianLibrary:
    """Boussinesq-truncated Hamiltonian terms, KdV hierarchy and the restricted KdV Hamiltonian."""
    H0 = (r() ** 2 + s() ** 2) / 2
    H1 = (
        -(r(1) ** 2 + s(1) ** 2) / 12
        + (r() ** 3 + s() ** 3) / 4
        + r(1) * s(1) / 6
        - (r() ** 2 * s() + r() * s() ** 2) / 4
    )
    H2 = (
        (r(2) ** 2 + s(2) ** 2) / 30
        - (r() * r(1) ** 2 + s() * s(1) ** 2) / 4
        - r(2) * s(2) / 15
        - (r() * s(1) ** 2 - 2 * r() * r(1) * s(1) + s() * r(1) ** 2 - 2 * s() * r(1) * s(1)) / 4
    )
    Hres = r() ** 2 / 2 - r(1) ** 2 / 12 + r() ** 3 / 4
    return HamiltonianLibrary(
        H0=Functional(H0, "H0"),
        H1=Functional(H1, "H1"),
        H2=Functional(H2, "H2"),
        K0=kdv_hamiltonian(0, kdv_field),
        K1=kdv_hamiltonian(1, kdv_field),
        K2=kdv_hamiltonian(2, kdv_field),
        Hres=Functional(Hres, "Hres"),
    )


# ----------------------------------------------------------------------
# resonant split and homological equation
# ----------------------------------------------------------------------

def _is_mixed(key) -> bool:
    return len(key_fields(key)) > 1


def resonant_split(F: Functional) -> tuple:
    """Split into single-field (resonant) and mixed parts, monomial by monomial."""
    mixed = F.density.restrict(_is_mixed)
    return Functional(F.density - mixed, "Z"), Functional(mixed, "W")


class Kind(str, Enum):
    SOLVABLE = "Solvable"
    SOLVABLE_NONLOCAL = "SolvableNonlocal"
    OBSTRUCTED_ORDER_UNDERFLOW = "ObstructedOrderUnderflow"
    OBSTRUCTED_NONLOCAL = "ObstructedNonlocal"


@dataclass(frozen=True)
class MonomialSolution:
    """How one mixed monomial ``c * P1(r) * P2(s)`` is removed (or why it cannot be).

    ``generator`` is the density of its contribution to ``G``; ``witness`` is
    the exact antiderivative used (of ``P1`` or ``P2`` per ``placement``).
    ``integrable`` reports whether every generator monomial carries a
    decaying factor.
    """

    monomial: DiffMono
    kind: Kind
    placement: str | None = None
    witness: DiffPoly | None = None
    generator: DiffPoly | None = None
    integrable: bool | None = None
    reason: str = ""

    @property
    def solvable(self) -> bool:
        return self.kind in (Kind.SOLVABLE, Kind.SOLVABLE_NONLOCAL)

    def to_json(self) -> dict:
        return {
            "monomial": self.monomial.poly().to_json(),
            "display": str(self.monomial),
            "kind": self.kind.value,
            "placement": self.placement,
            "witness": None if self.witness is None else self.witness.to_json(),
            "witness_display": None if self.witness is None else str(self.witness),
            "generator": None if self.generator is None else self.generator.to_json(),
            "integrable": self.integrable,
            "reason": self.reason,
        }


def _decays(p: DiffPoly) -> bool:
    """Every monomial contains a jet of order >= 0 (so the density decays)."""
    return all(any(not v.arg and v.order >= 0 for v, _ in key) for key in p._terms)


def _jets_only_nonnegative(p: DiffPoly) -> bool:
    return not p.has_atoms() and (p.min_order() is None or p.min_order() >= 0)


def classify_monomial(coeff, key, allow_nonlocal: bool = True) -> MonomialSolution:
    """Apply the placement rule ``G = -1/2 int dinv(P1) P2 = 1/2 int P1 dinv(P2)``.

    The r-factor is tried first, then the s-factor.  If neither has an exact
    antiderivative and both factors are decaying jet polynomials without
    order -1 jets, the nonlocal generator is admitted (when
    ``allow_nonlocal``).
    """
    coeff = Fraction(coeff)
    mono = DiffMono(coeff, key)
    if any(v.field not in ("r", "s") for v, _ in key_atoms(key)):
        return MonomialSolution(mono, Kind.OBSTRUCTED_NONLOCAL,
                                reason="contains an antiderivative of a mixed density")
    rk, sk = split_by_field(key)
    if not rk or not sk:
        raise ValueError(f"monomial {mono} is not mixed")
    P1, P2 = from_key(rk), from_key(sk)
    q1 = try_antiderivative(P1)
    if q1 is not None:
        gen = (q1 * P2).scale(-coeff / 2)
        return MonomialSolution(mono, Kind.SOLVABLE, "r", q1, gen, _decays(gen))
    q2 = try_antiderivative(P2)
    if q2 is not None:
        gen = (P1 * q2).scale(coeff / 2)
        return MonomialSolution(mono, Kind.SOLVABLE, "s", q2, gen, _decays(gen))
    if _jets_only_nonnegative(P1) and _jets_only_nonnegative(P2):
        if allow_nonlocal:
            gen = (dinv(P1) * P2).scale(-coeff / 2)
            return MonomialSolution(mono, Kind.SOLVABLE_NONLOCAL, "nonlocal", None, gen, True,
                                    "both factors decay; generator uses an antiderivative atom")
        return MonomialSolution(mono, Kind.OBSTRUCTED_ORDER_UNDERFLOW,
                                reason="no exact antiderivative of either factor (nonlocal solutions disabled)")
    if P1.has_atoms() or P2.has_atoms():
        return MonomialSolution(mono, Kind.OBSTRUCTED_NONLOCAL,
                                reason="an antiderivative atom factor would need a second antiderivative")
    return MonomialSolution(mono, Kind.OBSTRUCTED_ORDER_UNDERFLOW,
                            reason="no exact antiderivative of either factor; a factor contains an order -1 jet")


def classify_density(W: Functional, allow_nonlocal: bool = True) -> list:
    """Classify every mixed monomial of ``W`` (deterministic order)."""
    return [classify_monomial(c, k, allow_nonlocal) for k, c in W.density.items() if _is_mixed(k)]


def homological_residual(W: Functional, G: Functional, H0: Functional | None = None) -> Functional:
    H0 = H0 or builtin_hamiltonians().H0
    return poisson_bracket(H0, G) + W


def solve_homological(W: Functional, allow_nonlocal: bool = True, verify: bool = True) -> Functional:
    """Solve ``{H0, G} + W = 0`` for purely mixed ``W``.

    Raises :class:`ObstructionError` listing every monomial without an
    admissible solution, and :class:`VerificationError` if the assembled ``G``
    fails the exact check.
    """
    Z, _ = resonant_split(W)
    if not Z.density.is_zero():
        raise ValueError(f"W has a resonant part: {Z.density}")
    records = classify_density(W, allow_nonlocal)
    bad = [rec for rec in records if not rec.solvable]
    if bad:
        raise ObstructionError(bad)
    G = Functional(canonical_density(_sum(rec.generator for rec in records)), "G")
    if verify and not homological_residual(W, G).is_zero():
        raise VerificationError(f"{{H0,G}} + W != 0 for W = {W.density}")
    return G


def _sum(polys) -> DiffPoly:
    out = DiffPoly()
    for p in polys:
        out = out + p
    return out


# ----------------------------------------------------------------------
# Lie transforms
# ----------------------------------------------------------------------

def lie_expand(H: Functional, G: Functional, order: int) -> list:
    """``[H, {H,G}, {{H,G},G}, ...]`` up to ``order`` nested brackets (``order <= 4``)."""
    if order > 4:
        raise ValueError("lie_expand is limited to order 4")
    out = [H]
    for _ in range(order):
        out.append(poisson_bracket(out[-1], G))
    return out


def lie_transform_series(series: list, G: Functional, weight: int, max_order: int) -> list:
    """Compose an eps-series of Functionals with the time-``eps**weight`` flow of ``G``.

    ``series[n]`` is the coefficient of ``eps**n``; the result is truncated at
    ``max_order`` using ``F o Phi = sum_l eps^(weight*l)/l! ad_G^l F``.
    """
    out = [Functional(DiffPoly()) for _ in range(max_order + 1)]
    for m, F in enumerate(series[: max_order + 1]):
        term = F
        l = 0
        while m + weight * l <= max_order:
            out[m + weight * l] = out[m + weight * l] + term.scale(Fraction(1, factorial(l)))
            l += 1
            if m + weight * l > max_order:
                break
            term = poisson_bracket(term, G)
    return out


# ----------------------------------------------------------------------
# printed reference values (used only for discrepancy records)
# ----------------------------------------------------------------------

def printed_z1() -> Functional:
    return Functional(-(r(1) ** 2 + s(1) ** 2) / 12 + (r() ** 3 + s() ** 3) / 4, "Z1 printed")


def printed_g1() -> Functional:
    return Functional(r(1) * s() / 12 - (r() ** 2 * s(-1) - r(-1) * s() ** 2) / 8, "G1 printed")


def printed_z2_coefficients() -> dict:
    return {"u*u1^2": Fraction(-5, 24), "u2^2": Fraction(19, 720), "u^4": Fraction(-1, 64)}


def z2_from_coefficients(b1, b2, b3) -> Functional:
    dens = DiffPoly()
    for f in ("r", "s"):
        u = lambda k=0: var(f, k)
        dens = dens + u() * u(1) ** 2 * b1 + u(2) ** 2 * b2 + u() ** 4 * b3
    return Functional(dens, "Z2")


def printed_w2_monomials() -> list:
    """Monomial set of the printed order-2 mixed density (coefficients set to 1 there)."""
    rm1, sm1 = r(-1), s(-1)
    terms = [
        r(2) * s(1) * rm1, r(2) * r() * s(), r() * s() * s(1) * rm1, r() ** 2 * s() ** 2, s() * r() ** 3,
        r() ** 2 * s(1) * rm1, s(2) * r(1) * sm1, s(2) * r() * s(), r() * s() * r(1) * sm1, r() * s() ** 3,
        r() * s() * s(2), s() ** 2 * r(1) * sm1, s(2) * s(1) * rm1, s(2) * r() ** 2, s(2) * r(2),
        r(2) * s() ** 2, r(2) * r(1) * sm1,
    ]
    keys = []
    for t in terms:
        (k, _), = t.items()
        if k not in keys:
            keys.append(k)
    return keys


@dataclass(frozen=True)
class Discrepancy:
    equation: str
    printed: object
    derived: object
    match: bool
    note: str = ""

    def to_json(self) -> dict:
        return {"equation": self.equation, "printed": _jsonable(self.printed),
                "derived": _jsonable(self.derived), "match": self.match, "note": self.note}


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, DiffPoly):
        return {"display": str(x), "poly": x.to_json()}
    if isinstance(x, Functional):
        return {"display": str(x.density), "poly": x.density.to_json()}
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def single_field_coefficients(Z: Functional, field: str) -> dict:
    """Coefficients of ``u*u1^2``, ``u2^2`` and ``u^4`` of the order-2 resonant part, after
    reducing to the basis that keeps the top derivative squared."""
    part = Z.density.restrict(lambda k: key_fields(k) == frozenset(field))
    canon, _ = split_exact(part) if not part.is_zero() else (DiffPoly(), None)
    u = lambda k=0: var(field, k)
    names = {"u*u1^2": u() * u(1) ** 2, "u2^2": u(2) ** 2, "u^4": u() ** 4}
    out = {}
    for name, mono in names.items():
        (k, _), = mono.items()
        out[name] = canon.coeff(k)
    rest = canon - poly_from(out, field)
    if not rest.is_zero():
        out["other"] = str(rest)
    return out


def poly_from(coeffs: dict, field: str) -> DiffPoly:
    u = lambda k=0: var(field, k)
    return (u() * u(1) ** 2 * coeffs.get("u*u1^2", 0) + u(2) ** 2 * coeffs.get("u2^2", 0)
            + u() ** 4 * coeffs.get("u^4", 0))


# ----------------------------------------------------------------------
# the order-2 pipeline
# ----------------------------------------------------------------------

@dataclass
class NormalFormResult:
    Z1: Functional
    W1: Functional
    G1: Functional
    H21: Functional
    Z2: Functional
    W2: Functional
    G2: Functional
    W3_partial: Functional
    epsilon_symbol: str = "eps"
    checks: dict = field(default_factory=dict)
    discrepancies: list = field(default_factory=list)
    w2_structure: dict = field(default_factory=dict)

    def functionals(self) -> dict:
        return {k: getattr(self, k) for k in ("Z1", "W1", "G1", "H21", "Z2", "W2", "G2", "W3_partial")}

    def to_json(self) -> dict:
        return {
            "epsilon_symbol": self.epsilon_symbol,
            "functionals": {k: {"display": str(F.density), "density": F.density.to_json(),
                                "local": F.is_local()}
                            for k, F in self.functionals().items()},
            "checks": dict(sorted(self.checks.items())),
            "discrepancies": [d.to_json() for d in self.discrepancies],
            "w2_structure": self.w2_structure,
            "notes": ["W3_partial is computed modulo H3 (the order-3 Hamiltonian term is not included)."],
        }


def _w2_structure(W2: Functional) -> dict:
    engine = {k for k, _ in W2.density.items()}
    printed = set(printed_w2_monomials())
    show = lambda keys: sorted(str(from_key(k)) for k in keys)
    return {
        "engine_monomials": show(engine),
        "printed_monomials": show(printed),
        "common": show(engine & printed),
        "engine_only": show(engine - printed),
        "printed_only": show(printed - engine),
    }


def normalize_order2(H1: Functional | None = None, H2: Functional | None = None,
                     allow_nonlocal: bool = True, with_order3: bool = True) -> NormalFormResult:
    """Run the order-1 and order-2 normalisation with every identity checked exactly."""
    lib = builtin_hamiltonians()
    H0 = lib.H0
    H1 = lib.H1 if H1 is None else H1
    H2 = lib.H2 if H2 is None else H2
    checks: dict = {}

    Z1, W1 = resonant_split(H1)
    G1 = solve_homological(W1, allow_nonlocal)
    checks["homological_order1"] = homological_residual(W1, G1, H0).is_zero()

    ZG = poisson_bracket(Z1, G1)
    WG = poisson_bracket(W1, G1)
    H21 = Functional(canonical_density((ZG + H2 + WG.scale(Fraction(1, 2))).density), "H21")
    Z2, W2 = resonant_split(H21)
    G2 = solve_homological(W2, allow_nonlocal)
    checks["homological_order2"] = homological_residual(W2, G2, H0).is_zero()

    # conjugation check: expand H0 + eps H1 + eps^2 H2 through both flows
    series = lie_transform_series([H0, H1, H2], G1, 1, 2)
    series = lie_transform_series(series, G2, 2, 2)
    checks["conjugation_eps0"] = (series[0] - H0).is_zero()
    checks["conjugation_eps1"] = (series[1] - Z1).is_zero()
    checks["conjugation_eps2"] = (series[2] - Z2).is_zero()
    checks["Z1_resonant"] = resonant_split(Z1)[1].density.is_zero()
    checks["Z2_resonant"] = resonant_split(Z2)[1].density.is_zero()

    W3 = Functional(DiffPoly(), "W3_partial")
    if with_order3:
        H32 = (poisson_bracket(H2, G1)
               + poisson_bracket(ZG, G1).scale(Fraction(1, 2))
               + poisson_bracket(WG, G1).scale(Fraction(1, 3))
               + poisson_bracket(Z1, G2))
        W3 = Functional(canonical_density(resonant_split(H32)[1].density), "W3_partial")

    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        raise VerificationError(f"normal form identities failed: {failed}")

    discrepancies = [
        Discrepancy("Z1 coefficients", str(printed_z1().density), str(Z1.density),
                    Z1.density == printed_z1().density, "coefficient-for-coefficient comparison"),
        Discrepancy("G1 generator", str(printed_g1().density), str(G1.density), G1 == printed_g1(),
                    "comparison modulo total derivatives"),
    ]
    printed = printed_z2_coefficients()
    z2_ok = Z2 == z2_from_coefficients(printed["u*u1^2"], printed["u2^2"], printed["u^4"])
    for f in ("r", "s"):
        derived = single_field_coefficients(Z2, f)
        discrepancies.append(Discrepancy(
            f"Z2 coefficients[{f}]", printed, derived, z2_ok,
            "engine Z2 reduced to the basis (u*u1^2, u2^2, u^4) modulo total derivatives"))
    w2_structure = _w2_structure(W2)
    return NormalFormResult(Z1.named("Z1"), W1.named("W1"), G1.named("G1"), H21, Z2.named("Z2"),
                            W2.named("W2"), G2.named("G2"), W3, checks=checks,
                            discrepancies=discrepancies, w2_structure=w2_structure)


# ----------------------------------------------------------------------
# order-3 scan
# ----------------------------------------------------------------------

OBSTRUCTION_CAVEAT = (
    "A monomial-level obstruction is not decisive: other terms could compensate it, "
    "or integration by parts could rewrite it into a form that is solvable. "
    "The scan reports facts about this representative and does not settle the question."
)


def split_single_field(p: DiffPoly) -> tuple:
    """Normal form of a single-field factor modulo ``D``: ``p = canon + D n``.

    Atom-linear terms ``dinv(b) * R`` are handled through
    ``dinv(b) D n = D(dinv(b) n) - b n``; products of atoms are kept as they are.
    """
    jets = p.restrict(lambda k: not key_atoms(k))
    canon_atoms = DiffPoly()
    n_total = DiffPoly()
    for key, c in p.items():
        atoms = key_atoms(key)
        if not atoms:
            continue
        if len(atoms) == 1 and atoms[0][1] == 1:
            v = atoms[0][0]
            R = from_key(tuple(f for f in key if f[0] != v), c)
            if R.has_constant() or R.is_zero():
                canon_atoms = canon_atoms + from_key(key, c)
                continue
            Rc, n = split_exact(R)
            a = from_key(((v, 1),))
            canon_atoms = canon_atoms + a * Rc
            n_total = n_total + a * n
            jets = jets - v.argument() * n
        else:
            canon_atoms = canon_atoms + from_key(key, c)
    if jets.is_zero() or jets.fields() == set():
        jc, n = jets, DiffPoly()
    else:
        jc, n = split_exact(jets)
    return canon_atoms + jc, n_total + n


@dataclass(frozen=True)
class ClassTerm:
    """One basis element ``coeff * [P1] (x) [P2]`` of the obstruction class."""

    coeff: Fraction
    r_factor: DiffPoly
    s_factor: DiffPoly
    kind: Kind

    def to_json(self) -> dict:
        return {"coeff": str(self.coeff), "r_factor": str(self.r_factor),
                "s_factor": str(self.s_factor), "kind": self.kind.value}


def obstruction_classes(W: Functional) -> tuple:
    """Image of the mixed part of ``W`` in ``(A_r / im D) (x) (A_s / im D)``.

    Mixed densities removable by a jet generator are exactly ``im D_r + im D_s``,
    so this class is independent of integration by parts: it vanishes iff a
    local generator exists.  Class terms whose factors both decay admit the
    nonlocal generator; the others need an order -2 antiderivative or a
    non-decaying generator.  Monomials with mixed atoms cannot be factored and
    are returned separately.
    """
    acc: dict = {}
    unfactored = []
    for key, c in W.density.items():
        if not _is_mixed(key):
            continue
        if any(v.field not in ("r", "s") for v, _ in key_atoms(key)):
            unfactored.append(DiffMono(c, key))
            continue
        rk, sk = split_by_field(key)
        c1, _ = split_single_field(from_key(rk))
        c2, _ = split_single_field(from_key(sk))
        for k1, a in c1.items():
            for k2, b in c2.items():
                acc[(k1, k2)] = acc.get((k1, k2), 0) + c * a * b
    terms = []
    for (k1, k2), coef in sorted(acc.items(), key=lambda kv: (str(from_key(kv[0][0])), str(from_key(kv[0][1])))):
        if not coef:
            continue
        P1, P2 = from_key(k1), from_key(k2)
        if P1.has_atoms() or P2.has_atoms():
            kind = Kind.OBSTRUCTED_NONLOCAL
        elif _jets_only_nonnegative(P1) and _jets_only_nonnegative(P2):
            kind = Kind.SOLVABLE_NONLOCAL
        else:
            kind = Kind.OBSTRUCTED_ORDER_UNDERFLOW
        terms.append(ClassTerm(Fraction(coef), P1, P2, kind))
    return terms, unfactored


@dataclass
class ObstructionReport:
    records: list
    modulo_H3: bool = True
    probes: dict = field(default_factory=dict)
    verdict: dict = field(default_factory=dict)
    caveat: str = OBSTRUCTION_CAVEAT

    def counts(self) -> dict:
        out: dict = {}
        for rec in self.records:
            out[rec.kind.value] = out.get(rec.kind.value, 0) + 1
        return dict(sorted(out.items()))

    def to_json(self) -> dict:
        return {
            "modulo_H3": self.modulo_H3,
            "note": "Scan of the order-3 mixed part computed without H3.",
            "counts": self.counts(),
            "records": [rec.to_json() for rec in self.records],
            "probes": self.probes,
            "verdict": self.verdict,
            "caveat": self.caveat,
        }


def _probe(density: DiffPoly) -> dict:
    (key, c), = density.items()
    rec = classify_monomial(c, key, allow_nonlocal=True)
    out = rec.to_json()
    if rec.witness is not None:
        factor = from_key(split_by_field(key)[0 if rec.placement == "r" else 1])
        out["witness_verified"] = total_derivative(rec.witness) == factor
    return out


def obstruction_report(result: NormalFormResult | None = None) -> ObstructionReport:
    """Classify the order-3 mixed remainder (modulo H3), monomial by monomial and by class."""
    result = result or normalize_order2()
    W3 = result.W3_partial
    records = classify_density(W3, allow_nonlocal=True)
    probes = {
        "r1^2*s_{-1}": _probe(r(1) ** 2 * s(-1)),
        "r4*r1*s_{-1}": _probe(r(4) * r(1) * s(-1)),
    }
    bad_key = (r(4) * r(1) * s(-1)).items()[0][0]
    bad_terms, _ = obstruction_classes(Functional(r(4) * r(1) * s(-1)))
    classes, unfactored = obstruction_classes(W3)
    blocked = [rec for rec in records if not rec.solvable]
    class_blocked = [c for c in classes if c.kind != Kind.SOLVABLE_NONLOCAL]
    verdict = {
        "r4*r1*s_{-1}": {
            "coefficient_in_W3_partial": str(W3.density.coeff(bad_key)),
            "monomial_classification": probes["r4*r1*s_{-1}"]["kind"],
            "class_is_zero": not bad_terms,
        },
        "monomial_scan": {"obstructed": len(blocked),
                          "obstructed_display": [str(rec.monomial) for rec in blocked]},
        "class_scan": {
            "terms": [c.to_json() for c in classes],
            "obstructed_terms": [c.to_json() for c in class_blocked],
            "unfactored_nonlocal_monomials": [str(m) for m in unfactored],
        },
        "H3_independence": (
            "Class terms with an order -1 factor cannot be cancelled by a mixed density "
            "built from jets of order >= 0, such as the omitted H3."
        ),
        "statement": _statement(bad_terms, class_blocked, unfactored),
    }
    return ObstructionReport(records, True, probes, verdict)


def _statement(bad_terms, class_blocked, unfactored) -> str:
    parts = []
    parts.append("r4*r1*s_{-1} is removable (its r-factor is a total derivative)"
                 if not bad_terms else "r4*r1*s_{-1} carries a nonzero class")
    if class_blocked:
        listing = "; ".join(f"{c.coeff} [{c.r_factor}] x [{c.s_factor}]" for c in class_blocked)
        parts.append(f"the class of the order-3 remainder has obstructed terms: {listing}")
    else:
        parts.append("the class of the order-3 remainder has no obstructed terms")
    if unfactored:
        parts.append(f"{len(unfactored)} monomials carry antiderivatives of mixed densities and were not factored")
    return "; ".join(parts) + "."
