"""Near-identity reduction of a single-field order-2 normal form to the KdV hierarchy.

For ``u' = Y0 + eps Y1 + eps^2 Y2`` with ``Yj = sign * D grad(.)`` the change of
variables ``u -> u + eps X + eps^2 dX X`` with ``X = a1 u^2 + a2 u2 + a3 u1 u_{-1}``
turns the order-2 field into ``Y2 + [Y1, X]``.  The constants are fixed by
asking that this equals ``c2 * sign * D grad K2``; the linear system is
generated from the algebra and solved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .diffpoly import (
    EvoField,
    DiffPoly,
    Jet,
    dinv,
    from_key,
    total_derivative,
    var,
    variational_gradient,
)
from .linalg import InconsistentSystem, solve_unique

PRINTED_C2 = Fraction(299, 389)
K2_COEFFS = (Fraction(1, 2), Fraction(-5, 2), Fraction(5, 8))


# ----------------------------------------------------------------------
# single-field vector fields
# ----------------------------------------------------------------------

def single_field(p: DiffPoly) -> str:
    fields = p.fields()
    if len(fields) > 1:
        raise ValueError(f"{p} involves more than one field")
    return next(iter(fields)) if fields else ""


def hamiltonian_flow(density: DiffPoly, field: str, sign: int) -> DiffPoly:
    """``sign * D grad_field(int density)`` for a single-field density."""
    grad = variational_gradient(density, field)
    return total_derivative(grad.poly).scale(sign)


def prolong(Y: DiffPoly, X: DiffPoly) -> DiffPoly:
    """Directional derivative ``dY(u) X(u) = sum_k dY/du_k * D^k X``.

    The order -1 jet is varied by ``dinv X``; that raises
    :class:`~nfww.diffpoly.OrderUnderflow` when it would need an order -2 jet.
    """
    out = DiffPoly()
    for v in Y.variables():
        if v.arg:
            raise ValueError("prolongation is defined on jet polynomials")
        dv = dinv(X) if v.order < 0 else total_derivative(X, v.order)
        out = out + Y.partial(v) * dv
    return out


def prolong_by_substitution(Y: DiffPoly, X: DiffPoly, field: str) -> DiffPoly:
    """Independent route to ``dY X``: differentiate ``Y(u + t X)`` at ``t = 0``.

    Each jet ``u_k`` is replaced by ``u_k + t D^k X`` with a marker jet standing
    for ``t``; the coefficient linear in the marker is the prolongation.
    """
    marker = Jet("s" if field == "r" else "r", 50)
    t = DiffPoly({((marker, 1),): 1})
    shifted = Y
    for v in sorted(Y.variables()):
        dv = dinv(X) if v.order < 0 else total_derivative(X, v.order)
        shifted = shifted.subs(v, DiffPoly({((v, 1),): 1}) + t * dv)
    return shifted.partial(marker).restrict(lambda k: all(w != marker for w, _ in k))


def evo_commutator(Y: DiffPoly, X: DiffPoly) -> DiffPoly:
    """``[Y; X] = dY X - dX Y`` for evolutionary fields of one variable."""
    fy, fx = single_field(Y), single_field(X)
    if fy and fx and fy != fx:
        raise ValueError("commutator of fields over different variables")
    return prolong(Y, X) - prolong(X, Y)


def kodama_generator(a1, a2, a3, field: str = "s") -> DiffPoly:
    """``X = a1 u^2 + a2 u2 + a3 u1 u_{-1}``."""
    u = lambda k=0: var(field, k)
    return u() ** 2 * a1 + u(2) * a2 + u(1) * u(-1) * a3


def k2_density(field: str, coeffs=K2_COEFFS) -> DiffPoly:
    u = lambda k=0: var(field, k)
    c_a, c_b, c_c = coeffs
    return u(2) ** 2 * c_a + u(1) ** 2 * u() * c_b + u() ** 4 * c_c


# ----------------------------------------------------------------------
# problem / solution
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class KodamaProblem:
    """Order-1 density ``alpha u1^2 + beta u^3``, order-2 density
    ``b1 u u1^2 + b2 u2^2 + b3 u^4``, flow ``u' = sign * D grad H``.

    ``sign = +1`` is the s-field convention and ``sign = -1`` the r-field one.
    """

    alpha: Fraction
    beta: Fraction
    b1: Fraction
    b2: Fraction
    b3: Fraction
    sign: int = 1
    field: str = "s"
    target: tuple = K2_COEFFS

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        for name in ("alpha", "beta", "b1", "b2", "b3"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))

    def order1_density(self) -> DiffPoly:
        u = lambda k=0: var(self.field, k)
        return u(1) ** 2 * self.alpha + u() ** 3 * self.beta

    def order2_density(self) -> DiffPoly:
        u = lambda k=0: var(self.field, k)
        return u() * u(1) ** 2 * self.b1 + u(2) ** 2 * self.b2 + u() ** 4 * self.b3

    def fields(self) -> tuple:
        Y1 = hamiltonian_flow(self.order1_density(), self.field, self.sign)
        Y2 = hamiltonian_flow(self.order2_density(), self.field, self.sign)
        T = hamiltonian_flow(k2_density(self.field, self.target), self.field, self.sign)
        return Y1, Y2, T

    def mirrored(self) -> "KodamaProblem":
        other = "r" if self.field == "s" else "s"
        return KodamaProblem(self.alpha, self.beta, self.b1, self.b2, self.b3,
                             -self.sign, other, self.target)

    def to_json(self) -> dict:
        return {"alpha": str(self.alpha), "beta": str(self.beta), "b1": str(self.b1),
                "b2": str(self.b2), "b3": str(self.b3), "sign": self.sign, "field": self.field,
                "target_K2": [str(c) for c in self.target]}


@dataclass
class KodamaSolution:
    a1: Fraction
    a2: Fraction
    a3: Fraction
    c2: Fraction
    residual: DiffPoly
    system: list = field(default_factory=list)
    discrepancies: list = field(default_factory=list)

    @property
    def printed_c2_match(self) -> bool:
        return self.c2 == PRINTED_C2

    def generator(self, field: str = "s") -> DiffPoly:
        return kodama_generator(self.a1, self.a2, self.a3, field)

    def to_json(self) -> dict:
        return {
            "a1": str(self.a1), "a2": str(self.a2), "a3": str(self.a3), "c2": str(self.c2),
            "c2_float": float(self.c2),
            "residual": str(self.residual), "residual_is_zero": self.residual.is_zero(),
            "system": self.system,
            "printed_c2_match": self.printed_c2_match,
            "discrepancies": self.discrepancies,
        }


def kodama_residual(problem: KodamaProblem, a1, a2, a3, c2) -> DiffPoly:
    """``Y2 + [Y1, X] - c2 * sign * D grad K2`` as an exact polynomial."""
    Y1, Y2, T = problem.fields()
    X = kodama_generator(a1, a2, a3, problem.field)
    return Y2 + evo_commutator(Y1, X) - T.scale(c2)


def matching_system(problem: KodamaProblem) -> tuple:
    """Linear system in ``(a1, a2, a3, c2)`` from the monomial coefficients of the residual.

    Returns ``(keys, rows, rhs)``; each row is the coefficient vector of one
    monomial.
    """
    base = kodama_residual(problem, 0, 0, 0, 0)
    unit = [kodama_residual(problem, *e) - base for e in
            ((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1))]
    keys = sorted({k for p in [base, *unit] for k, _ in p.items()},
                  key=lambda k: (-max(v.order for v, _ in k), str(from_key(k))))
    rows = [[u.coeff(k) for u in unit] for k in keys]
    rhs = [-base.coeff(k) for k in keys]
    return keys, rows, rhs


def _system_json(keys, rows, rhs) -> list:
    return [{"monomial": str(from_key(k)), "a1": str(row[0]), "a2": str(row[1]),
             "a3": str(row[2]), "c2": str(row[3]), "rhs": str(b)}
            for k, row, b in zip(keys, rows, rhs)]


def kodama_solve(problem: KodamaProblem) -> KodamaSolution:
    """Solve the matching system exactly; raise :class:`InconsistentSystem` if it fails."""
    keys, rows, rhs = matching_system(problem)
    try:
        a1, a2, a3, c2 = solve_unique(rows, rhs)
    except InconsistentSystem as exc:
        exc.rows = _system_json(keys, rows, rhs)
        raise
    residual = kodama_residual(problem, a1, a2, a3, c2)
    sol = KodamaSolution(a1, a2, a3, c2, residual, _system_json(keys, rows, rhs))
    sol.discrepancies = kodama_discrepancies(problem, sol)
    return sol


def forced_c2_check(problem: KodamaProblem, c2, fallback=None) -> dict:
    """Try to close the system with ``c2`` held fixed; report the leftover residual.

    If no ``a`` closes it, the residual is reported at ``fallback`` (default zeros).
    """
    keys, rows, rhs = matching_system(problem)
    c2 = Fraction(c2)
    reduced = [row[:3] for row in rows]
    shifted = [b - row[3] * c2 for row, b in zip(rows, rhs)]
    try:
        a = solve_unique(reduced, shifted)
        closes = True
    except InconsistentSystem:
        a = list(fallback or (0, 0, 0))
        closes = False
    residual = kodama_residual(problem, *a, c2)
    return {"c2": str(c2), "closes": closes and residual.is_zero(),
            "residual": str(residual), "a_used": [str(x) for x in a]}


def kodama_discrepancies(problem: KodamaProblem, sol: KodamaSolution) -> list:
    """Machine-readable comparison of the engine's system and solution with the printed ones."""
    out = []
    forced = forced_c2_check(problem, PRINTED_C2, (sol.a1, sol.a2, sol.a3))
    out.append({"equation": "c2 value", "printed": str(PRINTED_C2), "derived": str(sol.c2),
                "match": sol.c2 == PRINTED_C2,
                "note": "residual with the printed value: " + forced["residual"]})
    formula = printed_c2_formula(problem.b1, problem.b2, problem.b3)
    out.append({"equation": "c2 closed form", "printed": str(formula), "derived": str(sol.c2),
                "match": formula == sol.c2,
                "note": "printed closed form evaluated at this problem's b"})
    derived = derived_rows(problem.alpha, problem.beta, problem.sign, problem.field)
    for name, (printed_row, printed_target) in printed_rows().items():
        row, target = derived[name]
        sign_fix = problem.sign  # printed rows use the + convention
        row = tuple(Fraction(c) * sign_fix for c in row)
        target = target * sign_fix
        out.append({"equation": f"matching row[{name}]",
                    "printed": {"row": [str(Fraction(c)) for c in printed_row],
                                "target": str(Fraction(printed_target))},
                    "derived": {"row": [str(c) for c in row], "target": str(target)},
                    "match": tuple(map(Fraction, printed_row)) == row
                    and Fraction(printed_target) == target,
                    "note": "columns a1, a2, a3, b1, b2, b3"})
    return out


def kodama_verify(problem: KodamaProblem, sol: KodamaSolution) -> DiffPoly:
    return kodama_residual(problem, sol.a1, sol.a2, sol.a3, sol.c2)


def c2_linear_form(alpha, beta, sign: int = 1, field: str = "s", target=K2_COEFFS) -> dict:
    """``c2`` and ``a_i`` as exact linear forms in ``(b1, b2, b3)``.

    The system is linear with a right-hand side linear in ``b``, so solving
    at the unit vectors gives the coefficients.
    """
    out = {}
    for j, name in enumerate(("b1", "b2", "b3")):
        b = [0, 0, 0]
        b[j] = 1
        sol = kodama_solve(KodamaProblem(alpha, beta, *b, sign=sign, field=field, target=target))
        out[name] = {"a1": sol.a1, "a2": sol.a2, "a3": sol.a3, "c2": sol.c2}
    return out


# ----------------------------------------------------------------------
# printed reference rows and the rescaling scan
# ----------------------------------------------------------------------

def printed_rows() -> dict:
    """Coefficients (a1, a2, a3, b1, b2, b3) of each monomial of ``Y2 + [Y1, X]`` as printed,
    together with the printed target coefficients."""
    F = Fraction
    return {
        "u5": ((0, F(1, 3), 0, 0, 2, 0), 1),
        "u*u3": ((F(1, 3), 0, F(1, 2), -2, 0, 0), 5),
        "u1*u2": ((1, -2, F(5, 6), -4, 0, 0), 10),
        "u^2*u1": ((F(7, 2), 0, F(3, 4), 0, 0, 7), F(35, 8)),
    }


def printed_c2_formula(b1, b2, b3) -> Fraction:
    return (7 * Fraction(b3) + 3 * Fraction(b1) + 81 * Fraction(b2)) * Fraction(8, 389)


_ROW_KEYS = {
    "u5": lambda u: u(5),
    "u*u3": lambda u: u() * u(3),
    "u1*u2": lambda u: u(1) * u(2),
    "u^2*u1": lambda u: u() ** 2 * u(1),
}


def derived_rows(alpha, beta, sign: int = 1, field: str = "s") -> dict:
    """Engine coefficients of ``Y2 + [Y1, X]`` in the same layout as :func:`printed_rows`."""
    u = lambda k=0: var(field, k)
    Y1 = hamiltonian_flow(u(1) ** 2 * Fraction(alpha) + u() ** 3 * Fraction(beta), field, sign)
    order2 = [u() * u(1) ** 2, u(2) ** 2, u() ** 4]
    gens = [u() ** 2, u(2), u(1) * u(-1)]
    cols = [evo_commutator(Y1, g) for g in gens] + [hamiltonian_flow(d, field, sign) for d in order2]
    T = hamiltonian_flow(k2_density(field), field, sign)
    out = {}
    for name, mk in _ROW_KEYS.items():
        (key, _), = mk(u).items()
        out[name] = (tuple(c.coeff(key) for c in cols), T.coeff(key))
    extra = set()
    for c in cols + [T]:
        extra |= {k for k, _ in c.items()}
    known = {mk(u).items()[0][0] for mk in _ROW_KEYS.values()}
    out["other_monomials"] = sorted(str(from_key(k)) for k in extra - known)
    return out


def rescaled_problem(problem: KodamaProblem, lam) -> KodamaProblem:
    """Problem in the variable ``w`` with ``u = lam * w`` (Hamiltonians divided by ``lam^2``)."""
    lam = Fraction(lam)
    return KodamaProblem(problem.alpha, problem.beta * lam, problem.b1 * lam, problem.b2,
                         problem.b3 * lam ** 2, problem.sign, problem.field, problem.target)


def lambda_scan(problem: KodamaProblem, lambdas=None) -> list:
    """Engine ``c2`` and the printed closed form after the rescaling ``u = lam * w``."""
    if lambdas is None:
        lambdas = [Fraction(1, 2), Fraction(3, 4), Fraction(1), Fraction(4, 3), Fraction(3, 2), Fraction(2)]
    if problem.beta:
        hierarchy = Fraction(1, 3) / problem.beta
        if hierarchy not in lambdas:
            lambdas = sorted([*lambdas, hierarchy])
    rows = []
    for lam in lambdas:
        p = rescaled_problem(problem, lam)
        try:
            sol = kodama_solve(p)
            c2, zero = sol.c2, sol.residual.is_zero()
        except InconsistentSystem:
            c2, zero = None, False
        formula = printed_c2_formula(p.b1, p.b2, p.b3)
        rows.append({
            "lambda": str(lam),
            "beta_rescaled": str(p.beta),
            "b_rescaled": [str(p.b1), str(p.b2), str(p.b3)],
            "engine_c2": None if c2 is None else str(c2),
            "engine_residual_zero": zero,
            "printed_formula_c2": str(formula),
            "engine_matches_299_389": c2 == PRINTED_C2,
            "formula_matches_299_389": formula == PRINTED_C2,
        })
    return rows


# ----------------------------------------------------------------------
# the change of variables
# ----------------------------------------------------------------------

def build_TK(sol_s: KodamaSolution, sol_r: KodamaSolution | None = None,
             second_order_factor=1) -> dict:
    """Displacements of the map ``u + eps X + eps^2 * factor * dX X`` per power of eps.

    ``sol_r`` defaults to ``sol_s``.  With the printed form the factor is 1;
    the Lie-series (time-eps flow) form uses 1/2, and both agree up to terms
    that only enter at order eps^3.
    """
    sol_r = sol_r or sol_s
    Xs, Xr = sol_s.generator("s"), sol_r.generator("r")
    order1 = EvoField(Xr, Xs)
    order2 = EvoField(prolong(Xr, Xr), prolong(Xs, Xs)).scale(second_order_factor)
    return {1: order1, 2: order2}
