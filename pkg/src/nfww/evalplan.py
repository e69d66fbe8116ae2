"""Compile differential polynomials into interpreted evaluation programs on a grid.

A plan is a list of nodes in topological order.  Node kinds:

``input``      a named grid array (``r``, ``s`` or tangent ``vr``, ``vs``)
``deriv``      spectral derivative of order >= 1
``antideriv``  the skew antiderivative
``product``    pointwise product of two nodes
``axpy``       real linear combination of nodes

Rational coefficients become doubles in :func:`_real` and nowhere else.
Structurally equal nodes are shared (hash-consing), so a plan is also its
own common-subexpression elimination.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .diffpoly import DiffPoly, EvoField, Jet

NODE_KINDS = ("input", "deriv", "antideriv", "product", "axpy", "zero")


class UnsupportedNode(ValueError):
    """A symbolic construct the node grammar cannot express."""


class ShapeMismatch(ValueError):
    """Inputs of inconsistent length, or a missing tangent."""


def _real(c) -> float:
    # single precision boundary between the exact and floating layers
    return float(Fraction(c))


@dataclass(frozen=True)
class Node:
    kind: str
    args: tuple = ()
    data: object = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "args": list(self.args),
                "data": list(map(list, self.data)) if self.kind == "axpy" else self.data}


@dataclass
class EvalPlan:
    """Immutable-after-build list of nodes plus named outputs."""

    nodes: list = field(default_factory=list)
    outputs: tuple = ()
    names: tuple = ()

    @property
    def inputs(self) -> tuple:
        return tuple(sorted({n.data for n in self.nodes if n.kind == "input"}))

    @property
    def needs_tangent(self) -> bool:
        return any(name.startswith("v") for name in self.inputs)

    def __len__(self) -> int:
        return len(self.nodes)

    def count(self, kind: str) -> int:
        return sum(1 for n in self.nodes if n.kind == kind)

    def to_json(self) -> dict:
        return {"nodes": [n.to_json() for n in self.nodes],
                "outputs": list(self.outputs), "names": list(self.names)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, data: Mapping) -> "EvalPlan":
        nodes = []
        for n in data["nodes"]:
            payload = n["data"]
            if n["kind"] == "axpy":
                payload = tuple((float(c), int(i)) for c, i in payload)
            nodes.append(Node(n["kind"], tuple(n["args"]), payload))
        return cls(nodes, tuple(data["outputs"]), tuple(data["names"]))


class PlanBuilder:
    """Hash-consing builder; every ``add`` returns the index of an existing equal node if any."""

    def __init__(self):
        self.nodes: list = []
        self._index: dict = {}
        self._jets: dict = {}

    def add(self, node: Node) -> int:
        idx = self._index.get(node)
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(node)
            self._index[node] = idx
        return idx

    def zero(self) -> int:
        return self.add(Node("zero"))

    def input(self, name: str) -> int:
        return self.add(Node("input", (), name))

    def deriv(self, i: int, k: int) -> int:
        if k == 0:
            return i
        if k < 0:
            raise UnsupportedNode("negative derivative order; use antideriv")
        node = self.nodes[i]
        if node.kind == "zero":
            return i
        if node.kind == "deriv":  # fold nested derivatives
            return self.add(Node("deriv", node.args, node.data + k))
        return self.add(Node("deriv", (i,), k))

    def antideriv(self, i: int) -> int:
        if self.nodes[i].kind == "zero":
            return i
        return self.add(Node("antideriv", (i,)))

    def product(self, a: int, b: int) -> int:
        if self.nodes[a].kind == "zero" or self.nodes[b].kind == "zero":
            return self.zero()
        return self.add(Node("product", tuple(sorted((a, b)))))

    def power(self, i: int, e: int) -> int:
        out = None
        base = i
        while e:
            if e & 1:
                out = base if out is None else self.product(out, base)
            e >>= 1
            if e:
                base = self.product(base, base)
        return out

    def axpy(self, terms) -> int:
        merged: dict = {}
        for c, i in terms:
            if self.nodes[i].kind == "zero" or c == 0:
                continue
            merged[i] = merged.get(i, 0.0) + c
        terms = tuple(sorted((c, i) for i, c in merged.items() if c != 0.0))
        if not terms:
            return self.zero()
        if len(terms) == 1 and terms[0][0] == 1.0:
            return terms[0][1]
        return self.add(Node("axpy", tuple(i for _, i in terms), terms))

    # -- symbolic lowering --------------------------------------------------

    def jet(self, v: Jet, prefix: str = "") -> int:
        """Node computing jet ``v`` of the input arrays named ``prefix + field``."""
        key = (v, prefix)
        if key in self._jets:
            return self._jets[key]
        if v.arg:
            if prefix:
                raise UnsupportedNode("atoms are lowered through their argument")
            out = self.antideriv(self.poly(v.argument()))
        elif v.order >= 0:
            out = self.deriv(self.input(prefix + v.field), v.order)
        elif v.order == -1:
            out = self.antideriv(self.input(prefix + v.field))
        else:
            raise UnsupportedNode(f"jet order {v.order}")
        self._jets[key] = out
        return out

    def monomial(self, key) -> int:
        factors = [self.power(self.jet(v), e) for v, e in key]
        if not factors:
            raise UnsupportedNode("constant monomial")
        out = factors[0]
        for f in factors[1:]:
            out = self.product(out, f)
        return out

    def poly(self, p: DiffPoly) -> int:
        if p.has_constant():
            raise UnsupportedNode(f"constant term in {p}")
        return self.axpy([(_real(c), self.monomial(k)) for k, c in p.items()])

    def linearized_jet(self, v: Jet) -> int:
        """Tangent of jet ``v`` in the direction of the ``vr``/``vs`` inputs."""
        if v.arg:
            return self.antideriv(self.linearized(v.argument()))
        return self.jet(v, prefix="v")

    def linearized(self, p: DiffPoly) -> int:
        """Node for ``dp[v]``: the exact symbolic linearization of ``p``."""
        terms = []
        for key, c in p.items():
            for i, (v, e) in enumerate(key):
                rest = [(w, f) for j, (w, f) in enumerate(key) if j != i]
                if e > 1:
                    rest.append((v, e - 1))
                dv = self.linearized_jet(v)
                node = dv if not rest else self.product(self.monomial(tuple(sorted(rest))), dv)
                terms.append((_real(c * e), node))
        return self.axpy(terms)

    def build(self, outputs, names) -> EvalPlan:
        return _prune(self.nodes, tuple(outputs), tuple(names))


def _prune(nodes: list, outputs: tuple, names: tuple) -> EvalPlan:
    """Drop unreachable nodes and renumber, keeping topological order."""
    keep = set()
    stack = list(outputs)
    while stack:
        i = stack.pop()
        if i in keep:
            continue
        keep.add(i)
        stack.extend(nodes[i].args)
    order = sorted(keep)
    remap = {old: new for new, old in enumerate(order)}
    out = []
    for old in order:
        n = nodes[old]
        args = tuple(remap[a] for a in n.args)
        data = n.data
        if n.kind == "axpy":
            data = tuple((c, remap[i]) for c, i in n.data)
        out.append(Node(n.kind, args, data))
    return EvalPlan(out, tuple(remap[o] for o in outputs), names)


def _as_field(f) -> EvoField:
    if isinstance(f, EvoField):
        return f
    if isinstance(f, tuple) and len(f) == 2:
        return EvoField(*f)
    raise TypeError("expected an EvoField or an (r, s) pair")


def compile_poly(p: DiffPoly, name: str = "out") -> EvalPlan:
    b = PlanBuilder()
    return b.build([b.poly(p)], [name])


def compile_field(f) -> EvalPlan:
    """Plan with outputs ``(r-component, s-component)`` of an evolutionary field."""
    f = _as_field(f)
    b = PlanBuilder()
    return b.build([b.poly(f.r), b.poly(f.s)], ["r", "s"])


@dataclass
class CompiledMap:
    """Near-identity map ``z + sum_k eps^k D_k(z)`` and its Jacobian action."""

    forward: EvalPlan
    jacobian_action: EvalPlan
    eps: float
    orders: tuple = ()

    def to_json(self) -> dict:
        return {"eps": self.eps, "orders": list(self.orders),
                "forward": self.forward.to_json(), "jacobian_action": self.jacobian_action.to_json()}


def compile_map(displacements: Mapping[int, EvoField], eps: float) -> CompiledMap:
    """Compile ``z -> z + sum_k eps^k displacements[k](z)`` for ``k <= 2``."""
    if any(k < 1 or k > 2 for k in displacements):
        raise UnsupportedNode("maps are truncated at order eps^2")
    fwd, jac = PlanBuilder(), PlanBuilder()
    outs_f, outs_j = [], []
    for comp in ("r", "s"):
        tf = [(1.0, fwd.input(comp))]
        tj = [(1.0, jac.input("v" + comp))]
        for k, disp in sorted(displacements.items()):
            w = float(eps) ** k
            if w == 0.0:
                continue
            p = _as_field(disp).components()[comp]
            tf.append((w, fwd.poly(p)))
            tj.append((w, jac.linearized(p)))
        outs_f.append(fwd.axpy(tf))
        outs_j.append(jac.axpy(tj))
    return CompiledMap(fwd.build(outs_f, ["r", "s"]), jac.build(outs_j, ["r", "s"]),
                       float(eps), tuple(sorted(displacements)))


# ----------------------------------------------------------------------
# interpretation
# ----------------------------------------------------------------------

def _ops(state):
    """Derivative/antiderivative primitives of a grid-like object."""
    try:
        return state.derivative, state.antiderivative
    except AttributeError as exc:
        raise TypeError("state must provide derivative(u, k) and antiderivative(u)") from exc


def evaluate(plan: EvalPlan, state, tangent=None) -> tuple:
    """Run ``plan`` on ``state`` (any object with ``r``, ``s`` arrays and grid primitives).

    ``tangent`` supplies ``vr``/``vs`` and must be given exactly when the plan
    reads them.  Returns one array per output.
    """
    deriv, anti = _ops(state)
    n = len(state.r)
    env = {"r": np.asarray(state.r, dtype=float), "s": np.asarray(state.s, dtype=float)}
    if plan.needs_tangent:
        if tangent is None:
            raise ShapeMismatch("plan reads a tangent but none was given")
        env["vr"] = np.asarray(tangent.r, dtype=float)
        env["vs"] = np.asarray(tangent.s, dtype=float)
    elif tangent is not None:
        raise ShapeMismatch("tangent given to a plan without tangent inputs")
    for name, arr in env.items():
        if arr.shape != (n,):
            raise ShapeMismatch(f"input {name} has shape {arr.shape}, expected ({n},)")
    vals: list = [None] * len(plan.nodes)
    for i, node in enumerate(plan.nodes):
        k = node.kind
        if k == "input":
            vals[i] = env[node.data]
        elif k == "zero":
            vals[i] = np.zeros(n)
        elif k == "deriv":
            vals[i] = deriv(vals[node.args[0]], node.data)
        elif k == "antideriv":
            vals[i] = anti(vals[node.args[0]])
        elif k == "product":
            vals[i] = vals[node.args[0]] * vals[node.args[1]]
        elif k == "axpy":
            acc = np.zeros(n)
            for c, j in node.data:
                acc = acc + c * vals[j]
            vals[i] = acc
        else:
            raise UnsupportedNode(k)
    return tuple(vals[o].copy() if plan.nodes[o].kind == "input" else vals[o] for o in plan.outputs)


def compile_series(fields: Mapping[int, EvoField], eps: float) -> EvalPlan:
    """Plan for ``sum_k eps^k fields[k]`` with the weights folded in as doubles."""
    b = PlanBuilder()
    outs = []
    for comp in ("r", "s"):
        terms = []
        for k, f in sorted(fields.items()):
            w = float(eps) ** k
            if w != 0.0:
                terms.append((w, b.poly(_as_field(f).components()[comp])))
        outs.append(b.axpy(terms))
    return b.build(outs, ["r", "s"])


def compile_density(densities: Mapping[int, DiffPoly], eps: float) -> EvalPlan:
    """Plan for the pointwise density ``sum_k eps^k densities[k]``."""
    b = PlanBuilder()
    terms = [(float(eps) ** k, b.poly(d)) for k, d in sorted(densities.items()) if float(eps) ** k]
    return b.build([b.axpy(terms)], ["density"])
