"""Reaction, diffusion and advection models and their structural constants.

The reaction is a cubic bistable u(1-u)(u-theta), optionally modulated by a
positive scalar field rho(x).  Both equilibrium states 0 and 1 are linearly
stable; the derived constants (gamma, sigma, M) quantify that stability and
feed every barrier construction downstream.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad

__all__ = [
    "Nonlinearity",
    "DiffusionModel",
    "AdvectionModel",
    "Models",
    "ModelError",
    "cubic",
    "derive_stability_constants",
    "integral_f",
    "lipschitz_bound",
    "compile_field_expression",
]


class ModelError(ValueError):
    """Raised for invalid model parameters (e.g. threshold outside (0,1))."""


# ---------------------------------------------------------------------------
# whitelisted analytic field expressions (for rho, diffusion entries, q)
# ---------------------------------------------------------------------------

_ALLOWED_CALLS = {"tanh": np.tanh, "sin": np.sin}
_ALLOWED_NAMES = {"x", "y"}
_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.USub,
    ast.UAdd,
    ast.Constant,
    ast.Name,
    ast.Call,
    ast.Load,
)


def compile_field_expression(text: str) -> Callable:
    """Compile a whitelisted scalar expression of (x, y) into a vectorized callable.

    Only +, -, *, /, numeric literals, the names x and y, and the calls
    tanh(...) and sin(...) are accepted; anything else raises ModelError.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ModelError(f"bad field expression {text!r}: {exc}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ModelError(
                f"field expression {text!r}: {type(node).__name__} not in whitelist"
            )
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES:
            raise ModelError(f"field expression {text!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_CALLS:
                raise ModelError(f"field expression {text!r}: call not in whitelist")
            if node.keywords or len(node.args) != 1:
                raise ModelError(f"field expression {text!r}: calls take one argument")
    code = compile(tree, "<field>", "eval")

    def evaluate(x, y):
        env = {"x": np.asarray(x, dtype=float), "y": np.asarray(y, dtype=float)}
        env.update(_ALLOWED_CALLS)
        out = eval(code, {"__builtins__": {}}, env)  # noqa: S307 - AST whitelisted above
        return np.broadcast_to(np.asarray(out, dtype=float), env["x"].shape).copy()

    evaluate.expression = text
    return evaluate


def _constant_field(value: float) -> Callable:
    def evaluate(x, y):
        return np.full(np.shape(np.asarray(x)), float(value))

    evaluate.expression = repr(float(value))
    return evaluate


# ---------------------------------------------------------------------------
# nonlinearity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Nonlinearity:
    """Bistable reaction f(x,u) = rho(x) * u (1-u) (u-theta).

    rho is a positive modulation bounded to [rho_min, rho_max]; rho == 1
    gives the homogeneous cubic.  gamma, sigma and the Lipschitz bound M
    are derived at construction and satisfy, on samples,
        f(x,u) <= -gamma*u        on [0, sigma],
        f(x,u) >= gamma*(1-u)     on [1-sigma, 1],
    with f(x,.) nonincreasing on both intervals.
    """

    theta: float
    rho: Callable | None = None
    rho_min: float = 1.0
    rho_max: float = 1.0
    gamma: float = field(init=False, default=0.0)
    sigma: float = field(init=False, default=0.0)
    lipschitz: float = field(init=False, default=0.0)

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ModelError(f"threshold outside (0,1): theta={self.theta}")
        if self.rho is not None and self.rho_min <= 0.0:
            raise ModelError("rho modulation must be bounded below by a positive rho_min")
        gamma, sigma = derive_stability_constants(self)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "lipschitz", lipschitz_bound(self))

    @property
    def homogeneous(self) -> bool:
        return self.rho is None

    # base cubic and derivative, without modulation
    def base(self, u):
        u = np.asarray(u, dtype=float)
        return u * (1.0 - u) * (u - self.theta)

    def base_prime(self, u):
        u = np.asarray(u, dtype=float)
        return -3.0 * u * u + 2.0 * (1.0 + self.theta) * u - self.theta

    def __call__(self, x, y, u):
        out = self.base(u)
        if self.rho is not None:
            out = self.rho(x, y) * out
        return out

    def modulation(self, x, y):
        if self.rho is None:
            return np.ones(np.shape(np.asarray(x)))
        return self.rho(x, y)

    def critical_points(self) -> tuple[float, float]:
        """Roots of f'(u) = 0 for the base cubic, u_minus < u_plus."""
        th = self.theta
        disc = math.sqrt(1.0 - th + th * th)
        return ((1.0 + th) - disc) / 3.0, ((1.0 + th) + disc) / 3.0


def cubic(theta: float, rho: str | float | None = None) -> Nonlinearity:
    """Convenience constructor; rho may be a constant or a whitelisted expression."""
    if rho is None:
        return Nonlinearity(theta)
    if isinstance(rho, (int, float)):
        if float(rho) == 1.0:
            return Nonlinearity(theta)
        r = float(rho)
        if r <= 0:
            raise ModelError("rho must be positive")
        return Nonlinearity(theta, rho=_constant_field(r), rho_min=r, rho_max=r)
    fn = compile_field_expression(rho)
    lo, hi = _sample_range(fn)
    if lo <= 0:
        raise ModelError(f"rho expression {rho!r} is not positive on samples (min {lo:g})")
    return Nonlinearity(theta, rho=fn, rho_min=lo, rho_max=hi)


def _sample_range(fn: Callable, extent: float = 60.0, n: int = 101) -> tuple[float, float]:
    xs = np.linspace(-extent, extent, n)
    X, Y = np.meshgrid(xs, xs)
    vals = fn(X, Y)
    return float(np.min(vals)), float(np.max(vals))


def derive_stability_constants(nl: Nonlinearity) -> tuple[float, float]:
    """Stability rate gamma and interval half-width sigma for the cubic reaction.

    sigma is pulled 1% inside the nearest critical point of the base cubic
    (and capped just below 1/2) so the monotonicity of f on [0,sigma] and
    [1-sigma,1] is strict under floating point.  gamma is the grid minimum
    of the two ratio bounds -f/u on [0,sigma] and f/(1-u) on [1-sigma,1],
    scaled by the smallest modulation value.
    """
    u_minus, u_plus = nl.critical_points()
    sigma = 0.99 * min(u_minus, 1.0 - u_plus, 0.5 - 1e-6)
    if sigma <= 0:
        raise ModelError(f"degenerate stability interval for theta={nl.theta}")
    us = np.linspace(0.0, sigma, 2001)[1:]  # skip u=0 (ratio -> theta there anyway)
    low = np.min((1.0 - us) * (nl.theta - us))
    vs = np.linspace(1.0 - sigma, 1.0, 2001)[:-1]
    high = np.min(vs * (vs - nl.theta))
    gamma = nl.rho_min * float(min(low, high))
    if gamma <= 0:
        raise ModelError(f"non-bistable stability constants for theta={nl.theta}")
    return gamma, float(sigma)


def integral_f(nl: Nonlinearity) -> float:
    """Signed integral of the homogeneous reaction over [0,1].

    Its sign decides the direction of the planar front.  Adaptive quadrature
    is exact (to roundoff) for the polynomial cubic.
    """
    if not nl.homogeneous:
        raise ModelError("integral_f requires a homogeneous reaction")
    val, _ = quad(lambda u: float(nl.base(u)), 0.0, 1.0)
    return val


def lipschitz_bound(nl: Nonlinearity) -> float:
    """Upper bound M on sup |d f/du| over x and u in [0,1], with 5% headroom."""
    us = np.linspace(0.0, 1.0, 4001)
    m = float(np.max(np.abs(nl.base_prime(us))))
    return 1.05 * nl.rho_max * m


# ---------------------------------------------------------------------------
# diffusion and advection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionModel:
    """Diagonal diffusion tensor diag(a1(x), a2(x)) with ellipticity bounds."""

    a1: Callable
    a2: Callable
    beta1: float
    beta2: float

    def __post_init__(self):
        if not 0 < self.beta1 <= self.beta2:
            raise ModelError("need 0 < beta1 <= beta2")

    @staticmethod
    def identity() -> "DiffusionModel":
        return DiffusionModel(_constant_field(1.0), _constant_field(1.0), 1.0, 1.0)

    @staticmethod
    def from_expressions(a1: str | float, a2: str | float) -> "DiffusionModel":
        fns = []
        lo, hi = np.inf, -np.inf
        for entry in (a1, a2):
            fn = (
                _constant_field(float(entry))
                if isinstance(entry, (int, float))
                else compile_field_expression(entry)
            )
            l, h = _sample_range(fn)
            lo, hi = min(lo, l), max(hi, h)
            fns.append(fn)
        if lo <= 0:
            raise ModelError(f"diffusion entries not uniformly positive (min {lo:g})")
        return DiffusionModel(fns[0], fns[1], float(lo), float(hi))

    @property
    def is_identity(self) -> bool:
        return (
            getattr(self.a1, "expression", None) == repr(1.0)
            and getattr(self.a2, "expression", None) == repr(1.0)
        )

    def check_bounds(self, x, y, tol: float = 1e-12) -> bool:
        for fn in (self.a1, self.a2):
            vals = fn(x, y)
            if np.min(vals) < self.beta1 - tol or np.max(vals) > self.beta2 + tol:
                return False
        return True


@dataclass(frozen=True)
class AdvectionModel:
    """Bounded drift field q(x) = (q1, q2)."""

    q1: Callable
    q2: Callable
    q_max: float

    @staticmethod
    def zero() -> "AdvectionModel":
        return AdvectionModel(_constant_field(0.0), _constant_field(0.0), 0.0)

    @staticmethod
    def from_expressions(q1: str | float, q2: str | float) -> "AdvectionModel":
        fns = []
        bound = 0.0
        for entry in (q1, q2):
            fn = (
                _constant_field(float(entry))
                if isinstance(entry, (int, float))
                else compile_field_expression(entry)
            )
            l, h = _sample_range(fn)
            bound = max(bound, abs(l), abs(h))
            fns.append(fn)
        return AdvectionModel(fns[0], fns[1], float(bound))

    @property
    def is_zero(self) -> bool:
        return self.q_max == 0.0


@dataclass(frozen=True)
class Models:
    """The full coefficient triple (A, q, f) of the evolution problem."""

    reaction: Nonlinearity
    diffusion: DiffusionModel
    advection: AdvectionModel

    @staticmethod
    def homogeneous(theta: float) -> "Models":
        return Models(cubic(theta), DiffusionModel.identity(), AdvectionModel.zero())
