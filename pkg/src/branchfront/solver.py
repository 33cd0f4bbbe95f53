"""Time integration of the reaction-diffusion-advection equation on a masked grid.

The spatial operator is a masked 5-point divergence-form diffusion stencil
with face-centered coefficients, first-order upwind advection, and pointwise
explicit reaction.  Closed faces carry zero flux, realized by aliasing the
missing neighbor to the cell itself.  Both the fully explicit scheme and the
IMEX scheme (backward-difference implicit diffusion solved matrix-free by
conjugate gradients) are monotone within their time-step bounds, so ordered
initial data stay ordered: the discrete comparison principle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coefficients import Models
from .geometry import MaskedGrid
from .wave1d import ClosedFormFront, WaveProfile

__all__ = [
    "ScalarField",
    "SimConfig",
    "SteadyState",
    "Trajectory",
    "Stencil",
    "StepError",
    "step",
    "run",
    "steady_state",
    "initial_front",
    "initial_block",
    "initial_constant",
    "explicit_dt_bound",
]


class StepError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalarField:
    """Per-interior-cell values at a timestamp."""

    grid: MaskedGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.values.shape != (self.grid.n_cells,):
            raise ValueError("field shape does not match grid interior")

    def extrema(self) -> tuple[float, float]:
        return float(self.values.min()), float(self.values.max())

    def mass(self) -> float:
        return float(self.values.sum()) * self.grid.h ** 2


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_end: float
    scheme: str = "explicit"           # explicit | imex
    cadence: float = 1.0               # probe/output interval
    tol_steady: float = 1e-6
    tol_linear: float = 1e-13          # relative CG residual
    max_linear_iter: int = 1000

    def __post_init__(self):
        if self.scheme not in ("explicit", "imex"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0 or self.t_end < 0:
            raise ValueError("dt must be positive and t_end nonnegative")

    def validate(self, grid: MaskedGrid, models: Models) -> None:
        """Monotone-scheme time-step bounds; violating them forfeits the
        discrete comparison principle, so they are hard errors."""
        M = models.reaction.lipschitz
        if self.scheme == "explicit":
            bound = (
                4.0 * models.diffusion.beta2 / grid.h ** 2
                + 2.0 * models.advection.q_max / grid.h
                + M
            )
            if self.dt * bound > 1.0 + 1e-12:
                raise ValueError(
                    f"explicit dt={self.dt:g} violates the monotone bound "
                    f"dt <= {1.0 / bound:g}"
                )
        else:
            if self.dt * M > 1.0 + 1e-12:
                raise ValueError(f"imex dt={self.dt:g} violates dt*M <= 1 (M={M:g})")


def explicit_dt_bound(grid: MaskedGrid, models: Models) -> float:
    return 1.0 / (
        4.0 * models.diffusion.beta2 / grid.h ** 2
        + 2.0 * models.advection.q_max / grid.h
        + models.reaction.lipschitz
    )


@dataclass(frozen=True)
class SteadyState:
    field: ScalarField
    residual: float          # sup-norm time-derivative estimate at the end
    converged: bool


# ---------------------------------------------------------------------------
# stencil
# ---------------------------------------------------------------------------


class Stencil:
    """Precomputed neighbor indices and coefficients for one (grid, models) pair.

    Missing (closed-face) neighbors alias to the cell itself, so gathered
    differences u[nb] - u vanish there: zero flux without branching.
    """

    def __init__(self, grid: MaskedGrid, models: Models):
        self.grid = grid
        self.models = models
        h = grid.h
        jj, ii = grid.cells
        xs, ys = grid.cell_centers()
        index = grid.index

        def neighbor(dj, di):
            ny, nx = index.shape
            j2 = np.clip(jj + dj, 0, ny - 1)
            i2 = np.clip(ii + di, 0, nx - 1)
            nb = index[j2, i2]
            inside = (jj + dj >= 0) & (jj + dj < ny) & (ii + di >= 0) & (ii + di < nx)
            open_face = inside & (nb >= 0)
            own = index[jj, ii]
            return np.where(open_face, nb, own), open_face

        self.iE, openE = neighbor(0, +1)
        self.iW, openW = neighbor(0, -1)
        self.iN, openN = neighbor(+1, 0)
        self.iS, openS = neighbor(-1, 0)

        a1, a2 = models.diffusion.a1, models.diffusion.a2
        inv_h2 = 1.0 / (h * h)
        self.aE = np.where(openE, a1(xs + h / 2, ys), 0.0) * inv_h2
        self.aW = np.where(openW, a1(xs - h / 2, ys), 0.0) * inv_h2
        self.aN = np.where(openN, a2(xs, ys + h / 2), 0.0) * inv_h2
        self.aS = np.where(openS, a2(xs, ys - h / 2), 0.0) * inv_h2
        self.diffusion_diag = self.aE + self.aW + self.aN + self.aS

        q1 = models.advection.q1(xs, ys)
        q2 = models.advection.q2(xs, ys)
        inv_h = 1.0 / h
        self.q1_pos = np.maximum(q1, 0.0) * inv_h
        self.q1_neg = np.minimum(q1, 0.0) * inv_h
        self.q2_pos = np.maximum(q2, 0.0) * inv_h
        self.q2_neg = np.minimum(q2, 0.0) * inv_h
        self.has_advection = not models.advection.is_zero

        self.rho = models.reaction.modulation(xs, ys)
        self.theta = models.reaction.theta

    # -- operators ---------------------------------------------------------

    def diffusion(self, u: np.ndarray) -> np.ndarray:
        return (
            self.aE * (u[self.iE] - u)
            + self.aW * (u[self.iW] - u)
            + self.aN * (u[self.iN] - u)
            + self.aS * (u[self.iS] - u)
        )

    def advection(self, u: np.ndarray) -> np.ndarray:
        # upwind q . grad u; closed-face one-sided differences degrade to zero
        return (
            self.q1_pos * (u - u[self.iW])
            + self.q1_neg * (u[self.iE] - u)
            + self.q2_pos * (u - u[self.iS])
            + self.q2_neg * (u[self.iN] - u)
        )

    def reaction(self, u: np.ndarray) -> np.ndarray:
        return self.rho * u * (1.0 - u) * (u - self.theta)

    def rhs(self, u: np.ndarray) -> np.ndarray:
        out = self.diffusion(u)
        if self.has_advection:
            out -= self.advection(u)
        out += self.reaction(u)
        return out

    def helmholtz(self, u: np.ndarray, dt: float) -> np.ndarray:
        """(I - dt * diffusion) u, the SPD implicit operator."""
        return u - dt * self.diffusion(u)

    def solve_implicit(self, rhs: np.ndarray, dt: float, tol: float, max_iter: int,
                       x0: np.ndarray | None = None) -> np.ndarray:
        """Matrix-free Jacobi-preconditioned CG on (I - dt D) x = rhs.

        Reduction order is fixed by the serial numpy dot, so results do not
        depend on worker count.
        """
        diag = 1.0 + dt * self.diffusion_diag
        x = rhs.copy() if x0 is None else x0.copy()
        r = rhs - self.helmholtz(x, dt)
        z = r / diag
        p = z.copy()
        rz = float(r @ z)
        b_norm = float(np.sqrt(rhs @ rhs))
        target = tol * max(b_norm, 1e-300)
        for _ in range(max_iter):
            if math.sqrt(float(r @ r)) <= target:
                return x
            Ap = self.helmholtz(p, dt)
            alpha = rz / float(p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            z = r / diag
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        if math.sqrt(float(r @ r)) <= target:
            return x
        raise StepError(
            f"implicit diffusion solve did not converge in {max_iter} iterations"
        )


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def step(u: ScalarField, cfg: SimConfig, models: Models, stencil: Stencil | None = None) -> ScalarField:
    """One time step; validates the SimConfig bounds on first use."""
    st = stencil if stencil is not None else Stencil(u.grid, models)
    cfg.validate(u.grid, models)
    v = _step_values(u.values, cfg, st)
    return ScalarField(u.grid, v, u.t + cfg.dt)


def _step_values(u: np.ndarray, cfg: SimConfig, st: Stencil) -> np.ndarray:
    dt = cfg.dt
    if cfg.scheme == "explicit":
        v = u + dt * st.rhs(u)
    else:
        rhs = u + dt * st.reaction(u)
        if st.has_advection:
            rhs -= dt * st.advection(u)
        v = st.solve_implicit(rhs, dt, cfg.tol_linear, cfg.max_linear_iter, x0=u)
    if not np.all(np.isfinite(v)):
        raise StepError("non-finite value: time step blew up")
    return v


@dataclass
class Trajectory:
    """Probe-time snapshots of a run, plus extrema for invariant checks."""

    grid: MaskedGrid
    times: np.ndarray
    snapshots: list
    min_value: float
    max_value: float

    def field(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.snapshots[k], float(self.times[k]))

    @property
    def t_range(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation between stored snapshots."""
        times = self.times
        if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
            raise ValueError(f"time {t} outside stored range [{times[0]}, {times[-1]}]")
        if len(self.snapshots) == 1:
            return self.snapshots[0]
        k = int(np.searchsorted(times, t, side="right")) - 1
        k = max(0, min(k, len(self.snapshots) - 2))
        t0, t1 = times[k], times[k + 1]
        w = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return (1.0 - w) * self.snapshots[k] + w * self.snapshots[k + 1]


def run(
    u0: ScalarField,
    cfg: SimConfig,
    models: Models,
    probes: Sequence[Callable] = (),
) -> Trajectory:
    """Integrate to t_end, storing snapshots and invoking probes at the
    output cadence.  Deterministic for fixed (u0, cfg, models) regardless
    of worker count.
    """
    cfg.validate(u0.grid, models)
    st = Stencil(u0.grid, models)
    n_steps = int(round(cfg.t_end / cfg.dt))
    every = max(1, int(round(cfg.cadence / cfg.dt)))
    u = u0.values.copy()
    t = u0.t
    times = [t]
    snaps = [u.copy()]
    vmin, vmax = float(u.min()), float(u.max())
    for p in probes:
        p(ScalarField(u0.grid, u, t))
    for k in range(1, n_steps + 1):
        u = _step_values(u, cfg, st)
        t = u0.t + k * cfg.dt
        vmin = min(vmin, float(u.min()))
        vmax = max(vmax, float(u.max()))
        if k % every == 0 or k == n_steps:
            f = ScalarField(u0.grid, u, t)
            for p in probes:
                p(f)
            if t > times[-1]:
                times.append(t)
                snaps.append(u.copy())
    return Trajectory(u0.grid, np.array(times), snaps, vmin, vmax)


def steady_state(u0: ScalarField, cfg: SimConfig, models: Models) -> SteadyState:
    """Integrate until the sup-norm time derivative drops below tol_steady.

    Non-convergence by t_end is a reported state, not an error.
    """
    cfg.validate(u0.grid, models)
    st = Stencil(u0.grid, models)
    every = max(1, int(round(cfg.cadence / cfg.dt)))
    check_dt = every * cfg.dt
    n_steps = int(round(cfg.t_end / cfg.dt))
    u = u0.values.copy()
    prev = u.copy()
    t = u0.t
    residual = math.inf
    for k in range(1, n_steps + 1):
        u = _step_values(u, cfg, st)
        t = u0.t + k * cfg.dt
        if k % every == 0:
            residual = float(np.max(np.abs(u - prev))) / check_dt
            prev = u.copy()
            if residual <= cfg.tol_steady:
                return SteadyState(ScalarField(u0.grid, u, t), residual, True)
    return SteadyState(ScalarField(u0.grid, u, t), residual, residual <= cfg.tol_steady)


# ---------------------------------------------------------------------------
# initial data builders
# ---------------------------------------------------------------------------


def initial_front(
    grid: MaskedGrid,
    branch: int,
    s0: float,
    profile: WaveProfile | ClosedFormFront,
    facing: str = "inward",
) -> ScalarField:
    """Planar profile composed with the axial coordinate of one branch.

    facing='inward': the invaded state 1 occupies the far end of the branch
    and the front advances toward the junction (the shape of a front deep in
    an initiated branch).  facing='outward' is the mirror image.  Cells off
    the branch carry the profile's value at the branch mouth (its tail).
    """
    if facing not in ("inward", "outward"):
        raise ValueError(f"facing must be 'inward' or 'outward', got {facing!r}")
    length = grid.spec.branches[branch].length
    if isinstance(profile, ClosedFormFront):
        m_cut = profile.width(0.01)
    else:
        from .wave1d import profile_width
        m_cut = profile_width(profile, 0.01)
    if not m_cut < s0 < length - m_cut:
        raise ValueError(
            f"front position s0={s0:g} outside ({m_cut:g}, {length - m_cut:g})"
        )
    tags = grid.cell_tags()
    s = grid.cell_s()
    sign = -1.0 if facing == "inward" else 1.0
    vals = np.empty(grid.n_cells)
    mine = tags == branch
    vals[mine] = profile.value(sign * (s[mine] - s0))
    vals[~mine] = profile.value(sign * (0.0 - s0))
    np.clip(vals, 0.0, 1.0, out=vals)
    return ScalarField(grid, vals, 0.0)


def initial_block(
    grid: MaskedGrid,
    branch: int,
    interval: tuple[float, float],
    level: float,
    floor: float = 0.0,
) -> ScalarField:
    """`level` on the axial slab of one branch, `floor` everywhere else."""
    s_a, s_b = interval
    if not s_a < s_b:
        raise ValueError(f"empty slab interval [{s_a}, {s_b}]")
    tags = grid.cell_tags()
    s = grid.cell_s()
    vals = np.full(grid.n_cells, float(floor))
    slab = (tags == branch) & (s >= s_a) & (s <= s_b)
    vals[slab] = float(level)
    return ScalarField(grid, vals, 0.0)


def initial_constant(grid: MaskedGrid, value: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.n_cells, float(value)), 0.0)
