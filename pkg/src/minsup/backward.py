"""Value surfaces for each ladder level and the monotone ladder limit.

The explicit monotone finite-difference scheme defines u_n; a regression
Monte-Carlo BSDE solver provides an independent cross-check.  The generator
is treated implicitly in y inside each backward step (fixed point, damped on
non-contraction) and explicitly in z.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .forward import DiffusionSpec, PathBundle
from .generators import GeneratorSpec, TerminalSpec
from .grids import Axis
from .ladder import LadderLevel, build_gn

__all__ = ["GridConfig", "ValueSurface", "BSDEPathSolution", "RegressionConfig",
           "solve_pde_level", "solve_ladder", "solve_bsde_mc", "evaluate",
           "LadderResult"]


@dataclass(frozen=True)
class GridConfig:
    """Space-time discretisation of one backward solve."""

    x_lo: float
    x_hi: float
    dx: float
    T: float
    t0: float = 0.0
    cfl: float = 0.9
    dt: float | None = None  # explicit override; validated against the bound
    snap_times: tuple = ()
    window_mult: float = 3.0

    def axis(self):
        n = int(round((self.x_hi - self.x_lo) / self.dx)) + 1
        return Axis(self.x_lo, self.x_lo + (n - 1) * self.dx, n)


def admissible_dt(grid: GridConfig, d: DiffusionSpec, n_level):
    """CFL bound: dt * (s^2/dx^2 + |mu|/dx + n (1+s)/min(dx,1)) <= 1."""
    ax = grid.axis()
    xs = ax.nodes()
    ts = np.linspace(grid.t0, grid.T, 5)
    mu_max, sg_max = d.bounds_on(ts, xs)
    dx = grid.dx
    denom = (sg_max ** 2 / dx ** 2 + mu_max / dx
             + n_level * (1.0 + sg_max) / min(dx, 1.0))
    return 1.0 / max(denom, 1e-300), sg_max


def _step_count(grid: GridConfig, dt_max):
    horizon = grid.T - grid.t0
    if grid.dt is not None:
        if grid.dt > dt_max * (1 + 1e-12):
            raise ValueError(
                f"CFL violated: dt={grid.dt} > max admissible dt={dt_max:.6g}")
        dt = grid.dt
    else:
        dt = grid.cfl * dt_max
    m = int(np.ceil(horizon / dt))
    for t in grid.snap_times:
        frac = (t - grid.t0) / horizon
        if not (0 <= frac <= 1):
            continue
        q = max(1, int(round(1.0 / frac))) if frac > 0 else 1
        m = int(np.ceil(m / q) * q)
    return m


@dataclass
class ValueSurface:
    """u on a (time, space) grid with its reporting-window metadata."""

    t0: float
    T: float
    xaxis: Axis
    values: np.ndarray  # (M+1, nx); row M is the terminal condition
    boundary_policy: str
    ladder_n: float | str
    cfl_ratio: float
    sigma_max: float
    window_mult: float = 3.0

    @property
    def M(self):
        return self.values.shape[0] - 1

    @property
    def dt(self):
        return (self.T - self.t0) / self.M

    def times(self):
        return np.linspace(self.t0, self.T, self.M + 1)

    def window_margin(self, t):
        return self.window_mult * self.sigma_max * np.sqrt(max(self.T - t, 0.0))

    def window_bounds(self, t):
        m = self.window_margin(t)
        return self.xaxis.lo + m, self.xaxis.hi - m

    def window_mask(self, t):
        lo, hi = self.window_bounds(t)
        xs = self.xaxis.nodes()
        return (xs >= lo - 1e-12) & (xs <= hi + 1e-12)

    def window_sup_gap(self, other):
        """sup over every level's window of |self - other|."""
        gap = 0.0
        ts = self.times()
        for j in range(self.M + 1):
            w = self.window_mask(ts[j])
            if w.any():
                gap = max(gap, float(np.max(np.abs(self.values[j, w]
                                                   - other.values[j, w]))))
        return gap

    def truncation_estimate(self):
        """Crude discretisation error scale from discrete derivatives."""
        v = self.values
        dx = self.xaxis.spacing
        d2x = np.abs(v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]).max() / dx ** 2
        dtt = np.abs(np.diff(v, axis=0)).max() / self.dt if self.M else 0.0
        return dx ** 2 * d2x / 6.0 + 0.5 * self.dt * dtt * self.dt

    def to_csv(self, path, time_stride=None):
        if time_stride is None:
            time_stride = max(1, self.M // 200)
        ts = self.times()
        xs = self.xaxis.nodes()
        with open(path, "w") as fh:
            fh.write("t,x,u\n")
            rows = list(range(0, self.M + 1, time_stride))
            if rows[-1] != self.M:
                rows.append(self.M)
            for j in rows:
                for i in range(self.xaxis.n):
                    fh.write(f"{ts[j]!r},{xs[i]!r},{self.values[j, i]!r}\n")

    def manifest(self):
        return {
            "t0": self.t0, "T": self.T, "steps": self.M,
            "x_lo": self.xaxis.lo, "x_hi": self.xaxis.hi, "nx": self.xaxis.n,
            "ladder_n": self.ladder_n, "cfl_ratio": self.cfl_ratio,
            "boundary_policy": self.boundary_policy,
        }


def evaluate(s: ValueSurface, t, x):
    """Bilinear interpolation inside the reporting window; no extrapolation."""
    if not (s.t0 - 1e-12 <= t <= s.T + 1e-12):
        raise ValueError(f"t={t} outside the surface horizon")
    lo, hi = s.window_bounds(t)
    if not (lo - 1e-12 <= x <= hi + 1e-12):
        raise ValueError(f"x={x} outside the reporting window [{lo:.4g}, {hi:.4g}]")
    tj = (t - s.t0) / s.dt
    j = int(np.floor(min(max(tj, 0.0), s.M - 1e-12))) if s.M else 0
    wt = min(max(tj - j, 0.0), 1.0)
    xi = (x - s.xaxis.lo) / s.xaxis.spacing
    i = int(np.floor(min(max(xi, 0.0), s.xaxis.n - 1 - 1e-12)))
    wx = min(max(xi - i, 0.0), 1.0)
    v = s.values
    return ((1 - wt) * ((1 - wx) * v[j, i] + wx * v[j, i + 1])
            + wt * ((1 - wx) * v[j + 1, i] + wx * v[j + 1, i + 1]))


def solve_pde_level(level: LadderLevel, d: DiffusionSpec,
                    grid: GridConfig) -> ValueSurface:
    """Explicit backward march from phi^n with central differences and
    drift upwinding; linear-continuation boundary (second derivative zero)."""
    dt_max, sg_max = admissible_dt(grid, d, level.n)
    M = _step_count(grid, dt_max)
    dt = (grid.T - grid.t0) / M
    if dt > dt_max * (1 + 1e-12):
        raise ValueError(f"CFL violated: dt={dt} > max admissible {dt_max:.6g}")
    ax = grid.axis()
    xs = ax.nodes()
    u_term = np.asarray(level.phi_eval(xs), dtype=float)
    code, p, pts, vals = level.kernel_args()
    mu_c, mu_p = d.mu_code
    sg_c, sg_p = d.sigma_code
    surf, bad_j, bad_i = K.pde_march(
        u_term, xs, grid.t0, dt, M, mu_c, mu_p, sg_c, sg_p, d.t_offset,
        code, p, pts, vals, float(level.n))
    if bad_j >= 0:
        raise FloatingPointError(f"non-finite value at time level {bad_j}, "
                                 f"node {bad_i}")
    return ValueSurface(grid.t0, grid.T, ax, surf, "linear-continuation",
                        level.n, dt / dt_max, sg_max, grid.window_mult)


@dataclass
class LadderResult:
    surface: ValueSurface
    levels_used: int
    gaps: list
    converged: bool
    max_decrease: float
    surfaces: list = field(default_factory=list)


def solve_ladder(g: GeneratorSpec, phi: TerminalSpec, d: DiffusionSpec,
                 grid: GridConfig, n_max=32, tol=1e-3, dual_spacing=0.25,
                 keep_levels=False) -> LadderResult:
    """Drive u_n upward until the window gap between consecutive levels is
    below tol.  All levels share the time step admissible at n_max so the
    surfaces are comparable node by node.
    """
    if not g.jointly_convex:
        raise ValueError("ladder limit requires a jointly convex generator")
    if not np.isfinite(phi.lower_bound):
        raise ValueError("ladder limit requires a terminal bounded from below")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    dt_max, _ = admissible_dt(grid, d, n_max)
    if grid.dt is None:
        grid = GridConfig(grid.x_lo, grid.x_hi, grid.dx, grid.T, grid.t0,
                          grid.cfl, grid.cfl * dt_max, grid.snap_times,
                          grid.window_mult)
    gaps = []
    surfaces = []
    prev = None
    max_dec = 0.0
    for n in range(1, n_max + 1):
        level = build_gn(g, n, phi, dual_spacing)
        surf = solve_pde_level(level, d, grid)
        if keep_levels:
            surfaces.append(surf)
        if prev is not None:
            dec = float(np.max(prev.values - surf.values, initial=0.0))
            max_dec = max(max_dec, dec)
            if dec > 1e-9:
                raise RuntimeError(
                    f"ladder monotonicity violated by {dec:.3e} at level {n}; "
                    "this indicates an implementation bug")
            gap = prev.window_sup_gap(surf)
            gaps.append(gap)
            if gap <= tol:
                return LadderResult(surf, n, gaps, True, max_dec, surfaces)
        prev = surf
    warnings.warn(f"ladder did not converge within n_max={n_max}; "
                  f"last gap {gaps[-1] if gaps else float('nan')}")
    return LadderResult(prev, n_max, gaps, False, max_dec, surfaces)


@dataclass(frozen=True)
class RegressionConfig:
    degree: int = 3
    ridge: float = 1e-8


@dataclass
class BSDEPathSolution:
    """Per-path Y and Z estimates with the per-time regression coefficients."""

    bundle: PathBundle
    Y: np.ndarray  # (n_paths, N+1)
    Z: np.ndarray  # (n_paths, N)
    coeffs: list
    targets: np.ndarray  # (n_paths, N) pre-projection values Y_{i+1} + dt*g

    def y_at(self, t):
        return self.Y[:, self.bundle.time_index(t)]


def _design(x, degree):
    std = float(np.std(x))
    if std < 1e-12:
        return np.ones((x.shape[0], 1)), (float(np.mean(x)), 1.0)
    s = (x - np.mean(x)) / std
    cols = [np.ones_like(s)]
    for d in range(1, degree + 1):
        cols.append(s ** d)
    return np.stack(cols, axis=1), (float(np.mean(x)), std)


def _project(A, y, ridge):
    n = A.shape[0]
    G = A.T @ A / n + ridge * np.eye(A.shape[1])
    b = A.T @ y / n
    try:
        theta = np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        raise ValueError("singular regression design; try more paths") from None
    if not np.all(np.isfinite(theta)):
        raise ValueError("singular regression design; try more paths")
    return theta


def solve_bsde_mc(level: LadderLevel, phi: TerminalSpec, bundle: PathBundle,
                  reg: RegressionConfig = RegressionConfig(),
                  cell_masks=None) -> BSDEPathSolution:
    """Backward induction with least-squares conditional expectations.

    Y_i = E[Y_{i+1} | X_i] + dt g^n(X_i, Y_i, Z_i),
    Z_i = E[Y_{i+1} dW_i | X_i] / dt; the implicit y is resolved by fixed
    point (contraction requires n dt < 1).  cell_masks fits the regressions
    separately on each cell (needed when the bundle mixes dynamics).
    """
    dt = bundle.dt
    n = level.n
    if n * dt >= 1.0:
        raise ValueError(f"implicit step not contractive: n*dt = {n * dt:.3g} >= 1")
    phi_n = phi.truncated(n) if phi.cap is None or phi.cap > n else phi
    npaths, N = bundle.dW.shape
    if cell_masks is None:
        cells = [np.ones(npaths, dtype=bool)]
    else:
        cells = [np.asarray(m, dtype=bool) for m in cell_masks if m.any()]
    Y = np.empty((npaths, N + 1))
    Z = np.empty((npaths, N))
    targets = np.empty((npaths, N))
    Y[:, N] = phi_n.eval(bundle.paths[:, N])
    coeffs = []
    code, p0, pts, vals = level.kernel_args()
    for i in range(N - 1, -1, -1):
        x = bundle.paths[:, i]
        yn = Y[:, i + 1]
        c_i = []
        cond = np.empty(npaths)
        zed = np.empty(npaths)
        for m in cells:
            A, _ = _design(x[m], reg.degree)
            th_y = _project(A, yn[m], reg.ridge)
            th_z = _project(A, yn[m] * bundle.dW[m, i] / dt, reg.ridge)
            cond[m] = A @ th_y
            zed[m] = A @ th_z
            c_i.append((th_y, th_z))
        y = cond.copy()
        for _ in range(50):
            y_new = cond + dt * K.gn_eval(code, p0, pts, vals, x, y, zed, n)
            delta = float(np.max(np.abs(y_new - y)))
            if delta <= 1e-13 * (1.0 + float(np.max(np.abs(y_new)))):
                y = y_new
                break
            if delta > 1e6:
                y = y + 0.5 * (y_new - y)  # damp on drift away
            else:
                y = y_new
        Y[:, i] = y
        Z[:, i] = zed
        targets[:, i] = yn + dt * K.gn_eval(code, p0, pts, vals, x, y, zed, n)
        coeffs.append(c_i)
    coeffs.reverse()
    return BSDEPathSolution(bundle, Y, Z, coeffs, targets)


def write_surface_manifest(path, surface: ValueSurface, extra=None):
    m = surface.manifest()
    if extra:
        m.update(extra)
    with open(path, "w") as fh:
        json.dump(m, fh, sort_keys=True, indent=2)
        fh.write("\n")
