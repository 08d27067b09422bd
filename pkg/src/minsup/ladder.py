"""Lipschitz approximation ladder built from truncated convex conjugation.

Level n evaluates sup over the dual box |a| v |b| v |c| <= n of
a*x + b*y + c*z - g*(a,b,c).  Registry generators use exact conjugates;
grid-backed generators use a brute-force conjugate table.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .generators import GeneratorSpec, TerminalSpec

__all__ = ["LadderLevel", "ConjugateTable", "conjugate_full", "build_gn",
           "truncate_terminal", "verify_monotone_ladder", "ladder_manifest"]


@dataclass
class ConjugateTable:
    """g*(a, b, c) sampled on the dual box, with saturation flags."""

    radius: float
    points: np.ndarray  # (K, 3)
    values: np.ndarray  # (K,)
    saturated: np.ndarray  # (K,) bool
    spacing: float

    def usable(self):
        """Finite, unsaturated rows; the sup in the level evaluator runs
        over these only (box-edge rows are artifacts)."""
        keep = ~self.saturated & np.isfinite(self.values)
        return self.points[keep], self.values[keep]


def conjugate_full(g: GeneratorSpec, n, dual_spacing) -> ConjugateTable:
    """Brute-force conjugate table over the dual box of radius n."""
    if not g.jointly_convex:
        raise ValueError("ladder requires jointly convex generator")
    if n < 1:
        raise ValueError("dual box radius must be >= 1")
    if g.grid is None:
        raise ValueError("conjugate_full needs a grid-backed generator; "
                         "registry generators carry closed-form conjugates")
    steps = int(round(n / dual_spacing))
    side = np.linspace(-steps * dual_spacing, steps * dual_spacing, 2 * steps + 1)
    A, B, C = np.meshgrid(side, side, side, indexing="ij")
    duals = np.stack([A.ravel(), B.ravel(), C.ravel()], axis=1)
    nodes = g.grid.node_points()
    flat = g.grid.values.ravel()
    fin = np.isfinite(flat)
    vals, sat = K.conjugate(duals, nodes[fin], flat[fin],
                            g.grid.interior_node_mask()[fin])
    if sat.any():
        warnings.warn(f"{int(sat.sum())} dual cells saturated at the primal "
                      "box edge; they are excluded from the level evaluator")
    return ConjugateTable(float(n), duals, vals, sat, dual_spacing)


@dataclass
class LadderLevel:
    """Level-n Lipschitz shadow of a generator plus its truncated terminal."""

    n: float
    generator: GeneratorSpec
    phi: TerminalSpec | None = None
    table: ConjugateTable | None = None
    _pts: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    _vals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("ladder level index must be >= 1")
        if self.table is not None:
            self._pts, self._vals = self.table.usable()

    @property
    def lipschitz_bound(self):
        return float(self.n)

    def kernel_args(self):
        """(code, param, dual_pts, dual_vals) consumed by the kernels."""
        return (self.generator.code, float(self.generator.param),
                np.ascontiguousarray(self._pts), np.ascontiguousarray(self._vals))

    def eval(self, x, y, z):
        code, p, pts, vals = self.kernel_args()
        return K.gn_eval(code, p, pts, vals, x, y, z, float(self.n))

    def phi_eval(self, x):
        return self.phi.eval(x)

    @classmethod
    def from_callable(cls, fn_spec: GeneratorSpec, n, phi=None):
        """Wrap a registry generator directly as a Lipschitz level (used for
        generators like linear-y that are their own level)."""
        return cls(n=float(n), generator=fn_spec, phi=phi)


def build_gn(g: GeneratorSpec, n, phi: TerminalSpec | None = None,
             dual_spacing=0.25) -> LadderLevel:
    """Level-n evaluator; the terminal is truncated alongside."""
    if n < 1:
        raise ValueError("ladder level index must be >= 1")
    if not g.jointly_convex:
        raise ValueError("ladder requires jointly convex generator")
    phi_n = phi.truncated(n) if phi is not None else None
    if g.has_closed_conjugate:
        return LadderLevel(n=float(n), generator=g, phi=phi_n)
    table = conjugate_full(g, n, dual_spacing)
    return LadderLevel(n=float(n), generator=g, phi=phi_n, table=table)


def truncate_terminal(phi: TerminalSpec, n) -> TerminalSpec:
    """Pointwise minimum with n; keeps lsc and the lower bound."""
    return phi.truncated(n)


def verify_monotone_ladder(levels, probe_points):
    """Max violations of g^n <= g^{n+1} <= g on shared probe points."""
    if not levels:
        raise ValueError("need at least one level")
    x, y, z = (np.asarray(a, dtype=float) for a in probe_points)
    if not (x.shape == y.shape == z.shape):
        raise ValueError("mismatched probe grids")
    g = levels[0].generator
    for lv in levels:
        if lv.generator is not g and lv.generator.name != g.name:
            raise ValueError("levels must share one generator")
    vals = [lv.eval(x, y, z) for lv in levels]
    gv = g.eval(x, y, z)
    step_viol = 0.0
    for a, b in zip(vals, vals[1:]):
        step_viol = max(step_viol, float(np.max(a - b, initial=0.0)))
    cap_viol = 0.0
    for v in vals:
        fin = np.isfinite(gv)
        cap_viol = max(cap_viol, float(np.max((v - gv)[fin], initial=0.0)))
    return {
        "n_levels": len(levels),
        "max_step_violation": step_viol,
        "max_cap_violation": cap_viol,
        "indices": [lv.n for lv in levels],
    }


def ladder_manifest(g: GeneratorSpec, levels, report, dual_spacing=None):
    return {
        "generator": g.name,
        "n_levels": len(levels),
        "dual_spacing": dual_spacing,
        "lipschitz_bounds": [lv.lipschitz_bound for lv in levels],
        "max_monotonicity_violation": report["max_step_violation"],
    }


def write_ladder_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
