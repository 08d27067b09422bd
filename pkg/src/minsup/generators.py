"""Generator and terminal-condition descriptors with a closed-form registry.

Registry generators carry exact conjugates so ladder levels can bypass grid
conjugation; grid-backed generators go through the brute-force table route.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K

__all__ = ["GeneratorSpec", "TerminalSpec", "GENERATORS", "TERMINALS",
           "make_generator", "make_terminal"]


@dataclass
class GeneratorSpec:
    """Descriptor of g(x, y, z) plus declared structure flags."""

    name: str
    code: int
    param: float = 0.0
    positive: bool = True
    convex_in_z: bool = True
    monotone_in_y: str | None = None  # "+", "-", or None
    jointly_convex: bool = False
    separable: tuple | None = None  # (g1(x), g2(y, z)) callables
    has_closed_conjugate: bool = True
    grid: object = None  # 3D table for grid-backed generators
    known_rec: bool = False

    def eval(self, x, y, z):
        """g at (x, y, z); arguments broadcast together."""
        x, y, z = np.broadcast_arrays(np.asarray(x, float),
                                      np.asarray(y, float),
                                      np.asarray(z, float))
        if self.code == K.GEN_ZERO:
            return np.zeros_like(z)
        if self.code == K.GEN_ENTROPIC:
            return 0.5 * z * z
        if self.code == K.GEN_QUAD_Z:
            return self.param * z * z
        if self.code == K.GEN_ABS_Z:
            return np.abs(z)
        if self.code == K.GEN_SEPARABLE:
            return x * x + 0.5 * z * z
        if self.code == K.GEN_LINEAR_Y:
            return y.copy()
        return self.grid.eval(x, y, z)

    def lipschitz_y_bound(self, n):
        """Bound on the y-slope of the level-n shadow (n always works)."""
        if self.code in (K.GEN_ZERO, K.GEN_ENTROPIC, K.GEN_QUAD_Z,
                         K.GEN_ABS_Z, K.GEN_SEPARABLE):
            return 0.0
        if self.code == K.GEN_LINEAR_Y:
            return 1.0
        return float(n)


@dataclass
class GeneratorGrid:
    """Plain 3D sample table over (x, y, z); trilinear evaluation."""

    axes: tuple  # three Axis objects
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = tuple(a.n for a in self.axes)
        if self.values.shape != want:
            raise ValueError(f"value shape {self.values.shape} != grid {want}")

    def node_points(self):
        g = np.meshgrid(*(a.nodes() for a in self.axes), indexing="ij")
        return np.stack([c.ravel() for c in g], axis=1)

    def interior_node_mask(self):
        m = np.zeros(tuple(a.n for a in self.axes), dtype=bool)
        m[1:-1, 1:-1, 1:-1] = True
        return m.ravel()

    def eval(self, x, y, z):
        pts = (x, y, z)
        idx, wts = [], []
        for c, ax in enumerate(self.axes):
            s = (np.asarray(pts[c], float) - ax.lo) / ax.spacing
            s = np.clip(s, 0.0, ax.n - 1 - 1e-12)
            i = np.floor(s).astype(int)
            idx.append(i)
            wts.append(s - i)
        v = 0.0
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = ((wts[0] if dx else 1 - wts[0])
                         * (wts[1] if dy else 1 - wts[1])
                         * (wts[2] if dz else 1 - wts[2]))
                    v = v + w * self.values[idx[0] + dx, idx[1] + dy, idx[2] + dz]
        return v


def _zero_fn(x):
    return np.zeros_like(np.asarray(x, dtype=float))


GENERATORS = {
    "zero": dict(code=K.GEN_ZERO, jointly_convex=True, monotone_in_y="+",
                 separable=(_zero_fn, lambda y, z: np.zeros_like(y + z)),
                 known_rec=True),
    "entropic": dict(code=K.GEN_ENTROPIC, jointly_convex=True, monotone_in_y="+",
                     separable=(_zero_fn, lambda y, z: 0.5 * z * z),
                     known_rec=True),
    "quad-z": dict(code=K.GEN_QUAD_Z, jointly_convex=True, monotone_in_y="+",
                   separable=None, known_rec=True),
    "abs-z": dict(code=K.GEN_ABS_Z, jointly_convex=True, monotone_in_y="+",
                  separable=(_zero_fn, lambda y, z: np.abs(z)), known_rec=True),
    "separable": dict(code=K.GEN_SEPARABLE, jointly_convex=True, monotone_in_y="+",
                      separable=(lambda x: np.asarray(x, float) ** 2,
                                 lambda y, z: 0.5 * z * z),
                      known_rec=True),
    "linear-y": dict(code=K.GEN_LINEAR_Y, positive=False, jointly_convex=True,
                     monotone_in_y="+", separable=None, known_rec=False),
}


def make_generator(name, param=None, grid=None, **flag_overrides):
    """Build a GeneratorSpec from the registry or a 3D grid table."""
    if name == "grid":
        if grid is None:
            raise ValueError("grid generator needs a table")
        spec = GeneratorSpec(name="grid", code=K.GEN_TABLE, grid=grid,
                             has_closed_conjugate=False, jointly_convex=False,
                             known_rec=False)
    elif name in GENERATORS:
        cfg = dict(GENERATORS[name])
        if name == "quad-z":
            c = 1.0 if param is None else float(param)
            if c <= 0:
                raise ValueError("quad-z needs a positive coefficient")
            cfg["separable"] = (_zero_fn, lambda y, z, c=c: c * z * z)
            spec = GeneratorSpec(name=name, param=c, **cfg)
        else:
            spec = GeneratorSpec(name=name, **cfg)
    else:
        raise ValueError(
            f"unknown generator {name!r}; registry: "
            f"{sorted(GENERATORS) + ['grid']}")
    for k, v in flag_overrides.items():
        setattr(spec, k, v)
    return spec


@dataclass
class TerminalSpec:
    """Terminal function phi with its declared lower bound."""

    name: str
    fn: object
    lower_bound: float
    param: float = 0.0
    cap: float | None = None  # min(phi, cap) when set

    def eval(self, x):
        v = self.fn(np.asarray(x, dtype=float))
        if self.cap is not None:
            v = np.minimum(v, self.cap)
        return v

    def truncated(self, n):
        c = float(n) if self.cap is None else min(self.cap, float(n))
        return TerminalSpec(self.name, self.fn, self.lower_bound, self.param, c)


TERMINALS = {
    "linear": (lambda x: x.copy(), -np.inf),
    "quadratic": (lambda x: x * x, 0.0),
    "tanh": (np.tanh, -1.0),
    "relu": (lambda x: np.maximum(x, 0.0), 0.0),
    "const": (None, None),  # parametrised below
    "abs": (np.abs, 0.0),
}


def make_terminal(name, param=0.0):
    if name == "const":
        c = float(param)
        return TerminalSpec(name, lambda x, c=c: np.full_like(x, c), c, c)
    if name not in TERMINALS:
        raise ValueError(f"unknown terminal {name!r}; registry: {sorted(TERMINALS)}")
    fn, bound = TERMINALS[name]
    return TerminalSpec(name, fn, bound, float(param))
