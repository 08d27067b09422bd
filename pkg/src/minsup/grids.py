"""Regular 1D/2D grids carrying extended-real sampled functions.

Values are float64 with ``np.inf`` as the sentinel for +infinity.  Piecewise
linear interpolation is defined on fully finite cells; a cell touching a
sentinel is infinite off its finite face.
"""

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["Axis", "GridFunction", "EpiSequence"]


@dataclass(frozen=True)
class Axis:
    """Uniform axis with inclusive bounds and n nodes."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"axis needs at least 3 nodes, got {self.n}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo:
            raise ValueError(f"bad axis bounds [{self.lo}, {self.hi}]")

    @property
    def spacing(self):
        return (self.hi - self.lo) / (self.n - 1)

    def nodes(self):
        return np.linspace(self.lo, self.hi, self.n)

    def index_of(self, x, tol=1e-9):
        """Index of the node equal to x within tol, or raise."""
        i = int(round((x - self.lo) / self.spacing))
        if i < 0 or i >= self.n or abs(self.lo + i * self.spacing - x) > tol:
            raise ValueError(f"{x} is not a node of {self}")
        return i


def symmetric_axis(radius, spacing):
    n = 2 * int(round(radius / spacing)) + 1
    r = (n - 1) // 2 * spacing
    return Axis(-r, r, n)


@dataclass
class GridFunction:
    """Extended-real function sampled on a 1D or 2D uniform grid."""

    axes: tuple
    values: np.ndarray
    is_convex: bool = False
    is_lsc: bool = False
    saturated: np.ndarray | None = None

    def __post_init__(self):
        self.axes = tuple(self.axes)
        if len(self.axes) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        self.values = np.asarray(self.values, dtype=float)
        want = tuple(a.n for a in self.axes)
        if self.values.shape != want:
            raise ValueError(f"value shape {self.values.shape} != grid {want}")
        if np.isneginf(self.values).any() or np.isnan(self.values).any():
            raise ValueError("values must be finite or +inf")

    # -- basic queries ------------------------------------------------------

    @property
    def ndim(self):
        return len(self.axes)

    def nodes(self, axis=0):
        return self.axes[axis].nodes()

    def finite_mask(self):
        return np.isfinite(self.values)

    def is_proper(self):
        return bool(self.finite_mask().any())

    def require_proper(self, what="function"):
        if not self.is_proper():
            raise ValueError(f"improper {what}: no finite values")

    def node_points(self):
        """All grid nodes as an (N, ndim) array in C order."""
        if self.ndim == 1:
            return self.nodes()[:, None]
        g0, g1 = np.meshgrid(self.nodes(0), self.nodes(1), indexing="ij")
        return np.stack([g0.ravel(), g1.ravel()], axis=1)

    def interior_node_mask(self):
        """Flat mask of nodes not on the grid box edge."""
        if self.ndim == 1:
            m = np.zeros(self.axes[0].n, dtype=bool)
            m[1:-1] = True
            return m
        m = np.zeros(tuple(a.n for a in self.axes), dtype=bool)
        m[1:-1, 1:-1] = True
        return m.ravel()

    def eps_grid(self):
        """Grid modulus: sum over axes of (max finite |slope|) * spacing."""
        eps = 0.0
        v = self.values
        for ax in range(self.ndim):
            d = np.diff(v, axis=ax)
            d = d[np.isfinite(d)]
            slope = np.max(np.abs(d)) / self.axes[ax].spacing if d.size else 0.0
            eps += slope * self.axes[ax].spacing
        return eps

    # -- interpolation ------------------------------------------------------

    def interp(self, point):
        """PL interpolation at a point; +inf when the cell touches a sentinel
        (unless the point sits exactly on a finite node)."""
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        idx = []
        wts = []
        for c, ax in enumerate(self.axes):
            s = (pt[c] - ax.lo) / ax.spacing
            if s < -1e-12 or s > ax.n - 1 + 1e-12:
                raise ValueError(f"point {point} outside grid box")
            i = int(np.floor(min(max(s, 0.0), ax.n - 1 - 1e-12)))
            idx.append(i)
            wts.append(min(max(s - i, 0.0), 1.0))
        if self.ndim == 1:
            i, w = idx[0], wts[0]
            v0, v1 = self.values[i], self.values[i + 1]
            if np.isfinite(v0) and np.isfinite(v1):
                return v0 * (1 - w) + v1 * w
            if w <= 1e-12 and np.isfinite(v0):
                return float(v0)
            if w >= 1 - 1e-12 and np.isfinite(v1):
                return float(v1)
            return np.inf
        (i, j), (wi, wj) = idx, wts
        cell = self.values[i:i + 2, j:j + 2]
        if np.isfinite(cell).all():
            return (cell[0, 0] * (1 - wi) * (1 - wj) + cell[1, 0] * wi * (1 - wj)
                    + cell[0, 1] * (1 - wi) * wj + cell[1, 1] * wi * wj)
        ii = int(round(wi))
        jj = int(round(wj))
        on_node = abs(wi - ii) <= 1e-12 and abs(wj - jj) <= 1e-12
        if on_node and np.isfinite(cell[ii, jj]):
            return float(cell[ii, jj])
        return np.inf

    # -- convexity ----------------------------------------------------------

    def discretely_convex(self, tol=None):
        """Second-difference test (1D) or lower-hull distance test (2D)."""
        if tol is None:
            tol = max(1e-12, self.eps_grid())
        v = self.values
        if self.ndim == 1:
            fin = np.isfinite(v)
            # finite support must be contiguous for a convex sample
            idx = np.flatnonzero(fin)
            if idx.size == 0:
                return False
            if not fin[idx[0]:idx[-1] + 1].all():
                return False
            sec = v[:-2] + v[2:] - 2 * v[1:-1]
            sec = sec[np.isfinite(sec)]
            return bool((sec >= -tol).all()) if sec.size else True
        from .convex import convexify  # local import to avoid a cycle

        hull = convexify(self)
        vfin = np.isfinite(v)
        if (np.isfinite(hull.values) & ~vfin).any():
            return False  # +inf hole inside the finite hull
        return bool(np.max(np.abs(v[vfin] - hull.values[vfin]), initial=0.0) <= tol)

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_callable(cls, axes, fn, **flags):
        axes = tuple(axes)
        if len(axes) == 1:
            vals = np.asarray(fn(axes[0].nodes()), dtype=float)
        else:
            g0, g1 = np.meshgrid(axes[0].nodes(), axes[1].nodes(), indexing="ij")
            vals = np.asarray(fn(g0, g1), dtype=float)
        return cls(axes, vals, **flags)

    def with_values(self, values, **flags):
        out = replace(self, values=np.asarray(values, dtype=float))
        for k, v in flags.items():
            setattr(out, k, v)
        return out

    # -- CSV serialisation ---------------------------------------------------

    def to_csv(self, path):
        """Write `axis0[,axis1],value` rows; inf spelled literally."""
        cols = ["axis0"] + (["axis1"] if self.ndim == 2 else []) + ["value"]
        pts = self.node_points()
        flat = self.values.ravel()
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row, v in zip(pts, flat):
                coord = ",".join(repr(float(c)) for c in row)
                sval = "inf" if np.isinf(v) else repr(float(v))
                fh.write(f"{coord},{sval}\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        ndim = len(header) - 1
        if ndim not in (1, 2):
            raise ValueError(f"bad CSV header {header}")
        data = np.array([[np.inf if c == "inf" else float(c) for c in r]
                         for r in rows])
        if ndim == 1:
            xs = data[:, 0]
            ax = Axis(float(xs[0]), float(xs[-1]), len(xs))
            return cls((ax,), data[:, 1])
        n1 = int(np.flatnonzero(data[:, 0] != data[0, 0])[0])
        n0 = len(rows) // n1
        ax0 = Axis(float(data[0, 0]), float(data[-1, 0]), n0)
        ax1 = Axis(float(data[0, 1]), float(data[n1 - 1, 1]), n1)
        return cls((ax0, ax1), data[:, 2].reshape(n0, n1))


@dataclass
class EpiSequence:
    """Finite stand-in for a function sequence on a common grid.

    ``tail_k`` selects how many trailing members form the tail that
    represents n -> infinity (default: the whole list).
    """

    members: list = field(default_factory=list)
    tail_k: int | None = None

    def __post_init__(self):
        if not self.members:
            raise ValueError("empty sequence")
        ax0 = self.members[0].axes
        for m in self.members[1:]:
            if m.axes != ax0:
                raise ValueError("members must share identical axes")
        if self.tail_k is not None and not (1 <= self.tail_k <= len(self.members)):
            raise ValueError("tail_k out of range")

    @property
    def axes(self):
        return self.members[0].axes

    def tail_members(self):
        k = self.tail_k or len(self.members)
        return self.members[len(self.members) - k:]
