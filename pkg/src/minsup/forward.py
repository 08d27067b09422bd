"""Forward diffusion simulation, time shifts, concatenation and step maps.

Paths are driven by counter-based Philox streams: the increments of path i
are row i of a master uniform matrix, so they do not depend on how many
paths are simulated, and a restart can resume the stream mid-grid (the flow
property holds path by path, exactly).
"""

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from . import _kernels as K

__all__ = ["DiffusionSpec", "PathBundle", "Partition", "simulate",
           "shifted_diffusion", "concatenate", "step_approximation",
           "DIFFUSION_COEFFS", "make_diffusion"]

DIFFUSION_COEFFS = {
    "zero": (K.COEFF_ZERO, 0.0),
    "const": (K.COEFF_CONST, None),
    "linear": (K.COEFF_LINEAR, None),
    "time-ramp": (K.COEFF_TIME_RAMP, None),
}


@dataclass(frozen=True)
class DiffusionSpec:
    """Drift and diffusion coefficients with declared growth constants."""

    mu_name: str
    mu_param: float
    sigma_name: str
    sigma_param: float
    lipschitz: float
    growth: float
    t_offset: float = 0.0

    def _codes(self, name, param):
        code, default = DIFFUSION_COEFFS[name]
        return code, float(param if param is not None else (default or 0.0))

    @property
    def mu_code(self):
        return self._codes(self.mu_name, self.mu_param)

    @property
    def sigma_code(self):
        return self._codes(self.sigma_name, self.sigma_param)

    def mu(self, t, x):
        code, p = self.mu_code
        return K.coeff_eval_np(code, p, t + self.t_offset, x)

    def sigma(self, t, x):
        code, p = self.sigma_code
        return K.coeff_eval_np(code, p, t + self.t_offset, x)

    def bounds_on(self, ts, xs):
        """(max |mu|, max sigma) over a time/space probe product."""
        mm = ss = 0.0
        for t in np.atleast_1d(ts):
            mm = max(mm, float(np.max(np.abs(self.mu(t, xs)))))
            ss = max(ss, float(np.max(np.abs(self.sigma(t, xs)))))
        return mm, ss


def make_diffusion(mu_name, mu_param, sigma_name, sigma_param,
                   lipschitz=None, growth=None, t_offset=0.0):
    for name in (mu_name, sigma_name):
        if name not in DIFFUSION_COEFFS:
            raise ValueError(f"unknown coefficient {name!r}; registry: "
                             f"{sorted(DIFFUSION_COEFFS)}")
    if lipschitz is None:
        lipschitz = max(abs(mu_param or 0.0), abs(sigma_param or 0.0), 0.0)
        if "linear" not in (mu_name, sigma_name):
            lipschitz = 0.0
    if growth is None:
        growth = max(abs(mu_param or 0.0), abs(sigma_param or 0.0), 1.0)
    return DiffusionSpec(mu_name, mu_param, sigma_name, sigma_param,
                         float(lipschitz), float(growth), float(t_offset))


def shifted_diffusion(d: DiffusionSpec, t, horizon=None) -> DiffusionSpec:
    """Coefficients u -> (mu_{t+u}, sigma_{t+u}); constants unchanged."""
    if horizon is not None and t > horizon:
        raise ValueError(f"shift {t} beyond the horizon {horizon}")
    if t < 0:
        raise ValueError("shift must be non-negative")
    return replace(d, t_offset=d.t_offset + float(t))


@dataclass
class PathBundle:
    """Seeded ensemble of Euler paths on a shared uniform time grid."""

    t0: float
    T: float
    N: int
    paths: np.ndarray  # (n_paths, N+1)
    dW: np.ndarray  # (n_paths, N)
    seed: int
    stream: int
    master_steps: int
    step_offset: int

    @property
    def n_paths(self):
        return self.paths.shape[0]

    @property
    def dt(self):
        return (self.T - self.t0) / self.N

    def times(self):
        return np.linspace(self.t0, self.T, self.N + 1)

    def time_index(self, t, tol=1e-9):
        s = (t - self.t0) / self.dt
        i = int(round(s))
        if i < 0 or i > self.N or abs(s - i) > tol:
            raise ValueError(f"{t} is not on the bundle time grid")
        return i

    def to_csv(self, path, path_stride=1, time_stride=1):
        ts = self.times()
        with open(path, "w") as fh:
            fh.write("path_id,t,x\n")
            for p in range(0, self.n_paths, path_stride):
                for j in range(0, self.N + 1, time_stride):
                    fh.write(f"{p},{ts[j]!r},{self.paths[p, j]!r}\n")

    def manifest(self):
        m = self.paths.mean(axis=0)
        v = self.paths.var(axis=0)
        return {
            "seed": self.seed,
            "stream": self.stream,
            "t0": self.t0,
            "T": self.T,
            "steps": self.N,
            "n_paths": int(self.n_paths),
            "master_steps": self.master_steps,
            "step_offset": self.step_offset,
            "terminal_mean": float(m[-1]),
            "terminal_var": float(v[-1]),
            "increment_var": float(self.dW.var()),
        }


def _philox_key(seed, stream):
    ss = np.random.SeedSequence((int(seed), int(stream)))
    return np.random.Philox(key=ss.generate_state(2, dtype=np.uint64))


def brownian_increments(seed, stream, n_paths, master_steps, dt):
    """Counter-addressed N(0, dt) increments, (n_paths, master_steps)."""
    gen = np.random.Generator(_philox_key(seed, stream))
    u = gen.random((n_paths, master_steps))
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return ndtri(u) * np.sqrt(dt)


def simulate(d: DiffusionSpec, x0, t0, T, N, n_paths, seed, stream=0,
             master_steps=None, step_offset=0) -> PathBundle:
    """Euler iterates X_{i+1} = X_i + mu dt + sigma dW_i.

    master_steps/step_offset address a window of the per-path streams so a
    run can be split at a grid node and resumed exactly.
    """
    if T <= t0:
        raise ValueError("need T > t0")
    if N < 1 or n_paths < 1:
        raise ValueError("need N >= 1 and n_paths >= 1")
    if master_steps is None:
        master_steps = N + step_offset
    if master_steps < N + step_offset:
        raise ValueError("master_steps too small for the requested window")
    dt = (T - t0) / N
    dw_all = brownian_increments(seed, stream, n_paths, master_steps, dt)
    dw = np.ascontiguousarray(dw_all[:, step_offset:step_offset + N])
    x0s = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,)).copy()
    mu_c, mu_p = d.mu_code
    sg_c, sg_p = d.sigma_code
    paths, bad = K.euler_paths(x0s, dw, float(t0), float(dt),
                               mu_c, mu_p, sg_c, sg_p, float(d.t_offset))
    if bad >= 0:
        raise FloatingPointError(
            f"non-finite state at step {bad}: growth violation or dt too large")
    return PathBundle(float(t0), float(T), int(N), paths, dw,
                      int(seed), int(stream), int(master_steps), int(step_offset))


def concatenate(a: PathBundle, b: PathBundle, t, mask) -> PathBundle:
    """Masked paths keep a; unmasked follow a up to t, then paste b's
    increments: a_t + (b_u - b_t).  Continuous at t by construction."""
    if (a.t0, a.T, a.N) != (b.t0, b.T, b.N):
        raise ValueError("bundles must share the time grid")
    if a.n_paths != b.n_paths:
        raise ValueError("bundles must have the same number of paths")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (a.n_paths,):
        raise ValueError("mask length must equal n_paths")
    it = a.time_index(t)
    paths = a.paths.copy()
    keep = ~mask
    paste = a.paths[keep, it][:, None] + (b.paths[keep, it:]
                                          - b.paths[keep, it][:, None])
    paths[keep, it:] = paste
    dw = a.dW.copy()
    dw[keep, it:] = b.dW[keep, it:]
    return PathBundle(a.t0, a.T, a.N, paths, dw, a.seed, a.stream,
                      a.master_steps, a.step_offset)


@dataclass
class Partition:
    """Disjoint exhaustive event masks with one level value per cell."""

    levels: np.ndarray  # (L,) distinct
    masks: np.ndarray  # (L, n_paths) bool

    def __post_init__(self):
        cover = self.masks.sum(axis=0)
        if not np.all(cover == 1):
            raise ValueError("masks must be disjoint and cover all paths")
        if len(np.unique(self.levels)) != len(self.levels):
            raise ValueError("levels must be distinct")
        if not np.all(np.isfinite(self.levels)):
            raise ValueError("levels must be finite")

    def apply(self):
        """The step-function values, one per path."""
        return self.levels @ self.masks


def step_approximation(values, delta, direction="below") -> Partition:
    """Quantise values onto the delta lattice and group equal levels."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if delta <= 0:
        raise ValueError("level spacing must be positive")
    if direction == "below":
        q = delta * np.floor(v / delta)
    elif direction == "nearest":
        q = delta * np.round(v / delta)
    else:
        raise ValueError("direction must be 'below' or 'nearest'")
    levels = np.unique(q)
    masks = q[None, :] == levels[:, None]
    return Partition(levels, masks)


def write_bundle_manifest(path, bundle: PathBundle):
    with open(path, "w") as fh:
        json.dump(bundle.manifest(), fh, sort_keys=True, indent=2)
        fh.write("\n")
