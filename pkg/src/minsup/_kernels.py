"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time: numba is used when it imports
cleanly and the environment variable ``MINSUP_NUMBA`` is not set to ``"0"``.
Both implementations of every kernel are kept importable (``*_np`` / ``*_nb``)
so the benchmark suite can compare them directly.

Coefficient and generator closed forms are dispatched by small integer codes
so the jitted loops stay free of Python objects:

    coefficient codes: 0 zero, 1 constant c, 2 linear a*x, 3 time ramp c*t
    generator codes:   0 zero, 1 z^2/2, 2 c*z^2, 3 |z|, 4 x^2 + z^2/2,
                       5 conjugate table, 6 linear y
"""

import os

import numpy as np

try:
    import numba
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and os.environ.get("MINSUP_NUMBA", "1") != "0"

COEFF_ZERO, COEFF_CONST, COEFF_LINEAR, COEFF_TIME_RAMP = 0, 1, 2, 3
GEN_ZERO, GEN_ENTROPIC, GEN_QUAD_Z, GEN_ABS_Z, GEN_SEPARABLE = 0, 1, 2, 3, 4
GEN_TABLE, GEN_LINEAR_Y = 5, 6

_EMPTY_PTS = np.zeros((0, 3))
_EMPTY_VALS = np.zeros(0)


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# scalar helpers (plain python; numba compiles them when called from kernels)
# ---------------------------------------------------------------------------

def _coeff_scalar(code, p0, t, x):
    if code == 0:
        return 0.0
    elif code == 1:
        return p0
    elif code == 2:
        return p0 * x
    else:
        return p0 * t


def _huber_scalar(v, n, a):
    # sup_{|g|<=n} g*v - g^2/(4a), the Lipschitz-n shadow of a*v^2
    if abs(2.0 * a * v) <= n:
        return a * v * v
    return n * abs(v) - n * n / (4.0 * a)


def _gn_scalar(code, p0, pts, vals, x, y, z, n):
    if code == 0:
        return 0.0
    elif code == 1:
        return _huber_scalar(z, n, 0.5)
    elif code == 2:
        return _huber_scalar(z, n, p0)
    elif code == 3:
        return min(n, 1.0) * abs(z)
    elif code == 4:
        return _huber_scalar(x, n, 1.0) + _huber_scalar(z, n, 0.5)
    elif code == 6:
        return y
    best = -1e300
    for k in range(pts.shape[0]):
        s = pts[k, 0] * x + pts[k, 1] * y + pts[k, 2] * z - vals[k]
        if s > best:
            best = s
    return best


# ---------------------------------------------------------------------------
# numpy (vectorised) kernels
# ---------------------------------------------------------------------------

def coeff_eval_np(code, p0, t, x):
    """Vectorised coefficient evaluation; broadcasts over x."""
    x = np.asarray(x, dtype=float)
    if code == COEFF_ZERO:
        return np.zeros_like(x)
    if code == COEFF_CONST:
        return np.full_like(x, p0)
    if code == COEFF_LINEAR:
        return p0 * x
    return np.full_like(x, p0 * t)


def huber_np(v, n, a):
    v = np.asarray(v, dtype=float)
    return np.where(np.abs(2.0 * a * v) <= n, a * v * v,
                    n * np.abs(v) - n * n / (4.0 * a))


def gn_eval_np(code, p0, pts, vals, x, y, z, n):
    """Vectorised level-n generator; x, y, z broadcast together."""
    x, y, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float),
                                  np.asarray(z, float))
    if code == GEN_ZERO:
        return np.zeros_like(z)
    if code == GEN_ENTROPIC:
        return huber_np(z, n, 0.5)
    if code == GEN_QUAD_Z:
        return huber_np(z, n, p0)
    if code == GEN_ABS_Z:
        return min(n, 1.0) * np.abs(z)
    if code == GEN_SEPARABLE:
        return huber_np(x, n, 1.0) + huber_np(z, n, 0.5)
    if code == GEN_LINEAR_Y:
        return y.copy()
    flat = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    out = np.empty(flat.shape[0])
    step = max(1, int(4e6 // max(1, pts.shape[0])))
    for s in range(0, flat.shape[0], step):
        blk = flat[s:s + step]
        out[s:s + step] = np.max(blk @ pts.T - vals, axis=1)
    return out.reshape(x.shape)


def conjugate_np(duals, nodes, values, interior):
    """Brute-force conjugate sup_i <p, x_i> - f(x_i) over finite nodes.

    duals: (M, d); nodes: (N, d) finite nodes; values: (N,); interior: (N,)
    bool mask of nodes not on the primal box edge.  Returns (out, saturated).
    """
    scores = duals @ nodes.T - values  # (M, N)
    out = scores.max(axis=1)
    if interior.any():
        best_int = scores[:, interior].max(axis=1)
    else:
        best_int = np.full(out.shape, -np.inf)
    sat = out > best_int
    return out, sat


def pde_march_np(u_term, x, t0, dt, M,
                 mu_code, mu_p, sg_code, sg_p, toff,
                 gen_code, gen_p, pts, vals, n_level,
                 fp_maxit=50, fp_tol=1e-13):
    """Explicit monotone backward march; returns (surf, bad_j, bad_i).

    surf[j] is the value at time t0 + j*dt; surf[M] = u_term.  bad_j < 0
    means no non-finite value was produced.
    """
    nx = x.shape[0]
    dx = x[1] - x[0]
    surf = np.empty((M + 1, nx))
    surf[M] = u_term
    u = u_term.copy()
    for j in range(M, 0, -1):
        t = t0 + j * dt
        mu = coeff_eval_np(mu_code, mu_p, t + toff, x)
        sg = coeff_eval_np(sg_code, sg_p, t + toff, x)
        ue = np.empty(nx + 2)
        ue[1:-1] = u
        ue[0] = 2.0 * u[0] - u[1]
        ue[-1] = 2.0 * u[-1] - u[-2]
        du = (ue[2:] - ue[:-2]) / (2.0 * dx)
        # upwind the drift where it dominates the diffusion cell ratio
        upw = np.abs(mu) * dx > sg * sg
        if upw.any():
            fwd = (ue[2:] - ue[1:-1]) / dx
            bwd = (ue[1:-1] - ue[:-2]) / dx
            du = np.where(upw, np.where(mu > 0.0, fwd, bwd), du)
        d2u = (ue[2:] - 2.0 * u + ue[:-2]) / (dx * dx)
        b = u + dt * (mu * du + 0.5 * sg * sg * d2u)
        q = sg * du
        y = b.copy()
        for _ in range(fp_maxit):
            y_new = b + dt * gn_eval_np(gen_code, gen_p, pts, vals, x, y, q, n_level)
            if np.max(np.abs(y_new - y)) <= fp_tol * (1.0 + np.max(np.abs(y_new))):
                y = y_new
                break
            y = y_new
        u = y
        if not np.all(np.isfinite(u)):
            i = int(np.argmin(np.isfinite(u)))
            return surf, j - 1, i
        surf[j - 1] = u
    return surf, -1, -1


def euler_paths_np(x0, dw, t0, dt, mu_code, mu_p, sg_code, sg_p, toff):
    """Euler iterates across all paths; returns (paths, bad_step)."""
    n_paths, n_steps = dw.shape
    paths = np.empty((n_paths, n_steps + 1))
    paths[:, 0] = x0
    xc = paths[:, 0].copy()
    for i in range(n_steps):
        t = t0 + i * dt
        mu = coeff_eval_np(mu_code, mu_p, t + toff, xc)
        sg = coeff_eval_np(sg_code, sg_p, t + toff, xc)
        xc = xc + mu * dt + sg * dw[:, i]
        if not np.all(np.isfinite(xc)):
            return paths, i
        paths[:, i + 1] = xc
    return paths, -1


# ---------------------------------------------------------------------------
# numba kernels (loop style over the same math)
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:
    _coeff_jit = njit(cache=True, inline="always")(_coeff_scalar)
    _huber_jit = njit(cache=True, inline="always")(_huber_scalar)

    @njit(cache=True, inline="always")
    def _gn_jit(code, p0, pts, vals, x, y, z, n):
        if code == 0:
            return 0.0
        elif code == 1:
            return _huber_jit(z, n, 0.5)
        elif code == 2:
            return _huber_jit(z, n, p0)
        elif code == 3:
            return min(n, 1.0) * abs(z)
        elif code == 4:
            return _huber_jit(x, n, 1.0) + _huber_jit(z, n, 0.5)
        elif code == 6:
            return y
        best = -1e300
        for k in range(pts.shape[0]):
            s = pts[k, 0] * x + pts[k, 1] * y + pts[k, 2] * z - vals[k]
            if s > best:
                best = s
        return best

    @njit(cache=True)
    def gn_eval_nb(code, p0, pts, vals, x, y, z, n):
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            out[i] = _gn_jit(code, p0, pts, vals, x[i], y[i], z[i], n)
        return out

    @njit(cache=True)
    def conjugate_nb(duals, nodes, values, interior):
        m = duals.shape[0]
        nn = nodes.shape[0]
        d = duals.shape[1]
        out = np.empty(m)
        sat = np.zeros(m, dtype=np.bool_)
        for j in range(m):
            best = -1e300
            best_int = -1e300
            for i in range(nn):
                s = -values[i]
                for c in range(d):
                    s += duals[j, c] * nodes[i, c]
                if s > best:
                    best = s
                if interior[i] and s > best_int:
                    best_int = s
            out[j] = best
            sat[j] = best > best_int
        return out, sat

    @njit(cache=True)
    def pde_march_nb(u_term, x, t0, dt, M,
                     mu_code, mu_p, sg_code, sg_p, toff,
                     gen_code, gen_p, pts, vals, n_level,
                     fp_maxit, fp_tol):
        nx = x.shape[0]
        dx = x[1] - x[0]
        surf = np.empty((M + 1, nx))
        for i in range(nx):
            surf[M, i] = u_term[i]
        u = u_term.copy()
        unew = np.empty(nx)
        for j in range(M, 0, -1):
            t = t0 + j * dt
            for i in range(nx):
                um = 2.0 * u[0] - u[1] if i == 0 else u[i - 1]
                up = 2.0 * u[nx - 1] - u[nx - 2] if i == nx - 1 else u[i + 1]
                mu = _coeff_jit(mu_code, mu_p, t + toff, x[i])
                sg = _coeff_jit(sg_code, sg_p, t + toff, x[i])
                du = (up - um) / (2.0 * dx)
                if abs(mu) * dx > sg * sg:
                    du = (up - u[i]) / dx if mu > 0.0 else (u[i] - um) / dx
                d2u = (up - 2.0 * u[i] + um) / (dx * dx)
                b = u[i] + dt * (mu * du + 0.5 * sg * sg * d2u)
                q = sg * du
                y = b
                for _ in range(fp_maxit):
                    y_new = b + dt * _gn_jit(gen_code, gen_p, pts, vals,
                                             x[i], y, q, n_level)
                    if abs(y_new - y) <= fp_tol * (1.0 + abs(y_new)):
                        y = y_new
                        break
                    y = y_new
                unew[i] = y
            for i in range(nx):
                if not np.isfinite(unew[i]):
                    return surf, j - 1, i
                u[i] = unew[i]
                surf[j - 1, i] = u[i]
        return surf, -1, -1

    @njit(cache=True)
    def euler_paths_nb(x0, dw, t0, dt, mu_code, mu_p, sg_code, sg_p, toff):
        n_paths, n_steps = dw.shape
        paths = np.empty((n_paths, n_steps + 1))
        for p in range(n_paths):
            xc = x0[p]
            paths[p, 0] = xc
            for i in range(n_steps):
                t = t0 + i * dt
                mu = _coeff_jit(mu_code, mu_p, t + toff, xc)
                sg = _coeff_jit(sg_code, sg_p, t + toff, xc)
                xc = xc + mu * dt + sg * dw[p, i]
                if not np.isfinite(xc):
                    return paths, i
                paths[p, i + 1] = xc
        return paths, -1


def _march_numba(u_term, x, t0, dt, M, mu_code, mu_p, sg_code, sg_p, toff,
                 gen_code, gen_p, pts, vals, n_level, fp_maxit=50, fp_tol=1e-13):
    return pde_march_nb(u_term, x, float(t0), float(dt), int(M),
                        int(mu_code), float(mu_p), int(sg_code), float(sg_p),
                        float(toff), int(gen_code), float(gen_p),
                        pts, vals, float(n_level), int(fp_maxit), float(fp_tol))


def _euler_numba(x0, dw, t0, dt, mu_code, mu_p, sg_code, sg_p, toff):
    return euler_paths_nb(x0, dw, float(t0), float(dt), int(mu_code),
                          float(mu_p), int(sg_code), float(sg_p), float(toff))


def _gn_numba(code, p0, pts, vals, x, y, z, n):
    x, y, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float),
                                  np.asarray(z, float))
    out = gn_eval_nb(int(code), float(p0), pts, vals,
                     np.ascontiguousarray(x.ravel()),
                     np.ascontiguousarray(y.ravel()),
                     np.ascontiguousarray(z.ravel()), float(n))
    return out.reshape(x.shape)


def _conj_numba(duals, nodes, values, interior):
    return conjugate_nb(np.ascontiguousarray(duals, dtype=float),
                        np.ascontiguousarray(nodes, dtype=float),
                        np.ascontiguousarray(values, dtype=float),
                        np.ascontiguousarray(interior, dtype=bool))


if NUMBA_ENABLED:
    pde_march = _march_numba
    euler_paths = _euler_numba
    gn_eval = _gn_numba
    conjugate = _conj_numba
else:
    pde_march = pde_march_np
    euler_paths = euler_paths_np
    gn_eval = gn_eval_np
    conjugate = conjugate_np
