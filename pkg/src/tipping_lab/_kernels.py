"""Hot inner loops: agent window stepping and Euler-Maruyama escape sampling.

Two implementations live side by side: numba @njit kernels and pure-numpy
twins.  Selection happens once at import time via the TIPPING_LAB_BACKEND
environment variable ("numba" or "numpy"; default is numba when importable).
Both paths consume identical random streams: numba's np.random.* reproduces
numpy's legacy RandomState bit for bit for the same seed, and numpy vector
draws equal repeated scalar draws, so a fixed seed gives byte-identical
trajectories regardless of backend.  benchmarks/bench_kernels.py measures the
gap between the two.
"""

import os

import numpy as np

try:
    import numba as nb

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    nb = None
    HAS_NUMBA = False

_requested = os.environ.get("TIPPING_LAB_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        "TIPPING_LAB_BACKEND must be 'numba' or 'numpy', got %r" % _requested
    )
if _requested == "numba" and not HAS_NUMBA:
    raise RuntimeError("TIPPING_LAB_BACKEND=numba but numba is not importable")

USE_NUMBA = HAS_NUMBA and _requested != "numpy"


def active_backend():
    """Name of the kernel implementation selected at import time."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# agent window stepping
#
# One reporting window = n_sub internal steps.  Each internal step: exact
# exponential decay of every preference, one Poisson batch of up jumps and one
# of down jumps per agent (rates frozen for the whole window), then the
# threshold sweep.  Draw order is fixed as (all up draws, all down draws) per
# internal step so both backends walk the same stream.


def _abm_window_numpy(prefs, seed, n_sub, decay, lam_up, lam_dn, eps_up, eps_dn):
    rs = np.random.RandomState(seed)
    n = prefs.shape[0]
    buys = 0
    sells = 0
    for _ in range(n_sub):
        prefs *= decay
        prefs += rs.poisson(lam_up, size=n) * eps_up
        prefs += rs.poisson(lam_dn, size=n) * eps_dn
        up = prefs >= 1.0
        dn = prefs <= -1.0
        buys += int(up.sum())
        sells += int(dn.sum())
        prefs[up] = 0.0
        prefs[dn] = 0.0
    return buys, sells


if HAS_NUMBA:

    @nb.njit(cache=True)
    def _abm_window_numba(prefs, seed, n_sub, decay, lam_up, lam_dn, eps_up, eps_dn):
        np.random.seed(seed)
        n = prefs.shape[0]
        buys = 0
        sells = 0
        for _ in range(n_sub):
            for i in range(n):
                prefs[i] *= decay
            for i in range(n):
                k = np.random.poisson(lam_up)
                if k > 0:
                    prefs[i] += k * eps_up
            for i in range(n):
                k = np.random.poisson(lam_dn)
                if k > 0:
                    prefs[i] += k * eps_dn
            for i in range(n):
                if prefs[i] >= 1.0:
                    buys += 1
                    prefs[i] = 0.0
                elif prefs[i] <= -1.0:
                    sells += 1
                    prefs[i] = 0.0
        return buys, sells


def abm_window(prefs, seed, n_sub, decay, lam_up, lam_dn, eps_up, eps_dn):
    """Advance preferences in place through one reporting window.

    Returns (buys, sells): threshold crossings counted over the window.
    """
    if USE_NUMBA:
        return _abm_window_numba(
            prefs, seed, n_sub, decay, lam_up, lam_dn, eps_up, eps_dn
        )
    return _abm_window_numpy(prefs, seed, n_sub, decay, lam_up, lam_dn, eps_up, eps_dn)


# ---------------------------------------------------------------------------
# Euler-Maruyama escape sampling on tabulated coefficients
#
# Drift and diffusivity arrive as linear-interpolation tables on a uniform
# grid spanning [a, b]; the caller controls the table resolution.  Each path
# owns its seed and consumes one normal draw per step, so the per-path loop
# (numba) and the chunked lockstep fallback (numpy) see identical streams.
# Escape time is the last time the path was still inside (a, b); paths that
# hit max_steps are flagged censored with tau equal to the full horizon.

_NORMAL_CHUNK = 4096  # fallback draws normals in blocks of this many


def _em_escape_numpy(x0, seeds, h, max_steps, a, b, grid_a, grid_inv_dx, drift_tab, sig_tab):
    n_paths = seeds.shape[0]
    n_tab = drift_tab.shape[0]
    taus = np.full(n_paths, max_steps * h)
    censored = np.ones(n_paths, dtype=np.bool_)
    exit_right = np.zeros(n_paths, dtype=np.bool_)
    sqh = np.sqrt(h)
    states = [np.random.RandomState(int(s)) for s in seeds]
    x = np.full(n_paths, x0)
    alive = np.ones(n_paths, dtype=np.bool_)
    step = 0
    buf = np.empty((n_paths, _NORMAL_CHUNK))
    while step < max_steps and alive.any():
        n_block = int(min(_NORMAL_CHUNK, max_steps - step))
        idx_alive = np.nonzero(alive)[0]
        for i in idx_alive:
            buf[i, :n_block] = states[i].normal(size=n_block)
        for k in range(n_block):
            pos = (x[idx_alive] - grid_a) * grid_inv_dx
            j = np.clip(pos.astype(np.int64), 0, n_tab - 2)
            w = pos - j
            mu = drift_tab[j] * (1.0 - w) + drift_tab[j + 1] * w
            sg = sig_tab[j] * (1.0 - w) + sig_tab[j + 1] * w
            x[idx_alive] = x[idx_alive] + mu * h + sg * sqh * buf[idx_alive, k]
            out = (x[idx_alive] <= a) | (x[idx_alive] >= b)
            if out.any():
                gone = idx_alive[out]
                taus[gone] = (step + k) * h  # last time still inside
                censored[gone] = False
                exit_right[gone] = x[gone] >= b
                alive[gone] = False
                idx_alive = idx_alive[~out]
                if idx_alive.shape[0] == 0:
                    break
        step += n_block
    return taus, censored, exit_right


if HAS_NUMBA:

    @nb.njit(cache=True)
    def _em_escape_numba(x0, seeds, h, max_steps, a, b, grid_a, grid_inv_dx, drift_tab, sig_tab):
        n_paths = seeds.shape[0]
        n_tab = drift_tab.shape[0]
        taus = np.full(n_paths, max_steps * h)
        censored = np.ones(n_paths, dtype=np.bool_)
        exit_right = np.zeros(n_paths, dtype=np.bool_)
        sqh = np.sqrt(h)
        for p in range(n_paths):
            np.random.seed(seeds[p])
            x = x0
            for step in range(max_steps):
                pos = (x - grid_a) * grid_inv_dx
                j = int(pos)
                if j < 0:
                    j = 0
                elif j > n_tab - 2:
                    j = n_tab - 2
                w = pos - j
                mu = drift_tab[j] * (1.0 - w) + drift_tab[j + 1] * w
                sg = sig_tab[j] * (1.0 - w) + sig_tab[j + 1] * w
                x = x + mu * h + sg * sqh * np.random.normal()
                if x <= a or x >= b:
                    taus[p] = step * h
                    censored[p] = False
                    exit_right[p] = x >= b
                    break
        return taus, censored, exit_right


def em_escape(x0, seeds, h, max_steps, a, b, grid, drift_tab, sig_tab):
    """Sample first-exit times of dX = mu dt + sigma dW from (a, b).

    grid is the uniform abscissa of the coefficient tables.  Returns
    (taus, censored, exit_right) arrays aligned with seeds.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    grid_a = float(grid[0])
    grid_inv_dx = 1.0 / (grid[1] - grid[0])
    args = (
        float(x0), seeds, float(h), int(max_steps), float(a), float(b),
        grid_a, grid_inv_dx,
        np.ascontiguousarray(drift_tab, dtype=np.float64),
        np.ascontiguousarray(sig_tab, dtype=np.float64),
    )
    if USE_NUMBA:
        return _em_escape_numba(*args)
    return _em_escape_numpy(*args)


# ---------------------------------------------------------------------------
# fixed-length Euler-Maruyama path on tabulated coefficients (no exit test)


def _em_path_numpy(x0, seed, h, n_steps, grid_a, grid_inv_dx, drift_tab, sig_tab):
    rs = np.random.RandomState(seed)
    n_tab = drift_tab.shape[0]
    out = np.empty(n_steps + 1)
    out[0] = x0
    x = x0
    sqh = np.sqrt(h)
    done = 0
    while done < n_steps:
        n_block = min(_NORMAL_CHUNK, n_steps - done)
        xi = rs.normal(size=n_block)
        for k in range(n_block):
            pos = (x - grid_a) * grid_inv_dx
            j = int(pos)
            j = 0 if j < 0 else (n_tab - 2 if j > n_tab - 2 else j)
            w = pos - j
            mu = drift_tab[j] * (1.0 - w) + drift_tab[j + 1] * w
            sg = sig_tab[j] * (1.0 - w) + sig_tab[j + 1] * w
            x = x + mu * h + sg * sqh * xi[k]
            out[done + k + 1] = x
            if not np.isfinite(x):
                out[done + k + 1 :] = np.nan
                return out
        done += n_block
    return out


if HAS_NUMBA:

    @nb.njit(cache=True)
    def _em_path_numba(x0, seed, h, n_steps, grid_a, grid_inv_dx, drift_tab, sig_tab):
        np.random.seed(seed)
        n_tab = drift_tab.shape[0]
        out = np.empty(n_steps + 1)
        out[0] = x0
        x = x0
        sqh = np.sqrt(h)
        for step in range(n_steps):
            pos = (x - grid_a) * grid_inv_dx
            j = int(pos)
            if j < 0:
                j = 0
            elif j > n_tab - 2:
                j = n_tab - 2
            w = pos - j
            mu = drift_tab[j] * (1.0 - w) + drift_tab[j + 1] * w
            sg = sig_tab[j] * (1.0 - w) + sig_tab[j + 1] * w
            x = x + mu * h + sg * sqh * np.random.normal()
            out[step + 1] = x
            if not np.isfinite(x):
                for t in range(step + 2, n_steps + 1):
                    out[t] = np.nan
                break
        return out


def em_path(x0, seed, h, n_steps, grid, drift_tab, sig_tab):
    """One Euler-Maruyama path of n_steps on tabulated coefficients."""
    grid_a = float(grid[0])
    grid_inv_dx = 1.0 / (grid[1] - grid[0])
    args = (
        float(x0), int(seed), float(h), int(n_steps), grid_a, grid_inv_dx,
        np.ascontiguousarray(drift_tab, dtype=np.float64),
        np.ascontiguousarray(sig_tab, dtype=np.float64),
    )
    if USE_NUMBA:
        return _em_path_numba(*args)
    return _em_path_numpy(*args)
