"""Local quadratic kernel smoothing and bandwidth selection.

Everything here works from kernel-weighted moment sums. Observations that
share a time point are collapsed into (count, sum) bins first, which is exact
for weighted least squares and keeps the cost proportional to the number of
distinct time points rather than the number of observations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import FitError

# A local system whose determinant falls below this fraction of the product of
# its diagonal (Hadamard ratio) is treated as rank deficient.
_DEGENERATE_RTOL = 1e-10
# Weights below this are not counted as "in window" after normalisation.
_MIN_WEIGHT = 1e-8


def epanechnikov(z: np.ndarray) -> np.ndarray:
    """Epanechnikov kernel ``0.75 (1 - z^2)`` on ``|z| < 1``."""
    return np.where(np.abs(z) < 1.0, 0.75 * (1.0 - z * z), 0.0)


def uniform_grid(horizon: float, size: int = 101) -> np.ndarray:
    """``size`` equally spaced points covering ``[0, horizon]``."""
    return np.linspace(0.0, float(horizon), int(size))


@dataclass(frozen=True)
class SmoothingConfig:
    """Bandwidth ``h`` and evaluation grid for :func:`local_quadratic_fit`."""

    bandwidth: float
    eval_grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.eval_grid, dtype=float)
        object.__setattr__(self, "eval_grid", g)
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("eval_grid must be a strictly increasing 1-d array")


class LocalFit(NamedTuple):
    values: np.ndarray
    extrapolated: np.ndarray


def bin_observations(times, values, weights=None):
    """Collapse observations onto distinct times.

    Returns ``(unique_times, counts, sums, sums_of_squares)``; ``counts`` are
    the summed observation weights.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    w = np.ones_like(times) if weights is None else np.asarray(weights, dtype=float)
    u, inv = np.unique(times, return_inverse=True)
    counts = np.bincount(inv, weights=w, minlength=u.size)
    sums = np.bincount(inv, weights=w * values, minlength=u.size)
    sq = np.bincount(inv, weights=w * values * values, minlength=u.size)
    return u, counts, sums, sq


def _kernel_powers(u, grid, h, max_power):
    """``A[k][g, j] = K(z) z^k`` with ``z = (u_j - grid_g) / h``.

    ``h`` may be a scalar or one bandwidth per grid point.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[:, None]
    z = (u[None, :] - grid[:, None]) / h
    k = epanechnikov(z)
    out = [k]
    zk = k
    for _ in range(max_power):
        zk = zk * z
        out.append(zk)
    return out


def _solve_local(S, T):
    """Intercepts of batched 3x3 normal equations and a degeneracy mask.

    ``S`` has trailing axis ``(S0..S4)``, ``T`` has ``(T0..T2)``.
    """
    idx = np.array([[0, 1, 2], [1, 2, 3], [2, 3, 4]])
    A = S[..., idx]
    bad = _ill_conditioned(A)
    A = np.where(bad[..., None, None], np.eye(3), A)
    beta = np.linalg.solve(A, T[..., None])[..., 0]
    out = beta[..., 0]
    out[bad] = np.nan
    return out, bad


def _ill_conditioned(A):
    d = np.diagonal(A, axis1=-2, axis2=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.linalg.det(A) / np.prod(d, axis=-1)
    return ~(ratio > _DEGENERATE_RTOL) | ~(d[..., 0] > 0)


def _moments_1d(u, counts, sums, grid, h):
    A = _kernel_powers(u, grid, h, 4)
    S = np.stack([a @ counts for a in A], axis=-1)
    T = np.stack([a @ sums for a in A[:3]], axis=-1)
    return S, T, A


def _local_solve_refined(u, counts, sums, grid, h):
    """Local quadratic intercepts with one step of iterative refinement.

    The correction re-solves the normal equations for residuals formed
    directly from the binned data, which recovers most of the accuracy the
    moment form loses on badly spread windows.
    """
    S, T, A = _moments_1d(u, counts, sums, grid, h)
    idx = np.array([[0, 1, 2], [1, 2, 3], [2, 3, 4]])
    M = S[..., idx]
    bad = _ill_conditioned(M)
    M = np.where(bad[..., None, None], np.eye(3), M)
    beta = np.linalg.solve(M, T[..., None])[..., 0]
    hh = np.asarray(h, dtype=float)
    z = (u[None, :] - grid[:, None]) / (hh[:, None] if hh.ndim else hh)
    fitted = beta[:, :1] + beta[:, 1:2] * z + beta[:, 2:3] * z * z
    resid = sums[None, :] - counts[None, :] * fitted
    dT = np.stack([np.sum(a * resid, axis=1) for a in A[:3]], axis=-1)
    beta = beta + np.linalg.solve(M, dT[..., None])[..., 0]
    out = beta[:, 0]
    out[bad] = np.nan
    return out, bad


def _fallback_bandwidths(u, counts, grid, h):
    """Per-grid-point bandwidth wide enough to reach three distinct times."""
    present = u[counts > 0]
    if present.size < 3:
        raise FitError(
            f"local quadratic fit needs at least 3 distinct time points, got {present.size}"
        )
    d = np.abs(present[None, :] - grid[:, None])
    d3 = np.partition(d, 2, axis=1)[:, 2]
    # 1.25 keeps the third point well inside the kernel support
    return np.maximum(h, d3 * 1.25)


def _fit_binned(u, counts, sums, grid, h):
    kern = _kernel_powers(u[counts > 0], grid, h, 0)[0]
    n_in = (kern > _MIN_WEIGHT).sum(axis=1)
    fit, bad = _local_solve_refined(u, counts, sums, grid, h)
    bad |= n_in < 3
    if bad.any():
        where = np.flatnonzero(bad)
        hb = _fallback_bandwidths(u, counts, grid[where], h)
        for _ in range(30):
            fb, still = _local_solve_refined(u, counts, sums, grid[where], hb)
            fit[where[~still]] = fb[~still]
            where, hb = where[still], hb[still] * 1.5
            if where.size == 0:
                break
        else:
            raise FitError("local quadratic fit is rank deficient after widening the window")
    return LocalFit(fit, bad)


def local_quadratic_fit(times, values, config: SmoothingConfig, weights=None) -> LocalFit:
    """Local quadratic regression evaluated on ``config.eval_grid``.

    At each grid point ``g`` the intercept of the weighted least-squares
    quadratic in ``t - g`` with Epanechnikov weights ``K((t - g) / h)`` is
    returned. Where fewer than three distinct times carry weight the window
    is widened past the three nearest times and the point is flagged in
    ``extrapolated``.

    Parameters
    ----------
    times, values : array_like
        Pooled observations; repeated times are allowed.
    config : SmoothingConfig
    weights : array_like, optional
        Per-observation weights.

    Returns
    -------
    LocalFit
        ``values`` on the grid and the boolean ``extrapolated`` mask.
    """
    u, counts, sums, _ = bin_observations(times, values, weights)
    return _fit_binned(u, counts, sums, config.eval_grid, config.bandwidth)


def default_bandwidth_candidates(times, horizon: float, num: int = 20) -> np.ndarray:
    """Log-spaced bandwidths from twice the median gap between distinct pooled
    times up to ``horizon / 2``."""
    u = np.unique(np.asarray(times, dtype=float))
    gap = np.median(np.diff(u)) if u.size > 1 else horizon / 10.0
    lo = min(2.0 * gap, horizon / 2.0)
    return np.geomspace(lo, horizon / 2.0, num)


def locv_scores(times, values, index, candidates: Sequence[float], grid) -> np.ndarray:
    """Leave-one-curve-out squared prediction error for each bandwidth.

    ``index`` labels the curve of each observation. The held-out curve is
    predicted by linear interpolation of the smoothed grid curve; a bandwidth
    for which some held-out fit cannot be formed scores ``inf``.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    index = np.asarray(index)
    grid = np.asarray(grid, dtype=float)
    curves, inv = np.unique(index, return_inverse=True)
    n = curves.size
    if n < 2:
        raise FitError("leave-one-curve-out cross-validation needs at least 2 curves")
    u, tinv = np.unique(times, return_inverse=True)
    # counts[i, j] / sums[i, j]: contribution of curve i at distinct time j
    counts = np.zeros((n, u.size))
    sums = np.zeros((n, u.size))
    np.add.at(counts, (inv, tinv), 1.0)
    np.add.at(sums, (inv, tinv), values)
    tot_c = counts.sum(0)
    tot_s = sums.sum(0)

    scores = np.empty(len(candidates))
    for c, h in enumerate(candidates):
        A = _kernel_powers(u, grid, h, 4)
        S_tot = np.stack([a @ tot_c for a in A], -1)
        T_tot = np.stack([a @ tot_s for a in A[:3]], -1)
        S_i = np.stack([counts @ a.T for a in A], -1)  # (n, G, 5)
        T_i = np.stack([sums @ a.T for a in A[:3]], -1)
        loo, bad = _solve_local(S_tot[None] - S_i, T_tot[None] - T_i)
        # distinct in-window times remaining once curve i is removed
        inwin = (A[0] > _MIN_WEIGHT).astype(float)  # (G, U)
        n_in = ((tot_c[None, :] - counts) > 0.5).astype(float) @ inwin.T
        bad |= n_in < 3
        total = 0.0
        for i in range(n):
            curve = loo[i]
            if bad[i].any():
                try:
                    curve[bad[i]] = _fit_binned(
                        u, tot_c - counts[i], tot_s - sums[i], grid[bad[i]], h
                    ).values
                except FitError:
                    total = np.inf
                    break
            sel = inv == i
            r = values[sel] - np.interp(times[sel], grid, curve)
            total += float(r @ r)
        scores[c] = total
    return scores


def select_bandwidth_locv(
    times, values, index, candidates: Optional[Sequence[float]] = None, grid=None,
    horizon: Optional[float] = None,
) -> float:
    """Bandwidth minimising :func:`locv_scores`; ties go to the smallest.

    Raises
    ------
    FitError
        If no candidate yields a usable fit.
    """
    if horizon is None:
        horizon = float(np.max(times)) if grid is None else float(grid[-1])
    if grid is None:
        grid = uniform_grid(horizon)
    if candidates is None:
        candidates = default_bandwidth_candidates(times, horizon)
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise ValueError("candidate bandwidth list is empty")
    scores = locv_scores(times, values, index, candidates, grid)
    if not np.isfinite(scores).any():
        raise FitError(f"every candidate bandwidth failed: {candidates.tolist()}")
    best = np.flatnonzero(scores == scores.min())
    return float(candidates[best].min())


# --- two-dimensional smoother -------------------------------------------------

# monomial exponents of the local quadratic surface in (z1, z2)
_EXP2 = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def _surface_moments(A, N, Y):
    """Normal equations for every grid pair; ``A`` from :func:`_kernel_powers`."""
    G = A[0].shape[0]
    cache = {}

    def m(a, b, W):
        key = (a, b, id(W))
        if key not in cache:
            cache[key] = A[a] @ W @ A[b].T
        return cache[key]

    XtX = np.empty((G, G, 6, 6))
    for p, (a1, b1) in enumerate(_EXP2):
        for q, (a2, b2) in enumerate(_EXP2):
            XtX[:, :, p, q] = m(a1 + a2, b1 + b2, N)
    XtY = np.stack([m(a, b, Y) for a, b in _EXP2], axis=-1)
    return XtX, XtY


def _solve_surface(XtX, XtY, occupied=None, min_bins=0):
    bad = _ill_conditioned(XtX)
    if occupied is not None:
        bad |= occupied < min_bins
    XtX = np.where(bad[..., None, None], np.eye(6), XtX)
    beta = np.linalg.solve(XtX, XtY[..., None])[..., 0, 0]
    beta[bad] = np.nan
    return beta, bad


class SurfaceFit(NamedTuple):
    values: np.ndarray
    extrapolated: np.ndarray


def _occupied_bins(A, N):
    """Number of distinct occupied bins inside each grid-pair window."""
    inwin = (A[0] > _MIN_WEIGHT).astype(float)
    return inwin @ (N > 0).astype(float) @ inwin.T


def local_quadratic_surface(u, N, Y, grid, h, min_bins: int = 12,
                            max_widen: int = 30) -> SurfaceFit:
    """Bivariate local quadratic fit of binned responses onto ``grid x grid``.

    ``N[a, b]`` is the number (total weight) of responses observed at
    ``(u[a], u[b])`` and ``Y[a, b]`` their sum. A product Epanechnikov kernel
    with common bandwidth ``h`` is used. Grid points whose window holds fewer
    than ``min_bins`` occupied bins, or whose local system is rank deficient,
    are refitted with the bandwidth grown by factors of 1.5 and flagged.
    """
    grid = np.asarray(grid, dtype=float)
    A = _kernel_powers(u, grid, h, 4)
    fit, bad = _solve_surface(*_surface_moments(A, N, Y), _occupied_bins(A, N), min_bins)
    flagged = bad.copy()
    hb = h
    tries = 0
    while bad.any():
        tries += 1
        if tries > max_widen:
            raise FitError("covariance surface fit is rank deficient everywhere")
        hb *= 1.5
        A = _kernel_powers(u, grid, hb, 4)
        fb, nb = _solve_surface(*_surface_moments(A, N, Y), _occupied_bins(A, N), min_bins)
        fill = bad & ~nb
        fit[fill] = fb[fill]
        bad &= nb
    return SurfaceFit(fit, flagged)


def bilinear(grid, surface, s, t):
    """Bilinear interpolation of a grid surface at points ``(s, t)``."""
    grid = np.asarray(grid)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    i = np.clip(np.searchsorted(grid, s, side="right") - 1, 0, grid.size - 2)
    j = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, grid.size - 2)
    fs = (s - grid[i]) / (grid[i + 1] - grid[i])
    ft = (t - grid[j]) / (grid[j + 1] - grid[j])
    return (
        surface[i, j] * (1 - fs) * (1 - ft)
        + surface[i + 1, j] * fs * (1 - ft)
        + surface[i, j + 1] * (1 - fs) * ft
        + surface[i + 1, j + 1] * fs * ft
    )
