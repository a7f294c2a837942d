"""Exact heat kernels on the model manifolds, evaluated in the log domain.

Flat torus
    Method of images, ``G = sum_k (4 pi t)^{-n/2} exp(-|x - y + Bk|^2 / 4t)``.
    The truncation window grows until a geometric-series majorant of the
    discarded shells is below ``1e-14`` times the smallest possible kernel value.

Round 2-sphere
    Spectral (Legendre) series with a certified tail.  For small ``t`` the series
    suffers catastrophic cancellation away from the diagonal, so the exact
    integral representation

    ``K(t, a) = sqrt(2) e^{t/4} / (4 pi t)^{3/2}
      sum_m (-1)^m int_a^pi (phi + 2 pi m) exp(-(phi + 2 pi m)^2 / 4t)
      / sqrt(cos a - cos phi) dphi``

    (unit radius, ``a`` the angle between the points) is evaluated by
    Gauss-Legendre quadrature after the substitution ``phi = a + w^2``.  The
    method with the smaller error estimate wins and is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import CapabilityError, InputError
from .manifolds import FlatTorus, Sphere

TAIL_TOL = 1e-14
SPECTRAL_SWITCH = 0.05  # below this t / r^2 the integral representation is also tried


@dataclass
class KernelInfo:
    """How a kernel value was obtained and how accurate it is believed to be."""

    method: str
    rel_error: float
    terms: int


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)) or np.any(~(t < 1)):
        raise InputError("heat kernel time must lie in (0, 1)")
    return t


# -- torus --------------------------------------------------------------------


def _torus_window(spec: FlatTorus, t: float) -> int:
    """Smallest window whose discarded image shells are certified negligible."""
    n = spec.dimension
    smin = spec._sigma_min
    diam2 = spec.diameter**2
    w = 1
    while True:
        # Terms with |k|_inf = m satisfy |B(du + k)| >= smin (m - 1/2) for reduced du.
        log_terms = []
        m = w + 1
        while True:
            cnt = (2 * m + 1) ** n - (2 * m - 1) ** n
            expo = -(smin**2 * (m - 0.5) ** 2 - diam2) / (4 * t)
            log_terms.append(math.log(cnt) + expo)
            if len(log_terms) >= 2 and log_terms[-1] < log_terms[-2] - 1.0:
                ratio = math.exp(log_terms[-1] - log_terms[-2])
                # successive ratios keep shrinking, so a geometric tail bounds the rest
                if ratio > 0:
                    log_terms.append(log_terms[-1] + math.log(ratio / (1 - ratio)))
                break
            m += 1
        if logsumexp(log_terms) < math.log(TAIL_TOL):
            return w
        w += 1
        if w > 60:
            return w


def torus_heat_log(spec: FlatTorus, P, Q, t: float) -> np.ndarray:
    """``log G(p_i, q_j, t)`` for all pairs (matrix)."""
    t = float(_check_t(t))
    P = spec.validate_points(P)
    Q = spec.validate_points(Q)
    n = spec.dimension
    w = _torus_window(spec, t)
    shifts = np.array(
        [k for k in np.ndindex(*([2 * w + 1] * n))], dtype=float
    ) - w
    svec = shifts @ spec.basis.T
    pref = -0.5 * n * math.log(4 * math.pi * t)
    out = np.empty((len(P), len(Q)))
    rows = max(1, 2_000_000 // max(1, len(Q) * len(svec)))
    for a in range(0, len(P), rows):
        du = Q[None, :, :] - P[a : a + rows, None, :]
        du = du - np.round(du)
        v = du @ spec.basis.T
        d2 = np.sum((v[..., None, :] + svec) ** 2, axis=-1)
        out[a : a + rows] = pref + logsumexp(-d2 / (4 * t), axis=-1)
    return out


# -- sphere -------------------------------------------------------------------


def _legendre_series(tau: float, x: np.ndarray):
    """Sum of ``(2l+1)/(4 pi) e^{-l(l+1) tau} P_l(x)`` with tail and round-off bounds."""
    # enough terms that the remaining coefficients are below TAIL_TOL relative
    lmax = int(math.ceil(math.sqrt(40.0 / tau))) + 2
    total = np.zeros_like(x)
    absum = np.zeros_like(x)
    p_prev = np.ones_like(x)
    p_cur = x.copy()
    total += 1.0 / (4 * math.pi)
    absum += 1.0 / (4 * math.pi)
    for ell in range(1, lmax + 1):
        coef = (2 * ell + 1) / (4 * math.pi) * math.exp(-ell * (ell + 1) * tau)
        total += coef * p_cur
        absum += coef * np.abs(p_cur)
        p_prev, p_cur = p_cur, ((2 * ell + 1) * x * p_cur - ell * p_prev) / (ell + 1)
    # geometric majorant of the tail, |P_l| <= 1
    l1 = lmax + 1
    first = (2 * l1 + 1) / (4 * math.pi) * math.exp(-l1 * (l1 + 1) * tau)
    ratio = (2 * l1 + 3) / (2 * l1 + 1) * math.exp(-2 * (l1 + 1) * tau)
    tail = first / (1 - ratio) if ratio < 1 else math.inf
    err = tail + 64 * np.finfo(float).eps * absum * (lmax + 1)
    return total, err, lmax


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _integral_log(tau: float, a: np.ndarray, panels: int):
    """Log of the unit-sphere kernel via the integral representation."""
    out = np.empty_like(a)
    for idx, ang in enumerate(a):
        logs = []
        signs = []
        for m in range(-2, 3):
            val = _image_term(tau, float(ang), m, panels)
            if val is None:
                continue
            logs.append(val[0])
            signs.append(((-1) ** m) * val[1])
        logs = np.array(logs)
        signs = np.array(signs)
        res, sgn = logsumexp(logs, b=signs, return_sign=True)
        out[idx] = res if sgn > 0 else -np.inf
    pref = 0.5 * math.log(2.0) + tau / 4 - 1.5 * math.log(4 * math.pi * tau)
    return out + pref


def _image_term(tau: float, a: float, m: int, panels: int):
    """``log|I_m|`` and its sign, ``I_m = int_a^pi (phi+2 pi m) e^{-(phi+2pi m)^2/4tau}
    / sqrt(cos a - cos phi) dphi``, substituting ``phi = a + w^2``."""
    if a >= math.pi:
        return None
    shift = 2 * math.pi * m
    base = a + shift
    wmax = math.sqrt(math.pi - a)
    # where the Gaussian factor has decayed by e^{-60} relative to its largest value
    if m >= 0:
        ref = base**2
        # (a + w^2 + shift)^2 - base^2 = 2 base w^2 + w^4
        disc = base**2 + 240 * tau
        wcut2 = -base + math.sqrt(disc)
        wcut = math.sqrt(max(wcut2, 0.0))
    else:
        # phi + shift is negative; its square is largest at the left end,
        # smallest at phi = pi
        ref = (math.pi + shift) ** 2
        wcut = wmax
    hi = min(wmax, wcut) if wcut > 0 else wmax
    edges = np.linspace(0.0, hi, panels + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    w = (mids[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    wt = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    phi = a + w * w
    arg = phi + shift
    # cos a - cos phi = 2 sin((phi + a)/2) sin((phi - a)/2)
    gap = 2.0 * np.sin(0.5 * (phi + a)) * np.sin(0.5 * w * w)
    with np.errstate(divide="ignore", invalid="ignore"):
        jac = np.where(w > 0, 2.0 * w / np.sqrt(gap), 2.0 / math.sqrt(max(math.sin(a), 1e-300)))
    expo = -(arg * arg - ref) / (4 * tau)
    vals = arg * jac * np.exp(expo) * wt
    total = float(vals.sum())
    if total == 0.0:
        return None
    return math.log(abs(total)) - ref / (4 * tau), math.copysign(1.0, total)


def sphere_heat_log(spec: Sphere, P, Q, t: float, return_info: bool = False):
    """``log G(p_i, q_j, t)`` on the round 2-sphere for all pairs."""
    if spec.dimension != 2:
        raise CapabilityError("spectral heat kernel is implemented for S^2 only")
    t = float(_check_t(t))
    P = spec.validate_points(P)
    Q = spec.validate_points(Q)
    r = spec.radius
    tau = t / r**2
    ang = spec.pairwise(P, Q) / r
    flat = ang.ravel()
    total, err, lmax = _legendre_series(tau, np.cos(flat))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(total > 0, err / total, np.inf)
        spec_log = np.where(total > 0, np.log(np.where(total > 0, total, 1.0)), -np.inf)
    method = np.full(flat.shape, "spectral", dtype=object)
    rel_err = rel.copy()
    out = spec_log.copy()
    if tau < SPECTRAL_SWITCH:
        need = rel > 1e-12
        if np.any(need):
            coarse = _integral_log(tau, flat[need], panels=8)
            fine = _integral_log(tau, flat[need], panels=16)
            q_err = np.abs(np.expm1(fine - coarse)) + 1e-15
            better = q_err < rel[need]
            sel = np.flatnonzero(need)[better]
            out[sel] = fine[better]
            rel_err[sel] = q_err[better]
            method[sel] = "integral"
    out = out - 2 * math.log(r)
    out = out.reshape(ang.shape)
    if return_info:
        infos = [
            KernelInfo(str(mth), float(e), lmax if mth == "spectral" else 16 * 24)
            for mth, e in zip(method, rel_err)
        ]
        return out, np.array(infos, dtype=object).reshape(ang.shape)
    return out


def heat_kernel_log_matrix(spec, P, Q, t: float) -> np.ndarray:
    """Log heat kernel for every pair of rows of ``P`` and ``Q``."""
    if isinstance(spec, FlatTorus):
        return torus_heat_log(spec, P, Q, t)
    if isinstance(spec, Sphere):
        return sphere_heat_log(spec, P, Q, t)
    raise CapabilityError(f"no exact heat kernel for manifold kind {spec.kind!r}")


def heat_kernel_log(spec, p, q, t: float) -> float:
    """Log of the exact heat kernel ``G(p, q, t)``."""
    return float(heat_kernel_log_matrix(spec, p, q, t)[0, 0])


def heat_kernel_log_with_info(spec, p, q, t: float) -> tuple[float, KernelInfo]:
    """Like :func:`heat_kernel_log` but also reports the evaluation method."""
    if isinstance(spec, Sphere):
        val, info = sphere_heat_log(spec, p, q, t, return_info=True)
        return float(val[0, 0]), info[0, 0]
    val = heat_kernel_log(spec, p, q, t)
    if isinstance(spec, FlatTorus):
        return val, KernelInfo("images", TAIL_TOL, (2 * _torus_window(spec, t) + 1) ** spec.dimension)
    raise CapabilityError(f"no exact heat kernel for manifold kind {spec.kind!r}")


# -- Li-Yau envelope ----------------------------------------------------------


@dataclass
class EnvelopeReport:
    """Fitted constant of the two-sided Gaussian envelope at a given epsilon."""

    eps: float
    constant: float
    upper_constant: float
    lower_constant: float
    per_time: dict
    samples: int


def li_yau_envelope(spec, P, Q, times, eps: float = 1.0) -> EnvelopeReport:
    """Fit ``C`` with ``C^{-1} v e^{-d^2/((4-eps)t)} <= G <= C v e^{-d^2/((4+eps)t)}``.

    ``v = 1 / vol(B(z, sqrt t))``.  Works on all pairs of ``P`` x ``Q``.
    """
    if not 0 < eps < 4:
        raise InputError("envelope epsilon must lie in (0, 4)")
    d = spec.pairwise(P, Q)
    per_time = {}
    up_all, lo_all = 0.0, 0.0
    for t in times:
        logg = heat_kernel_log_matrix(spec, P, Q, t)
        logv = -math.log(spec.ball_volume(math.sqrt(t)))
        up = np.max(logg - logv + d**2 / ((4 + eps) * t))
        lo = np.max(logv - d**2 / ((4 - eps) * t) - logg)
        per_time[float(t)] = {"log_upper": float(up), "log_lower": float(lo)}
        up_all = max(up_all, up)
        lo_all = max(lo_all, lo)
    c_up, c_lo = math.exp(up_all), math.exp(lo_all)
    return EnvelopeReport(eps, max(c_up, c_lo, 1.0), c_up, c_lo, per_time, int(d.size * len(times)))
