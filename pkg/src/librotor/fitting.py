"""Weighted nonlinear least squares (damped Gauss-Newton) and the model
fitters used by the thermometry and scan pipelines.

All models carry analytic Jacobians.  Convergence: relative parameter step
< 1e-10 and relative cost decrease < 1e-12, or 200 iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError, UnderdeterminedScanError
from .spectrum import PsdTrace, lorentzian

XTOL = 1e-10
FTOL = 1e-12
MAX_ITER = 200
TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# core optimizer

def levenberg_marquardt(model, jacobian, x, y, p0, weights=None,
                        max_iter=MAX_ITER, xtol=XTOL, ftol=FTOL):
    """Minimize sum(w (y - model(x, p))^2) with LM damping.

    weights are 1/sigma^2 per point.  Returns (params, covariance,
    converged, cost).  Covariance is (J^T W J)^-1 at the solution; with unit
    weights it is scaled by the reduced chi-square.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p0, dtype=float).copy()
    unit_weights = weights is None
    w = np.ones_like(y) if unit_weights else np.asarray(weights, dtype=float)

    def cost_of(params):
        r = y - model(x, params)
        return r, float(np.sum(w * r * r))

    r, cost = cost_of(p)
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        jac = jacobian(x, p)
        jtw = jac.T * w
        a_mat = jtw @ jac
        grad = jtw @ r
        diag = np.diag(a_mat).copy()
        if np.any(diag <= 0) or not np.all(np.isfinite(a_mat)):
            raise DegenerateFitError("degenerate fit window")
        accepted = False
        for _ in range(60):
            try:
                step = np.linalg.solve(a_mat + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                raise DegenerateFitError("degenerate fit window") from None
            p_new = p + step
            r_new, cost_new = cost_of(p_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        rel_step = float(np.max(np.abs(step) / (np.abs(p) + 1e-300)))
        rel_dcost = (cost - cost_new) / max(cost, 1e-300)
        p, r, cost = p_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-14)
        if rel_step < xtol and rel_dcost < ftol:
            converged = True
            break

    jac = jacobian(x, p)
    jtw = jac.T * w
    a_mat = jtw @ jac
    try:
        cov = np.linalg.inv(a_mat)
    except np.linalg.LinAlgError:
        raise DegenerateFitError("degenerate fit window") from None
    if unit_weights:
        dof = max(y.size - p.size, 1)
        cov = cov * (cost / dof)
    return p, cov, converged, cost


# ---------------------------------------------------------------------------
# Lorentzian peak fits

@dataclass(frozen=True)
class LorentzianFit:
    """Fitted peak: center and FWHM in Hz, area in PSD*Hz, plus offset."""

    center: float
    linewidth_fwhm: float
    area: float
    offset: float
    covariance: np.ndarray
    converged: bool
    residual_rms: float

    def errors(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0))


def _lorentz_model(x, p):
    c, fwhm, area, offset = p
    return lorentzian(x, c, abs(fwhm), area, offset)


def _lorentz_jac(x, p):
    c, fwhm, area, offset = p
    half = abs(fwhm) / 2.0
    dx = x - c
    den = dx * dx + half * half
    jac = np.empty((x.size, 4))
    # trial steps may explore huge linewidths; an inf here just makes the
    # step rejectable, so the overflow is not worth a warning
    with np.errstate(over="ignore"):
        jac[:, 0] = (area / math.pi) * half * 2.0 * dx / den ** 2
        jac[:, 1] = (area / math.pi) * (dx * dx - half * half) / den ** 2 / 2.0
    jac[:, 2] = half / (math.pi * den)
    jac[:, 3] = 1.0
    return jac


def initial_lorentzian_guess(freq, vals):
    """Heuristic start: max bin center (ties -> lower frequency), half-max
    crossing width, trapezoid area above the edge-median offset."""
    freq = np.asarray(freq, float)
    vals = np.asarray(vals, float)
    n_edge = max(2, vals.size // 8)
    offset = float(np.median(np.concatenate([vals[:n_edge], vals[-n_edge:]])))
    imax = int(np.argmax(vals))  # argmax returns the first (lower-freq) max
    center = float(freq[imax])
    peak = vals[imax] - offset
    half_level = offset + peak / 2.0
    above = vals >= half_level
    lo = imax
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = imax
    while hi < vals.size - 1 and above[hi + 1]:
        hi += 1
    df = freq[1] - freq[0] if freq.size > 1 else 1.0
    fwhm = max(float(freq[hi] - freq[lo]), df)
    area = float(np.trapezoid(vals - offset, freq))
    if area <= 0 or not np.isfinite(area):
        area = max(peak, 1e-30) * fwhm * math.pi / 2.0
    return np.array([center, fwhm, area, offset])


def fit_lorentzian(trace: PsdTrace, window: tuple[float, float],
                   init=None, averages: float | None = None) -> LorentzianFit:
    """Fit a single Lorentzian inside [window[0], window[1]] Hz.

    With known averages the weights follow the averaged-periodogram variance
    model sigma_i^2 = model_i^2 / averages, iterated once on the fitted
    model; otherwise unit weights.
    """
    mask = (trace.freq_hz >= window[0]) & (trace.freq_hz <= window[1])
    freq = trace.freq_hz[mask]
    vals = trace.values[mask]
    if freq.size < 8:
        raise DegenerateFitError("degenerate fit window: fewer than 8 bins")
    if averages is None:
        averages = trace.meta.get("averages")
        if averages is not None and math.isinf(averages):
            averages = None
    p0 = np.asarray(init, float) if init is not None else initial_lorentzian_guess(freq, vals)

    weights = None
    if averages is not None:
        var = np.maximum(vals, np.percentile(vals, 5)) ** 2 / averages
        weights = 1.0 / var
    p, cov, converged, _ = levenberg_marquardt(_lorentz_model, _lorentz_jac,
                                               freq, vals, p0, weights)
    if averages is not None:
        # Re-weight from the fitted model to remove the data-weighting bias.
        mvals = _lorentz_model(freq, p)
        weights = averages / np.maximum(mvals, 1e-300) ** 2
        p, cov, converged, _ = levenberg_marquardt(_lorentz_model, _lorentz_jac,
                                                   freq, vals, p, weights)
    p[1] = abs(p[1])
    resid = vals - _lorentz_model(freq, p)
    return LorentzianFit(center=float(p[0]), linewidth_fwhm=float(p[1]),
                         area=float(p[2]), offset=float(p[3]),
                         covariance=cov, converged=bool(converged),
                         residual_rms=float(np.sqrt(np.mean(resid ** 2))))


# ---------------------------------------------------------------------------
# detuning-scan fits

@dataclass(frozen=True)
class ScanFitResult:
    """Parameters recovered from a detuning scan.  Fields not constrained by
    the particular fit are None."""

    g_abs: float | None = None  # rad/s
    omega_bare: float | None = None  # rad/s
    gamma_intrinsic: float | None = None  # rad/s
    gamma_total_heating: float | None = None  # phonons/s
    n_phase: float | None = None
    covariance: np.ndarray | None = None
    residuals: np.ndarray | None = None
    inlier_mask: np.ndarray | None = None
    converged: bool = True

    def param_errors(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0))


def _prepare_scan_points(points, min_points=4):
    pts = np.asarray([(p[0], p[1], p[2] if len(p) > 2 else 0.0) for p in points],
                     dtype=float)
    if pts.shape[0] < min_points:
        raise UnderdeterminedScanError("underdetermined scan: fewer than "
                                       f"{min_points} points")
    if np.unique(pts[:, 0]).size != pts.shape[0]:
        raise UnderdeterminedScanError("underdetermined scan: duplicate detunings")
    x, y, err = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.all(err > 0):
        w = 1.0 / err ** 2
    else:
        w = None  # mixed/absent errors: fall back to unit weights
    return x, y, w


def _clipped_fit(model, jac, x, y, w, p0, clip_sigma=5.0, max_rounds=2,
                 min_points=4):
    """Weighted LM with iterative residual clipping (the scan fits may see
    occasional wild linewidth points)."""
    mask = np.ones_like(x, dtype=bool)
    p = np.asarray(p0, float)
    for round_idx in range(max_rounds + 1):
        if np.count_nonzero(mask) < min_points:
            raise UnderdeterminedScanError("underdetermined scan: fewer than "
                                           f"{min_points} inliers")
        wm = None if w is None else w[mask]
        p, cov, converged, cost = levenberg_marquardt(model, jac, x[mask],
                                                      y[mask], p, wm)
        resid = y - model(x, p)
        if w is not None:
            sig = 1.0 / np.sqrt(w)
        else:
            sig = np.full_like(y, max(np.std(resid[mask]), 1e-300))
        new_mask = np.abs(resid / sig) <= clip_sigma
        if round_idx == max_rounds or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    resid_final = y - model(x, p)
    return p, cov, converged, resid_final, mask


def _lw_factory(omega, kappa):
    half2 = (kappa / 2.0) ** 2

    def model(det, p):
        g, gamma0 = p
        den = (half2 + (omega + det) ** 2) * (half2 + (omega - det) ** 2)
        return gamma0 + 4.0 * g * g * omega * det * kappa / den

    def jac(det, p):
        g, gamma0 = p
        den = (half2 + (omega + det) ** 2) * (half2 + (omega - det) ** 2)
        out = np.empty((det.size, 2))
        out[:, 0] = 8.0 * g * omega * det * kappa / den
        out[:, 1] = 1.0
        return out

    return model, jac


def fit_scan_linewidth(points, omega: float, kappa: float,
                       clip_sigma: float = 5.0, max_clip_rounds: int = 2) -> ScanFitResult:
    """Fit gamma_eff(Delta) measured at omega with free (|g|, gamma_intrinsic)."""
    x, y, w = _prepare_scan_points(points)
    model, jac = _lw_factory(omega, kappa)
    span = np.ptp(y)
    g0 = math.sqrt(max(span, abs(np.max(y))) * kappa) / 2.0
    p0 = [max(g0, kappa * 1e-3), max(float(np.min(y)), 0.0)]
    p, cov, converged, resid, mask = _clipped_fit(model, jac, x, y, w, p0,
                                                  clip_sigma, max_clip_rounds)
    return ScanFitResult(g_abs=abs(float(p[0])), omega_bare=omega,
                         gamma_intrinsic=float(p[1]), covariance=cov,
                         residuals=resid, inlier_mask=mask, converged=converged)


def _freq_factory(kappa):
    half2 = (kappa / 2.0) ** 2

    def shift(det, g, om0):
        num = half2 - om0 * om0 + det * det
        den = (half2 + (om0 + det) ** 2) * (half2 + (om0 - det) ** 2)
        return 4.0 * g * g * om0 * det * num / den

    def model(det, p):
        g, om0 = p
        return np.sqrt(np.maximum(om0 * om0 - shift(det, g, om0), 0.0))

    def jac(det, p):
        g, om0 = p
        num = half2 - om0 * om0 + det * det
        d1 = half2 + (om0 + det) ** 2
        d2 = half2 + (om0 - det) ** 2
        s_val = 4.0 * g * g * om0 * det * num / (d1 * d2)
        val = np.sqrt(np.maximum(om0 * om0 - s_val, 1e-300))
        ds_dg = 2.0 * s_val / g
        # d(s)/d(om0) via logarithmic derivative of each factor
        ds_dom = s_val * (1.0 / om0 - 2.0 * om0 / num
                          - 2.0 * (om0 + det) / d1 + 2.0 * (det - om0) / d2)
        out = np.empty((det.size, 2))
        out[:, 0] = -ds_dg / (2.0 * val)
        out[:, 1] = (2.0 * om0 - ds_dom) / (2.0 * val)
        return out

    return shift, model, jac


def fit_scan_frequency(points, kappa: float, clip_sigma: float = 5.0,
                       max_clip_rounds: int = 2) -> ScanFitResult:
    """Fit the optical-spring curve Omega_eff(Delta) with free (|g|, Omega_bare)."""
    x, y, w = _prepare_scan_points(points)
    _, model, jac = _freq_factory(kappa)
    p0 = [kappa * 0.1, float(np.max(y))]
    p, cov, converged, resid, mask = _clipped_fit(model, jac, x, y, w, p0,
                                                  clip_sigma, max_clip_rounds)
    return ScanFitResult(g_abs=abs(float(p[0])), omega_bare=float(p[1]),
                         covariance=cov, residuals=resid, inlier_mask=mask,
                         converged=converged)


def _occ_factory(omega, kappa, g_fixed):
    half2 = (kappa / 2.0) ** 2

    def rates(det, g):
        g2 = g * g
        a_minus = g2 * kappa / (half2 + (det - omega) ** 2)
        a_plus = g2 * kappa / (half2 + (det + omega) ** 2)
        return a_minus, a_plus

    def model(det, p):
        gamma, n_phi = p
        am, ap = rates(det, g_fixed)
        return (gamma + ap) / (am - ap) + n_phi

    def jac(det, p):
        am, ap = rates(det, g_fixed)
        out = np.empty((det.size, 2))
        out[:, 0] = 1.0 / (am - ap)
        out[:, 1] = 1.0
        return out

    return rates, model, jac


def fit_occupation_curve(points, omega: float, kappa: float,
                         g_fixed: float,
                         clip_sigma: float = 5.0,
                         max_clip_rounds: int = 2) -> ScanFitResult:
    """Fit n(Delta) with free (Gamma_total, n_phase) at a pinned coupling.

    The coupling must come from the linewidth (or spring) fit: in the
    occupation model Gamma and |g| only enter through Gamma/|g|^2 plus a
    parameter-free offset, so freeing |g| here would make the problem
    structurally unidentifiable.  Points where the model has no net cooling
    are rejected up front.
    """
    if g_fixed is None or g_fixed <= 0:
        raise ValueError("fit_occupation_curve needs a pinned |g| > 0 (the "
                         "heating rate is only identifiable as Gamma/|g|^2 "
                         "otherwise)")
    x, y, w = _prepare_scan_points(points)
    rates, model, jac = _occ_factory(omega, kappa, g_fixed)
    am, ap = rates(x, g_fixed)
    valid = am > ap
    if np.count_nonzero(valid) < 4:
        raise UnderdeterminedScanError("underdetermined scan: fewer than 4 "
                                       "points with net cooling")
    x, y = x[valid], y[valid]
    if w is not None:
        w = w[valid]
    gamma0 = max(float(np.min(y)) * float(np.max(am - ap)), 1e-3)
    p0 = [gamma0, 0.0]
    p, cov, converged, resid, mask = _clipped_fit(model, jac, x, y, w, p0,
                                                  clip_sigma, max_clip_rounds)
    return ScanFitResult(g_abs=g_fixed, omega_bare=omega,
                         gamma_total_heating=float(p[0]), n_phase=float(p[1]),
                         covariance=cov, residuals=resid, inlier_mask=mask,
                         converged=converged)
