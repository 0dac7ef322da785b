"""Sideband-asymmetry thermometry: detector calibration, sideband-pair
fitting, area-scale calibration, and occupation extraction with propagated
uncertainties, plus the full detuning-scan analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter
from scipy.stats import chi2 as chi2_dist

from . import physics
from .errors import (CalibrationError, DegenerateFitError, LibrotorError,
                     UnderdeterminedScanError, UnphysicalAsymmetryError)
from .fitting import (LorentzianFit, ScanFitResult, fit_lorentzian,
                      fit_occupation_curve, fit_scan_frequency,
                      fit_scan_linewidth, lorentzian)
from .noise import DetectorResponse, detector_gain
from .physics import DerivedScalars, LibrationMode, OpticalSetup
from .spectrum import ORIENT_LO_BLUE, PsdTrace

TWO_PI = 2.0 * math.pi

METHOD_RATIO = "ratio"
METHOD_DIFFCAL = "difference_calibrated"

# Which cavity channel carries which librational mode.
CHANNEL_MODE = {"cavity_y": "alpha", "cavity_z": "beta"}


@dataclass(frozen=True)
class OccupationResult:
    """Phonon occupation from one sideband pair."""

    n: float
    n_err: float
    c_factor: float
    areas: tuple[tuple[float, float], tuple[float, float]]  # (stokes, anti) as (value, err)
    ground_state_prob: float
    method: str
    stokes_fit: LorentzianFit | None = None
    anti_fit: LorentzianFit | None = None


def calibrate_response(shot_trace: PsdTrace, dark_trace: PsdTrace) -> DetectorResponse:
    """Detector sensitivity from shot and dark calibration traces.

    gain = (shot - dark) per bin, median-smoothed over 5 bins and normalized
    to unit median; bins with shot <= dark are invalidated and interpolated.
    """
    if shot_trace.freq_hz.shape != dark_trace.freq_hz.shape or \
            not np.allclose(shot_trace.freq_hz, dark_trace.freq_hz):
        raise CalibrationError("calibration traces do not share a frequency grid")
    diff = shot_trace.values - dark_trace.values
    bad = diff <= 0
    if np.count_nonzero(bad) > 0.2 * diff.size:
        raise CalibrationError("calibration traces inconsistent: >20% of bins "
                               "have shot <= dark")
    if np.any(bad):
        good = ~bad
        diff = diff.copy()
        diff[bad] = np.interp(shot_trace.freq_hz[bad], shot_trace.freq_hz[good],
                              diff[good])
    gain = median_filter(diff, size=5, mode="nearest")
    gain = gain / np.median(gain)
    return DetectorResponse(TWO_PI * shot_trace.freq_hz, gain)


def _constrained_area_fit(freq, vals, center, fwhm, averages):
    """Linear weighted LSQ for (area, offset) with the peak shape pinned."""
    shape = lorentzian(freq, center, fwhm, 1.0)
    design = np.column_stack([shape, np.ones_like(freq)])
    w = np.ones_like(vals)
    params = None
    for _ in range(2):
        wd = design * w[:, None]
        a_mat = wd.T @ design
        params = np.linalg.solve(a_mat, wd.T @ vals)
        if averages is None:
            break
        model = design @ params
        w = averages / np.maximum(model, np.percentile(vals, 5)) ** 2
    cov = np.linalg.inv(a_mat)
    if averages is None:
        resid = vals - design @ params
        cov = cov * float(np.sum(resid ** 2)) / max(vals.size - 2, 1)
    full_cov = np.zeros((4, 4))
    full_cov[2, 2] = cov[0, 0]
    full_cov[3, 3] = cov[1, 1]
    full_cov[2, 3] = full_cov[3, 2] = cov[0, 1]
    resid = vals - design @ params
    return LorentzianFit(center=center, linewidth_fwhm=fwhm,
                         area=float(params[0]), offset=float(params[1]),
                         covariance=full_cov, converged=True,
                         residual_rms=float(np.sqrt(np.mean(resid ** 2))))


def fit_sideband_pair(trace: PsdTrace, resp: DetectorResponse | None,
                      mode_freq_hint_hz: float,
                      window_halfwidth_hz: float = 50e3,
                      ) -> tuple[LorentzianFit, LorentzianFit]:
    """Gain-correct the trace and fit the Stokes and anti-Stokes peaks.

    Each sideband gets its own local offset.  When the free anti-Stokes fit
    fails or wanders off the mirrored position, the fit is retried with
    center and width pinned to the Stokes values (area stays free, so a
    vanishing peak gives area ~ 0 with a finite error).
    """
    het = trace.meta.get("het_freq_hz")
    if het is None:
        raise LibrotorError("trace metadata lacks het_freq_hz")
    orientation = trace.meta.get("sideband_orientation", ORIENT_LO_BLUE)
    averages = trace.meta.get("averages")
    if averages is not None and math.isinf(averages):
        averages = None
    freq = trace.freq_hz
    if resp is not None:
        vals = trace.values / detector_gain(resp, TWO_PI * freq)
    else:
        vals = trace.values
    corrected = PsdTrace(freq, np.maximum(vals, 0.0), dict(trace.meta))

    sign = -1.0 if orientation == ORIENT_LO_BLUE else 1.0
    f_stokes = het - sign * mode_freq_hint_hz
    f_anti = het + sign * mode_freq_hint_hz
    hw = window_halfwidth_hz

    stokes = fit_lorentzian(corrected, (f_stokes - hw, f_stokes + hw),
                            averages=averages)
    mirror = 2.0 * het - stokes.center
    init = np.array([mirror, stokes.linewidth_fwhm, stokes.area * 0.5,
                     stokes.offset])
    window = (f_anti - hw, f_anti + hw)
    try:
        anti = fit_lorentzian(corrected, window, init=init, averages=averages)
        ok = (anti.converged
              and 0.25 * stokes.linewidth_fwhm <= anti.linewidth_fwhm
              <= 4.0 * stokes.linewidth_fwhm
              and abs(anti.center - mirror) <= 3.0 * stokes.linewidth_fwhm)
    except DegenerateFitError:
        anti, ok = None, False
    if not ok:
        mask = (freq >= window[0]) & (freq <= window[1])
        anti = _constrained_area_fit(freq[mask], corrected.values[mask],
                                     mirror, stokes.linewidth_fwhm, averages)
    return stokes, anti


def _occupation_from_areas(a_s, err_s, a_as, err_as, method, c, c_err):
    if method == METHOD_RATIO:
        if a_as < 0.0:
            if a_as >= -2.0 * err_as:
                # consistent with the ground state: clamp, keep an upper error
                n_err = err_as / max(a_s, 1e-300)
                return 0.0, max(n_err, 1e-300), a_s - a_as
            raise UnphysicalAsymmetryError(
                "unphysical asymmetry: anti-Stokes area negative beyond 2 sigma")
        if a_s <= a_as:
            raise UnphysicalAsymmetryError(
                "unphysical asymmetry: Stokes area does not exceed anti-Stokes")
        diff = a_s - a_as
        n = a_as / diff
        dn_ds = -a_as / diff ** 2
        dn_das = a_s / diff ** 2
        n_err = math.sqrt((dn_ds * err_s) ** 2 + (dn_das * err_as) ** 2)
        return n, max(n_err, 1e-300), diff
    # difference-calibrated
    n = (a_s + a_as - c) / (2.0 * c)
    var = (err_s ** 2 + err_as ** 2) / (4.0 * c ** 2)
    var += (c_err * (a_s + a_as) / (2.0 * c ** 2)) ** 2
    if n < 0.0:
        n_err = math.sqrt(var)
        if n >= -2.0 * n_err:
            return 0.0, max(n_err, 1e-300), c
        raise UnphysicalAsymmetryError(
            "unphysical asymmetry: calibrated occupation negative beyond 2 sigma")
    return n, max(math.sqrt(var), 1e-300), c


def extract_occupation(trace: PsdTrace, resp: DetectorResponse | None,
                       mode_freq_hint_hz: float,
                       c_override: tuple[float, float] | float | None = None,
                       method: str = METHOD_RATIO,
                       window_halfwidth_hz: float = 50e3) -> OccupationResult:
    """Full single-trace pipeline: gain correction, sideband-pair fit, and
    occupation with first-order error propagation.

    method 'ratio' uses n = A_aS / (A_S - A_aS); 'difference_calibrated'
    needs a supplied C and uses n = (A_S + A_aS - C) / 2C.
    """
    if method not in (METHOD_RATIO, METHOD_DIFFCAL):
        raise ValueError(f"unknown method {method!r}")
    if method == METHOD_DIFFCAL and c_override is None:
        raise ValueError("difference_calibrated method requires a C value")
    stokes, anti = fit_sideband_pair(trace, resp, mode_freq_hint_hz,
                                     window_halfwidth_hz)
    err_s = stokes.errors()[2]
    err_as = anti.errors()[2]
    if c_override is None:
        c, c_err = 0.0, 0.0
    elif isinstance(c_override, tuple):
        c, c_err = c_override
    else:
        c, c_err = float(c_override), 0.0
    n, n_err, c_used = _occupation_from_areas(stokes.area, err_s, anti.area,
                                              err_as, method, c, c_err)
    return OccupationResult(n=n, n_err=n_err, c_factor=c_used,
                            areas=((stokes.area, float(err_s)),
                                   (anti.area, float(err_as))),
                            ground_state_prob=1.0 / (n + 1.0), method=method,
                            stokes_fit=stokes, anti_fit=anti)


@dataclass(frozen=True)
class CFactor:
    """Calibrated sideband area scale C with its uncertainty."""

    c: float
    c_err: float
    chi2_p: float
    consistent: bool


def calibrate_c(area_records) -> CFactor:
    """Inverse-variance-weighted mean of (A_S - A_aS) across a scan series.

    area_records: iterable of (a_stokes, err_stokes, a_anti, err_anti).
    Mutual inconsistency (chi-square p < 1e-3) sets the warning flag, it is
    not a failure.
    """
    rec = np.asarray(list(area_records), dtype=float)
    if rec.shape[0] < 2:
        raise LibrotorError("C calibration needs at least 2 spectra")
    diffs = rec[:, 0] - rec[:, 2]
    var = rec[:, 1] ** 2 + rec[:, 3] ** 2
    if np.all(var > 0):
        w = 1.0 / var
        c = float(np.sum(w * diffs) / np.sum(w))
        c_err = float(1.0 / math.sqrt(np.sum(w)))
        chi2 = float(np.sum((diffs - c) ** 2 / var))
        p = float(chi2_dist.sf(chi2, max(diffs.size - 1, 1)))
    else:
        c = float(np.mean(diffs))
        scatter = float(np.std(diffs, ddof=1)) if diffs.size > 1 else 0.0
        c_err = scatter / math.sqrt(diffs.size)
        p = 1.0 if scatter == 0.0 else 0.0
    return CFactor(c=c, c_err=c_err, chi2_p=p, consistent=p >= 1e-3)


# ---------------------------------------------------------------------------
# full scan analysis

@dataclass(frozen=True)
class TraceAnalysis:
    detuning_hz: float
    channel: str
    label: str
    occupation: OccupationResult | None
    error: str | None = None


@dataclass(frozen=True)
class ModeScanReport:
    label: str
    channel: str
    traces: list[TraceAnalysis]
    c_cal: CFactor | None
    frequency_fit: ScanFitResult | None
    linewidth_fit: ScanFitResult | None
    occupation_fit: ScanFitResult | None
    inertia: float | None
    derived: DerivedScalars | None
    n_best: float | None
    n_best_err: float | None
    best_detuning_hz: float | None


@dataclass(frozen=True)
class ScanReport:
    modes: list[ModeScanReport]


def _auto_hint(trace: PsdTrace) -> float:
    """Locate the dominant sideband offset from the heterodyne carrier."""
    het = trace.meta["het_freq_hz"]
    offsets = np.abs(trace.freq_hz - het)
    span = trace.freq_hz[-1] - trace.freq_hz[0]
    mask = (offsets > 0.05 * span) & (offsets < 0.48 * span)
    idx = np.flatnonzero(mask)
    best = idx[np.argmax(trace.values[idx])]
    return float(offsets[best])


def _axis_for_label(label: str) -> str:
    return "b" if label == "alpha" else "a"


def analyze_scan(traces, setup: OpticalSetup,
                 resp: DetectorResponse | None = None,
                 mode_hints: dict[str, float] | None = None,
                 method: str = METHOD_DIFFCAL,
                 window_halfwidth_hz: float = 50e3,
                 temperature_method: str = "bose",
                 clip_sigma: float = 5.0,
                 max_clip_rounds: int = 2) -> ScanReport:
    """End-to-end analysis of a detuning scan.

    Traces are grouped by detection channel (one librational mode per cavity
    channel).  Per-trace sideband fits feed the C calibration, the
    occupation extraction, and the three scan fits; the coupling from the
    linewidth fit then gives the moment of inertia and derived scalars.
    """
    by_channel: dict[str, list[PsdTrace]] = {}
    for tr in traces:
        by_channel.setdefault(tr.meta.get("channel", "backscatter_y"), []).append(tr)

    reports = []
    for channel, ch_traces in sorted(by_channel.items()):
        ch_traces = sorted(ch_traces, key=lambda t: t.meta.get("detuning_hz") or 0.0)
        label = CHANNEL_MODE.get(channel, "alpha")
        if mode_hints and channel in mode_hints:
            hint = mode_hints[channel]
        else:
            hint = _auto_hint(ch_traces[0])

        pair_fits = []
        analyses = []
        for tr in ch_traces:
            det_hz = tr.meta.get("detuning_hz")
            try:
                occ = extract_occupation(tr, resp, hint, method=METHOD_RATIO,
                                         window_halfwidth_hz=window_halfwidth_hz)
                pair_fits.append((tr, occ))
                analyses.append(TraceAnalysis(det_hz, channel, label, occ))
            except LibrotorError as exc:
                analyses.append(TraceAnalysis(det_hz, channel, label, None,
                                              error=str(exc)))
        if len(pair_fits) < 4:
            raise UnderdeterminedScanError(
                f"underdetermined scan: only {len(pair_fits)} analyzable traces "
                f"on channel {channel}")

        c_cal = calibrate_c([(o.areas[0][0], o.areas[0][1],
                              o.areas[1][0], o.areas[1][1])
                             for _, o in pair_fits])

        if method == METHOD_DIFFCAL:
            analyses = []
            pair_fits2 = []
            for tr in ch_traces:
                det_hz = tr.meta.get("detuning_hz")
                try:
                    occ = extract_occupation(tr, resp, hint,
                                             c_override=(c_cal.c, c_cal.c_err),
                                             method=METHOD_DIFFCAL,
                                             window_halfwidth_hz=window_halfwidth_hz)
                    pair_fits2.append((tr, occ))
                    analyses.append(TraceAnalysis(det_hz, channel, label, occ))
                except LibrotorError as exc:
                    analyses.append(TraceAnalysis(det_hz, channel, label, None,
                                                  error=str(exc)))
            pair_fits = pair_fits2
            if len(pair_fits) < 4:
                raise UnderdeterminedScanError(
                    "underdetermined scan after difference calibration")

        # Build scan-fit inputs: the sideband pair gives two estimates each of
        # the effective frequency and linewidth; combine by inverse variance.
        freq_pts, lw_pts, occ_pts = [], [], []
        for tr, occ in pair_fits:
            det_hz = tr.meta.get("detuning_hz")
            if det_hz is None:
                continue
            het = tr.meta["het_freq_hz"]
            ests_f, ests_w = [], []
            for fit in (occ.stokes_fit, occ.anti_fit):
                errs = fit.errors()
                if fit.covariance[0, 0] == 0:
                    continue  # constrained fit carries no frequency information
                ests_f.append((abs(fit.center - het), errs[0]))
                ests_w.append((fit.linewidth_fwhm, errs[1]))
            f_eff, f_err = _ivw(ests_f)
            w_eff, w_err = _ivw(ests_w)
            det = TWO_PI * det_hz
            freq_pts.append((det, TWO_PI * f_eff, TWO_PI * f_err))
            lw_pts.append((det, TWO_PI * w_eff, TWO_PI * w_err))
            occ_pts.append((det, occ.n, occ.n_err))

        frequency_fit = linewidth_fit = occupation_fit = None
        inertia = derived = None
        try:
            frequency_fit = fit_scan_frequency(freq_pts, setup.kappa,
                                               clip_sigma, max_clip_rounds)
            omega_bare = frequency_fit.omega_bare
            linewidth_fit = fit_scan_linewidth(lw_pts, omega_bare, setup.kappa,
                                               clip_sigma, max_clip_rounds)
            occupation_fit = fit_occupation_curve(occ_pts, omega_bare,
                                                  setup.kappa,
                                                  g_fixed=linewidth_fit.g_abs,
                                                  clip_sigma=clip_sigma,
                                                  max_clip_rounds=max_clip_rounds)
        except (UnderdeterminedScanError, DegenerateFitError):
            pass

        n_best = n_best_err = best_det = None
        valid = [(o.n, o.n_err, tr.meta.get("detuning_hz")) for tr, o in pair_fits]
        if valid:
            n_best, n_best_err, best_det = min(valid, key=lambda v: v[0])

        if linewidth_fit is not None and abs(setup.e_cav0) > 0 \
                and abs(setup.e_tw0) > 0:
            omega_bare = frequency_fit.omega_bare
            inertia = physics.moment_of_inertia_from_coupling(
                linewidth_fit.g_abs, omega_bare, setup, _axis_for_label(label))
            if n_best is not None:
                from scipy.constants import hbar
                zpf = math.sqrt(hbar / (2.0 * inertia * omega_bare))
                mode = LibrationMode(label=label, omega=omega_bare,
                                     g=linewidth_fit.g_abs, zpf=zpf)
                derived = physics.derived_scalars(mode, n_best, inertia,
                                                  temperature_method)

        reports.append(ModeScanReport(
            label=label, channel=channel, traces=analyses, c_cal=c_cal,
            frequency_fit=frequency_fit, linewidth_fit=linewidth_fit,
            occupation_fit=occupation_fit, inertia=inertia, derived=derived,
            n_best=n_best, n_best_err=n_best_err, best_detuning_hz=best_det))
    return ScanReport(modes=reports)


def _ivw(estimates):
    """Inverse-variance-weighted mean of (value, err) pairs."""
    vals = np.array([v for v, _ in estimates], dtype=float)
    errs = np.array([e for _, e in estimates], dtype=float)
    if np.all(errs > 0):
        w = 1.0 / errs ** 2
        return float(np.sum(w * vals) / np.sum(w)), float(1.0 / math.sqrt(np.sum(w)))
    return float(np.mean(vals)), float(np.max(errs))
