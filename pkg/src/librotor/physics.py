"""Closed-form optomechanics of a librationally trapped nanorotor.

All frequencies and rates in this module are angular (rad/s).  File formats
and the CLI speak Hz and convert exactly by 2*pi at the boundary.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from scipy.constants import epsilon_0, hbar, k as k_B

from .errors import LibrotorError, NoNetCoolingError, SpringInstabilityError

GAMMA_ZERO = "gamma_zero"
GAMMA_HALF_PI = "gamma_half_pi"


@dataclass(frozen=True)
class RotorModel:
    """Rigid-rotor identity: principal moments of inertia, optical
    susceptibilities, volume, and the Euler-angle branch of the third angle.

    Inertias in kg m^2, volume in m^3, susceptibilities dimensionless with
    chi_a <= chi_b <= chi_c.
    """

    inertia_a: float
    inertia_b: float
    inertia_c: float
    chi_a: float
    chi_b: float
    chi_c: float
    volume: float
    gamma_euler_branch: str = GAMMA_HALF_PI

    def __post_init__(self):
        for name in ("inertia_a", "inertia_b", "inertia_c"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (self.chi_a <= self.chi_b <= self.chi_c):
            raise ValueError("susceptibilities must satisfy chi_a <= chi_b <= chi_c")
        if self.volume <= 0:
            raise ValueError("volume must be > 0")
        if self.gamma_euler_branch not in (GAMMA_ZERO, GAMMA_HALF_PI):
            raise ValueError(f"unknown gamma_euler_branch {self.gamma_euler_branch!r}")

    def branch_axes(self):
        """Per-mode (chi_minor, inertia) pairs for the alpha and beta modes.

        On the gamma ~ pi/2 branch alpha librates about the b-axis
        (chi_c - chi_a, I_b) and beta about the a-axis (chi_c - chi_b, I_a).
        The gamma ~ 0 branch swaps the a and b indices.
        """
        if self.gamma_euler_branch == GAMMA_HALF_PI:
            return (self.chi_a, self.inertia_b), (self.chi_b, self.inertia_a)
        return (self.chi_b, self.inertia_a), (self.chi_a, self.inertia_b)


@dataclass(frozen=True)
class OpticalSetup:
    """Tweezer and cavity drive parameters.

    Field amplitudes are complex (V/m); kappa and detuning are angular
    (rad/s).  Finesse, FSR, and waists are carried as metadata only.
    """

    e_tw0: complex
    e_cav0: complex
    kappa: float
    detuning: float
    wavelength: float
    pol_angle_phi: float = 0.0
    n_cav: float = 0.0
    finesse: float | None = None
    fsr_hz: float | None = None
    waist_x: float | None = None
    waist_y: float | None = None
    waist_cav: float | None = None

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be > 0")
        if self.n_cav < 0:
            raise ValueError("n_cav must be >= 0")
        if not -math.pi / 2 <= self.pol_angle_phi <= math.pi / 2:
            raise ValueError("pol_angle_phi must lie in [-pi/2, pi/2]")

    @property
    def omega_laser(self) -> float:
        return 2.0 * math.pi * 299792458.0 / self.wavelength


@dataclass(frozen=True)
class LibrationMode:
    """One librational mode: frequency, coupling, zero-point amplitude, and
    the heating channels feeding it."""

    label: str  # "alpha" or "beta"
    omega: float  # rad/s
    g: complex  # rad/s
    zpf: float  # rad
    gamma_thermal: float = 0.0  # phonons/s
    gamma_recoil: float = 0.0  # phonons/s
    gamma_intrinsic: float = 0.0  # rad/s

    def __post_init__(self):
        if self.label not in ("alpha", "beta"):
            raise ValueError("label must be 'alpha' or 'beta'")
        if self.omega <= 0:
            raise ValueError("omega must be > 0")
        if self.zpf <= 0:
            raise ValueError("zpf must be > 0")
        for name in ("gamma_thermal", "gamma_recoil", "gamma_intrinsic"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def gamma_heating(self) -> float:
        """Total non-cavity heating rate (phonons/s)."""
        return self.gamma_thermal + self.gamma_recoil


@dataclass(frozen=True)
class OccupationBudget:
    """Steady-state occupation and the rates it was built from."""

    n_total: float
    n_phase: float
    a_plus: float
    a_minus: float
    n_min_paper: float


def libration_frequencies(rotor: RotorModel, optics: OpticalSetup) -> tuple[float, float]:
    """Harmonic libration frequencies (Omega_alpha, Omega_beta) in rad/s.

    Omega_alpha = sqrt(eps0 V (chi_c - chi_a) / (2 I_b)) |E_tw(0)| and the
    beta analogue with (chi_c - chi_b, I_a); degenerate susceptibility gives
    an untrapped (zero-frequency) libration.
    """
    (chi_al, i_al), (chi_be, i_be) = rotor.branch_axes()
    e2 = abs(optics.e_tw0)
    out = []
    for chi_minor, inertia, label in ((chi_al, i_al, "alpha"), (chi_be, i_be, "beta")):
        dchi = rotor.chi_c - chi_minor
        if dchi <= 0:
            warnings.warn(f"untrapped libration: degenerate susceptibility for {label}")
            out.append(0.0)
        else:
            out.append(math.sqrt(epsilon_0 * rotor.volume * dchi / (2.0 * inertia)) * e2)
    return out[0], out[1]


def zero_point_amplitudes(rotor: RotorModel, freqs: tuple[float, float]) -> tuple[float, float]:
    """Ground-state angular widths sqrt(hbar / 2 I Omega) for both modes."""
    (_, i_al), (_, i_be) = rotor.branch_axes()
    om_a, om_b = freqs
    if om_a <= 0 or om_b <= 0:
        raise ValueError("frequencies must be > 0")
    return (math.sqrt(hbar / (2.0 * i_al * om_a)),
            math.sqrt(hbar / (2.0 * i_be * om_b)))


def coupling_rates(rotor: RotorModel, optics: OpticalSetup,
                   freqs: tuple[float, float]) -> tuple[complex, complex]:
    """Optomechanical coupling rates (g_alpha, g_beta) in rad/s (complex).

    g_mu = zpf_mu * k_mu / hbar with
    k_mu = (eps0 V / 4) (chi_c - chi_minor) E_c(0) E_tw*(0).
    Zero cavity field gives zero coupling (valid, not an error).
    """
    (chi_al, _), (chi_be, _) = rotor.branch_axes()
    zpf_a, zpf_b = zero_point_amplitudes(rotor, freqs)
    prod = optics.e_cav0 * optics.e_tw0.conjugate()
    pref = epsilon_0 * rotor.volume / 4.0
    k_alpha = pref * (rotor.chi_c - chi_al) * prod
    k_beta = pref * (rotor.chi_c - chi_be) * prod
    return zpf_a * k_alpha / hbar, zpf_b * k_beta / hbar


def pump_rate(rotor: RotorModel, optics: OpticalSetup) -> complex:
    """Cavity pump rate eta = -eps0 chi_a V E_c(0) E_tw*(0) sin(phi) / 4 hbar."""
    return (-epsilon_0 * rotor.chi_a * rotor.volume
            * optics.e_cav0 * optics.e_tw0.conjugate()
            * math.sin(optics.pol_angle_phi) / (4.0 * hbar))


def sideband_rates(mode: LibrationMode, optics: OpticalSetup) -> tuple[float, float]:
    """(A_minus, A_plus): anti-Stokes (cooling) and Stokes (heating) rates.

    A_mu^pm = |g|^2 kappa / ((kappa/2)^2 + (Delta pm Omega)^2), with the
    anti-Stokes rate taking the (Delta - Omega) denominator.
    """
    g2 = abs(mode.g) ** 2
    kap = optics.kappa
    half2 = (kap / 2.0) ** 2
    a_minus = g2 * kap / (half2 + (optics.detuning - mode.omega) ** 2)
    a_plus = g2 * kap / (half2 + (optics.detuning + mode.omega) ** 2)
    return a_minus, a_plus


def steady_state_occupation(mode: LibrationMode, optics: OpticalSetup,
                            s_phi_at_omega: float = 0.0) -> OccupationBudget:
    """Equilibrium phonon occupation under cavity cooling.

    n = (Gamma + A+) / (A- - A+) + n_phi with Gamma the total non-cavity
    heating rate and n_phi = S_phi(Omega) n_cav / kappa (S_phi single-sided,
    rad^2/Hz, kappa in rad/s -- the convention adopted here).  Also reports
    the detuning-independent floor kappa^2 / 4 Omega^2.
    """
    a_minus, a_plus = sideband_rates(mode, optics)
    if a_minus <= a_plus:
        raise NoNetCoolingError("no net cooling at this detuning")
    n_phase = s_phi_at_omega * optics.n_cav / optics.kappa
    n_total = (mode.gamma_heating + a_plus) / (a_minus - a_plus) + n_phase
    n_min = optics.kappa ** 2 / (4.0 * mode.omega ** 2)
    return OccupationBudget(n_total=n_total, n_phase=n_phase,
                            a_plus=a_plus, a_minus=a_minus, n_min_paper=n_min)


def minimum_occupation(kappa: float, omega: float, form: str = "paper") -> float:
    """Detuning-independent occupation floor in the resolved-sideband limit.

    Two published forms coexist and disagree by a factor of 4: the quoted
    closed form kappa^2 / 4 Omega^2 ('paper') and the Delta = Omega limit of
    the rate-ratio occupation, A+/(A- - A+) -> kappa^2 / 16 Omega^2
    ('rate_ratio').  Both are kept; the forward model reports the former.
    """
    if kappa <= 0 or omega <= 0:
        raise ValueError("kappa and omega must be > 0")
    if form == "paper":
        return kappa ** 2 / (4.0 * omega ** 2)
    if form == "rate_ratio":
        return kappa ** 2 / (16.0 * omega ** 2)
    raise ValueError(f"unknown form {form!r}")


def effective_linewidth(mode: LibrationMode, optics: OpticalSetup,
                        omega_eval: float) -> float:
    """Cavity-broadened motional linewidth gamma_eff(omega) in rad/s."""
    g2 = abs(mode.g) ** 2
    kap, det = optics.kappa, optics.detuning
    half2 = (kap / 2.0) ** 2
    den = ((half2 + (omega_eval + det) ** 2)
           * (half2 + (omega_eval - det) ** 2))
    return mode.gamma_intrinsic + 4.0 * g2 * mode.omega * det * kap / den


def effective_frequency(mode: LibrationMode, optics: OpticalSetup,
                        omega_eval: float) -> float:
    """Optical-spring-shifted mode frequency Omega_eff(omega) in rad/s."""
    g2 = abs(mode.g) ** 2
    kap, det = optics.kappa, optics.detuning
    half2 = (kap / 2.0) ** 2
    den = ((half2 + (omega_eval + det) ** 2)
           * (half2 + (omega_eval - det) ** 2))
    shift = 4.0 * g2 * mode.omega * det * (half2 - omega_eval ** 2 + det ** 2) / den
    radicand = mode.omega ** 2 - shift
    if radicand <= 0:
        raise SpringInstabilityError("spring instability: radicand not positive")
    return math.sqrt(radicand)


def moment_of_inertia_from_coupling(g: complex, omega: float,
                                    optics: OpticalSetup, axis: str = "b") -> float:
    """Moment of inertia about the requested axis from a fitted coupling.

    Exact algebraic inverse of coupling_rates composed with the zero-point
    amplitude: I = 8 hbar |g|^2 |E_tw(0)|^2 / (Omega^3 |E_c(0)|^2).
    """
    if axis not in ("a", "b"):
        raise ValueError("axis must be 'a' or 'b'")
    if omega <= 0:
        raise ValueError("omega must be > 0")
    if abs(optics.e_cav0) == 0:
        raise LibrotorError("inertia unidentifiable: zero cavity field")
    return (8.0 * hbar * abs(g) ** 2 * abs(optics.e_tw0) ** 2
            / (omega ** 3 * abs(optics.e_cav0) ** 2))


@dataclass(frozen=True)
class DerivedScalars:
    sigma: float  # angular standard deviation, rad
    temperature: float  # K
    t_rev: float  # s
    j_mean: float  # dimensionless


def mode_temperature(omega: float, n: float, method: str = "bose") -> float:
    """Effective temperature of a harmonic mode at occupation n.

    'bose' inverts the Bose law, T = hbar Omega / (k_B ln(1 + 1/n)), with
    T(0) = 0 by continuous extension; 'equipartition' uses T = n hbar
    Omega / k_B.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 0.0
    if method == "bose":
        return hbar * omega / (k_B * math.log1p(1.0 / n))
    if method == "equipartition":
        return n * hbar * omega / k_B
    raise ValueError(f"unknown temperature method {method!r}")


def derived_scalars(mode: LibrationMode, n: float, inertia: float,
                    temperature_method: str = "bose") -> DerivedScalars:
    """Angular width, temperature, revival time, and mean angular momentum.

    sigma = zpf sqrt(2n+1); T by Bose inversion (default); T_rev = 2 pi
    I / hbar; j = sqrt(k_B T I) / hbar.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    sigma = mode.zpf * math.sqrt(2.0 * n + 1.0)
    temp = mode_temperature(mode.omega, n, temperature_method)
    t_rev = 2.0 * math.pi * inertia / hbar
    j_mean = math.sqrt(k_B * temp * inertia) / hbar
    return DerivedScalars(sigma=sigma, temperature=temp, t_rev=t_rev, j_mean=j_mean)


def build_modes(rotor: RotorModel, optics: OpticalSetup,
                gamma_thermal: tuple[float, float] = (0.0, 0.0),
                gamma_recoil: tuple[float, float] = (0.0, 0.0),
                gamma_intrinsic: tuple[float, float] = (0.0, 0.0),
                ) -> tuple[LibrationMode, LibrationMode]:
    """Assemble both LibrationModes from the rotor and drive parameters."""
    freqs = libration_frequencies(rotor, optics)
    zpfs = zero_point_amplitudes(rotor, freqs)
    gs = coupling_rates(rotor, optics, freqs)
    out = []
    for i, label in enumerate(("alpha", "beta")):
        out.append(LibrationMode(
            label=label, omega=freqs[i], g=gs[i], zpf=zpfs[i],
            gamma_thermal=gamma_thermal[i], gamma_recoil=gamma_recoil[i],
            gamma_intrinsic=gamma_intrinsic[i]))
    return out[0], out[1]
