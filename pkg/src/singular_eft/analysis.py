"""Log-periodic asymptotics extraction and RG diagnostics.

A renormalized singular channel leaves a fingerprint in its half-off-shell
amplitude: for p' = p x well below the cutoff it falls like
A x**(-1/2) cos(nu ln(x p / Lambda_*)).  ``fit_oscillation`` recovers the
log-frequency, envelope power and phase from sampled curves.
``born_check`` compares weak-coupling solutions against the first two Born
terms, and ``rg_variation`` quantifies how fast an observable's cutoff
dependence dies off.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .model import CountertermSet, ModelParams, nu_l, v_lo_partial
from .solver import build_grid, pv_moment, solve_k

__all__ = [
    "BornComparison",
    "OscillationFit",
    "RGVariation",
    "born_check",
    "fit_oscillation",
    "rg_variation",
]


@dataclass(frozen=True)
class OscillationFit:
    """Parameters of A x**w cos(nu ln x + phi) fitted to a sampled curve.

    ``residual`` is the rms misfit in the units of the samples; it scales
    with the amplitude and is reported, never used to gate the fit.
    """

    nu_fit: float
    phase_fit: float
    envelope_power: float
    fit_window: tuple[float, float]
    residual: float
    amplitude: float

    def lambda_star(self, p: float) -> float:
        """Scale estimate from the phase, for samples taken at on-shell p.

        Defined modulo exp(pi/nu_fit): the overall sign of the samples is
        not an observable of the fit, so the phase carries a half-turn
        ambiguity.
        """
        return p * math.exp(-self.phase_fit / self.nu_fit)


def fit_oscillation(samples) -> OscillationFit:
    """Fit a log-periodic oscillation to (x, k) samples.

    Zero crossings are located by sign changes with local linear refinement
    in ln x; their spacing pins the log-frequency (pi/nu per crossing), the
    extremum magnitudes between crossings give the envelope power by
    log-log regression, and the first crossing fixes the phase up to a half
    turn.  A least-squares pass then refines all four parameters together.

    Parameters
    ----------
    samples : iterable of (x, value) pairs
        The abscissas must be positive; a dense geometric ladder works
        best.  At least three zero crossings must fall inside the window.

    Raises
    ------
    ValueError
        If fewer than three crossings are found (window too small) or the
        input is not a usable table.
    """
    pts = np.asarray(list(samples), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 8:
        raise ValueError("need a table of at least 8 (x, value) samples")
    order = np.argsort(pts[:, 0])
    x, y = pts[order, 0], pts[order, 1]
    if np.any(x <= 0.0):
        raise ValueError("sample abscissas must be positive")

    sgn = np.sign(y)
    flips = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    if flips.size < 3:
        raise ValueError(
            f"found {flips.size} zero crossings, need at least 3: widen the window"
        )
    lx = np.log(x)
    frac = y[flips] / (y[flips] - y[flips + 1])
    lx_cross = lx[flips] + frac * (lx[flips + 1] - lx[flips])

    nu0 = math.pi / float(np.mean(np.diff(lx_cross)))
    mags, lx_ext = [], []
    for a, b in zip(flips[:-1] + 1, flips[1:] + 1):
        i = a + int(np.argmax(np.abs(y[a:b])))
        mags.append(abs(y[i]))
        lx_ext.append(lx[i])
    w0, log_a0 = np.polyfit(lx_ext, np.log(mags), 1)
    phi0 = 0.5 * math.pi - nu0 * lx_cross[0]

    def resid(theta):
        a, w, nu, phi = theta
        return a * np.exp(w * lx) * np.cos(nu * lx + phi) - y

    best = None
    for phi_start in (phi0, phi0 + math.pi):
        fit = least_squares(
            resid, np.array([math.exp(log_a0), w0, nu0, phi_start]), method="lm"
        )
        if best is None or fit.cost < best.cost:
            best = fit
    a, w, nu, phi = best.x
    if nu < 0.0:
        nu, phi = -nu, -phi
    if a < 0.0:
        a, phi = -a, phi + math.pi
    phi = math.remainder(phi, 2.0 * math.pi)
    rms = math.sqrt(2.0 * best.cost / x.size)
    return OscillationFit(
        nu_fit=float(nu),
        phase_fit=float(phi),
        envelope_power=float(w),
        fit_window=(float(x[0]), float(x[-1])),
        residual=float(rms),
        amplitude=float(a),
    )


@dataclass(frozen=True)
class BornComparison:
    """Solved amplitude next to its first two Born terms.

    ``residual_power`` is the measured exponent of |k - first_born| in the
    coupling, from halving lam; quadratic onset gives 2.
    """

    lam: float
    k_onshell: float
    first_born: float
    second_born: float
    residual_power: float


def born_check(
    params: ModelParams, p: float, cutoff: float, nodes_per_panel: int = 40
) -> BornComparison:
    """Compare the solved amplitude against its Born expansion.

    Solves the channel with no counterterm, evaluates the first Born term
    -lam/(2l+1) analytically and the second by direct principal-value
    quadrature of V G V (independent of the solver's linear algebra), and
    measures how |k - first_born| scales when lam is halved.

    Raises
    ------
    ValueError
        For a singular channel, where the Born series has nothing to say.
    """
    if nu_l(params).singular:
        raise ValueError("Born comparison needs a non-singular channel")

    grid = build_grid(cutoff, p, nodes_per_panel=nodes_per_panel)
    counterterms = CountertermSet(cutoff=cutoff)

    def onshell(lam):
        pars = dataclasses.replace(params, lam=lam)
        return solve_k(pars, counterterms, p, grid).onshell_value

    k_full = onshell(params.lam)
    k_half = onshell(0.5 * params.lam)
    n = 2 * params.l + 1
    born1 = -params.lam / n

    m = params.reduced_mass
    q, wq = grid.nodes, grid.weights
    d = q * q - p * p
    vpq = v_lo_partial(params, p, q)
    vpp = float(v_lo_partial(params, p, p))
    ell = pv_moment(p, cutoff)
    # PV int dq q^2 V(p,q)^2/(q^2-p^2), subtracted at the pole
    integral = (
        np.sum(wq * q * q * vpq * vpq / d)
        + p * p * vpp * vpp * (ell - np.sum(wq / d))
    )
    born2 = -(m * m * p / math.pi**4) * integral

    r_full = abs(k_full - born1)
    r_half = abs(k_half - 0.5 * born1)
    power = math.log(r_full / r_half) / math.log(2.0) if r_half > 0.0 else math.nan
    return BornComparison(
        lam=params.lam,
        k_onshell=float(k_full),
        first_born=born1,
        second_born=float(born2),
        residual_power=float(power),
    )


@dataclass(frozen=True)
class RGVariation:
    """Cutoff-dependence summary of one observable.

    ``residual_power`` is the exponent s of |v(Lambda) - v(Lambda_max)|
    ~ Lambda**(-s); ``is_power_law`` is False when the residuals are too
    irregular for the fit to mean anything (unrenormalized sweeps) or the
    input is constant.
    """

    spread: float
    residual_power: float
    is_power_law: bool


def rg_variation(sweep) -> RGVariation:
    """Diagnose how an observable varies across cutoffs.

    Parameters
    ----------
    sweep : iterable of (cutoff, value) pairs
        At least four distinct cutoffs.

    Notes
    -----
    The residual power is fitted on cutoffs at or below half the largest
    one, against the value at the largest; closer to the reference the
    subtraction itself distorts the slope.
    """
    pts = np.asarray(list(sweep), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 (cutoff, value) pairs")
    order = np.argsort(pts[:, 0])
    cut, val = pts[order, 0], pts[order, 1]
    if np.unique(cut).size < 4:
        raise ValueError("need at least 4 distinct cutoffs")

    if val.max() == val.min():
        return RGVariation(spread=0.0, residual_power=math.nan, is_power_law=False)
    spread = float((val.max() - val.min()) / abs(np.mean(val)))

    resid = np.abs(val[:-1] - val[-1])
    usable = (cut[:-1] <= 0.5 * cut[-1]) & (resid > 0.0)
    if np.count_nonzero(usable) < 3:
        return RGVariation(spread=spread, residual_power=math.nan, is_power_law=False)
    lc, lr = np.log(cut[:-1][usable]), np.log(resid[usable])
    slope, intercept = np.polyfit(lc, lr, 1)
    ss_res = float(np.sum((lr - (slope * lc + intercept)) ** 2))
    ss_tot = float(np.sum((lr - np.mean(lr)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 0.0
    return RGVariation(
        spread=spread,
        residual_power=float(-slope),
        is_power_law=bool(r2 > 0.8 and slope < 0.0),
    )
