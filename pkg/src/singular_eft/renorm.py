"""Renormalization of the leading-order contact coupling.

In a singular channel (lam > (l+1/2)**2) the attractive 1/r**2 interaction
supports no unique cutoff limit by itself; one contact counterterm C(Lambda)
absorbs the cutoff dependence.  Its running is a limit cycle: the reduced
coupling y = Lambda**(2l+1) C climbs monotonically in ln(Lambda), diverges,
and reappears from below with log-period pi/nu.  This module provides the
closed-form running, numeric calibration of C to one scattering datum, and
trajectory tracing with pole detection and extraction of the cycle's scale
Lambda_*.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, least_squares

from singular_eft.model import CountertermSet, ModelParams, nu_l
from singular_eft.solver import PoleError, build_grid, solve_k

__all__ = [
    "RGTrajectory",
    "BranchExhaustedError",
    "analytic_c0",
    "calibrate_c0",
    "trace_limit_cycle",
]

_LOG = logging.getLogger(__name__)


class BranchExhaustedError(RuntimeError):
    """Calibration scanned its branch without finding a root.

    Carries the scanned couplings and residuals on the ``scan`` attribute so
    callers can see how the datum was missed.
    """

    def __init__(self, message: str, scan=()):
        super().__init__(message)
        self.scan = tuple(scan)


@dataclass(frozen=True)
class RGTrajectory:
    """Traced running of the LO counterterm over a cutoff window.

    ``cutoffs`` are strictly increasing; between consecutive ``poles`` the
    reduced coupling cutoffs**(2l+1) * couplings is continuous and increasing
    in ln(cutoff), and pole spacing in ln(cutoff) is pi/nu to fit tolerance.
    ``lambda_star`` is the fitted cycle scale, reduced by whole periods to
    lie at or below the first cutoff; ``branch_id`` counts how many poles of
    the running sit between lambda_star and the first cutoff.
    """

    params: ModelParams
    cutoffs: np.ndarray = field(repr=False)
    couplings: np.ndarray = field(repr=False)
    poles: tuple[float, ...]
    lambda_star: float
    branch_id: int

    @property
    def reduced_couplings(self) -> np.ndarray:
        n = 2 * self.params.l + 1
        return self.cutoffs**n * self.couplings


def analytic_c0(params: ModelParams, cutoff: float, lambda_star: float) -> float:
    """Closed-form limit-cycle running of the LO contact coupling.

    C(Lambda) = -(lam/Lambda**n) * (n - 2 nu t) / (n + 2 nu t) with n = 2l+1
    and t = tan(nu ln(Lambda/Lambda_*)); the scale is fixed so that
    C(Lambda_*) = -lam/Lambda_***n.

    Raises ValueError in a non-singular channel (no counterterm is needed
    there) and PoleError at cutoffs where the running diverges.
    """
    idx = nu_l(params)
    if not idx.singular or idx.value == 0.0:
        raise ValueError(
            "analytic running exists only in singular channels (lam > (l+1/2)**2)"
        )
    if cutoff <= 0.0 or lambda_star <= 0.0:
        raise ValueError("cutoff and lambda_star must be positive")
    nu = idx.value
    n = 2 * params.l + 1
    t = math.tan(nu * math.log(cutoff / lambda_star))
    denom = n + 2.0 * nu * t
    if abs(denom) < 1e-8 * (n + abs(2.0 * nu * t)):
        raise PoleError(f"limit-cycle pole of C(Lambda) at cutoff {cutoff:g}")
    return -(params.lam / cutoff**n) * (n - 2.0 * nu * t) / denom


def _mobius_fit(cs, ks):
    """Fit k(C) = (alpha + beta C)/(1 + gamma C) through three samples.

    The on-shell amplitude is exactly of this form at fixed grid because the
    contact term is a rank-one update of the Nystrom matrix.  Couplings are
    normalized before solving so the 3x3 system stays well conditioned.
    Returns (alpha, beta, gamma, scale) with beta, gamma in normalized units.
    """
    s = max(*(abs(c) for c in cs), 1e-300)
    ch = np.asarray(cs) / s
    k = np.asarray(ks)
    a = np.column_stack([np.ones(3), ch, -k * ch])
    coef = np.linalg.solve(a, k)
    return coef[0], coef[1], coef[2], s


def calibrate_c0(
    params: ModelParams,
    cutoff: float,
    datum: tuple[float, float],
    seed: float = 0.0,
    nodes_per_panel: int = 40,
) -> float:
    """Find the LO coupling reproducing k_l(p_d, p_d) = k_d at this cutoff.

    Parameters
    ----------
    params : ModelParams
    cutoff : float
    datum : (p_d, k_d)
        On-shell momentum and reduced amplitude to reproduce; p_d < cutoff/10.
    seed : float
        Starting guess; during cutoff sweeps pass the previous root so the
        search stays continuous in ln(cutoff).
    nodes_per_panel : int
        Grid resolution handed to the solver.

    The amplitude is an exact degree-(1,1) rational in C at fixed grid, so
    three probe solves determine the root algebraically; it is then bracketed
    and polished with a bracketing root-finder and accepted only when the
    datum residual is below 1e-10 (relative to max(1, |k_d|)).

    Raises BranchExhaustedError when no coupling reproduces the datum (for
    instance a datum at the amplitude's large-C asymptote).
    """
    p_d, k_d = datum
    if not 0.0 < p_d < cutoff / 10.0:
        raise ValueError("datum momentum must satisfy 0 < p_d < cutoff/10")
    if not math.isfinite(k_d):
        raise ValueError("datum amplitude must be finite")
    grid = build_grid(cutoff, p_d, nodes_per_panel=nodes_per_panel)

    def k_of(c: float) -> float:
        cts = CountertermSet(cutoff=cutoff, c_lo=c)
        return solve_k(params, cts, p_d, grid).onshell_value

    tol = 1e-10 * max(1.0, abs(k_d))
    n = 2 * params.l + 1
    scale = max(abs(seed), max(params.lam, 1.0) / cutoff**n)

    probes: list[float] = []
    values: list[float] = []
    offset = 0
    for target in (seed, seed + 0.1 * scale, seed - 0.1 * scale):
        c = target
        for _ in range(8):
            try:
                values.append(k_of(c))
                probes.append(c)
                break
            except PoleError:
                offset += 1
                c = target + 0.037 * offset * scale
                _LOG.info("calibration probe hit a pole; re-probing at %g", c)
        else:
            raise BranchExhaustedError(
                f"could not place calibration probes at cutoff {cutoff:g}",
                scan=zip(probes, values),
            )

    try:
        alpha, beta, gamma, s = _mobius_fit(probes, values)
        denom = beta - gamma * k_d
        c_hat = s * (k_d - alpha) / denom if denom != 0.0 else math.inf
    except np.linalg.LinAlgError:
        c_hat = math.inf

    if math.isfinite(c_hat):
        try:
            r_hat = k_of(c_hat) - k_d
            if abs(r_hat) <= tol:
                return c_hat
            # polish: expand a bracket around the prediction
            delta = max(abs(c_hat) * 1e-6, scale * 1e-9)
            lo, hi, r_lo, r_hi = c_hat - delta, c_hat + delta, None, None
            for _ in range(60):
                try:
                    r_lo = k_of(lo) - k_d
                    r_hi = k_of(hi) - k_d
                except PoleError:
                    _LOG.info("bracket edge hit a pole near %g; shrinking", c_hat)
                    delta *= 0.25
                    lo, hi = c_hat - delta, c_hat + delta
                    continue
                if r_lo == 0.0:
                    return lo
                if r_hi == 0.0:
                    return hi
                if r_lo * r_hi < 0.0:
                    root = brentq(lambda c: k_of(c) - k_d, lo, hi, rtol=8.9e-16)
                    if abs(k_of(root) - k_d) <= tol:
                        return root
                    break
                delta *= 8.0
                lo, hi = c_hat - delta, c_hat + delta
        except PoleError:
            _LOG.info("prediction %g sits on a pole; falling back to scan", c_hat)

    # fallback: scan outward from the seed on both sides of the amplitude's
    # pole in C, then report failure with the scan attached
    scan: list[tuple[float, float]] = []
    spans = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 28)]) * scale
    best = None
    prev: tuple[float, float] | None = None
    for sign in (1.0, -1.0):
        prev = None
        for span in spans:
            c = seed + sign * span
            try:
                r = k_of(c) - k_d
            except PoleError:
                prev = None
                continue
            scan.append((c, r))
            if abs(r) <= tol:
                return c
            if prev is not None and prev[1] * r < 0.0:
                # sign change: either a root or the amplitude's pole in C
                try:
                    a, b = sorted((prev[0], c))
                    root = brentq(lambda cc: k_of(cc) - k_d, a, b, rtol=8.9e-16)
                    if abs(k_of(root) - k_d) <= tol:
                        return root
                except PoleError:
                    pass
            if best is None or abs(r) < abs(best[1]):
                best = (c, r)
            prev = (c, r)
    raise BranchExhaustedError(
        f"no coupling reproduces k={k_d:g} at p={p_d:g}, cutoff={cutoff:g} "
        f"(closest residual {best[1]:.3e} at C={best[0]:.6g})",
        scan=scan,
    )


def _fit_lambda_star(params, cutoffs, couplings):
    """Least-squares cycle scale from the reduced-coupling samples.

    Near-pole samples are masked; the phase is seeded by inverting the
    closed form at the best-conditioned sample and the result is reduced by
    whole log-periods to lie at or below the first cutoff.
    """
    lam = params.lam
    nu = nu_l(params).value
    n = 2 * params.l + 1
    y = cutoffs**n * couplings
    mask = np.abs(y) < 20.0 * lam
    if np.count_nonzero(mask) < 3:
        mask = np.ones_like(y, dtype=bool)
    yc, lc = y[mask], cutoffs[mask]

    i0 = int(np.argmin(np.abs(yc + lam)))  # best sample: near tan = 0
    t0 = n * (lam + yc[i0]) / (2.0 * nu * (lam - yc[i0]))
    phi0 = nu * math.log(lc[i0]) - math.atan(t0)

    def residuals(phi):
        t = np.tan(nu * np.log(lc) - phi[0])
        ym = -lam * (n - 2.0 * nu * t) / (n + 2.0 * nu * t)
        return (yc - ym) / (lam + np.abs(yc))

    fit = least_squares(residuals, x0=[phi0], loss="soft_l1", f_scale=0.1)
    raw = math.exp(fit.x[0] / nu)
    shift = math.floor(nu * math.log(cutoffs[0] / raw) / math.pi)
    return raw * math.exp(shift * math.pi / nu)


def trace_limit_cycle(
    params: ModelParams,
    datum: tuple[float, float],
    cutoff_range: tuple[float, float],
    samples_per_decade: int = 16,
) -> RGTrajectory:
    """Trace C(Lambda) over a cutoff window by seeded continuation.

    The window is sampled geometrically; each point is calibrated to the
    datum with the previous reduced coupling as seed.  A drop of the reduced
    coupling between neighbours flags a limit-cycle pole, which is refined by
    bisection in ln(cutoff) using the monotonicity of y = Lambda**(2l+1) C
    between poles.  The cycle scale Lambda_* is fitted at the end.
    """
    idx = nu_l(params)
    if not idx.singular or idx.value == 0.0:
        raise ValueError("only singular channels run on a limit cycle")
    lo, hi = cutoff_range
    if not 0.0 < lo < hi:
        raise ValueError("need 0 < cutoff_range[0] < cutoff_range[1]")
    n = 2 * params.l + 1
    count = max(2, int(math.ceil(samples_per_decade * math.log10(hi / lo))) + 1)
    ladder = np.geomspace(lo, hi, count)

    cutoffs: list[float] = []
    couplings: list[float] = []
    seed_y = 0.0
    for cut in ladder:
        try:
            c = calibrate_c0(params, cut, datum, seed=seed_y / cut**n)
        except PoleError:
            _LOG.info("cutoff %g sits on a counterterm pole; sample dropped", cut)
            continue
        cutoffs.append(float(cut))
        couplings.append(c)
        seed_y = cut**n * c

    cutoffs_arr = np.asarray(cutoffs)
    couplings_arr = np.asarray(couplings)
    y = cutoffs_arr**n * couplings_arr

    poles = []
    for i in np.flatnonzero(np.diff(y) < 0.0):
        poles.append(
            _refine_pole(
                params, datum, cutoffs_arr[i], cutoffs_arr[i + 1], y[i], y[i + 1], n
            )
        )

    lambda_star = _fit_lambda_star(params, cutoffs_arr, couplings_arr)
    nu = idx.value
    theta = nu * math.log(cutoffs_arr[0] / lambda_star)
    theta_pole = math.atan(-n / (2.0 * nu))
    branch_id = int(math.floor((theta - theta_pole) / math.pi))
    return RGTrajectory(
        params=params,
        cutoffs=cutoffs_arr,
        couplings=couplings_arr,
        poles=tuple(poles),
        lambda_star=lambda_star,
        branch_id=branch_id,
    )


def _refine_pole(params, datum, lo, hi, y_lo, y_hi, n):
    """Bisect in ln(cutoff) for the pole inside (lo, hi).

    Strict monotonicity of the reduced coupling between poles decides the
    side: a midpoint sample above y(lo) is still on the rising branch below
    the pole, one below y(hi) is already past it.
    """
    for _ in range(60):
        if hi / lo - 1.0 < 1e-7:
            break
        mid = math.sqrt(lo * hi)
        try:
            c_mid = calibrate_c0(params, mid, datum, seed=y_lo / mid**n)
        except (PoleError, BranchExhaustedError):
            # the root coupling is beyond numeric reach: the midpoint sits in
            # the pole's numeric width; try once slightly off, else accept it
            mid2 = mid * (hi / mid) ** 0.2
            try:
                c_mid = calibrate_c0(params, mid2, datum, seed=y_lo / mid2**n)
                mid = mid2
            except (PoleError, BranchExhaustedError):
                return mid
        y_mid = mid**n * c_mid
        if y_mid >= y_lo:
            lo, y_lo = mid, y_mid
        else:
            hi, y_hi = mid, y_mid
    return math.sqrt(lo * hi)
