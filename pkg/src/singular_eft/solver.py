"""Nystrom solver for the cutoff partial-wave K-matrix equation.

The integral equation (principal-value prescription, reduced amplitude
k = m p K / pi^2, cutoff Lambda on the momentum integral)

    k(p', p) = (m p/pi^2) V(p', p)
               - PV int_0^Lambda dq [q/(q^2-p^2)] (m q/pi^2) V(p', q) k(q, p)

is discretized on composite Gauss-Legendre panels.  Three non-smooth
structures need care:

* the principal-value pole at q = p is removed by subtracting the integrand's
  on-shell value, whose integral is known in closed form (``pv_moment``); the
  on-shell amplitude k(p, p) enters the linear system as one extra unknown row;
* the kernel kink at q = p' (from the min/max structure of the long-range
  potential) crosses every row's integration range on the matrix diagonal.
  Each row's rule is therefore rebuilt locally: the panel containing p' is
  split at the kink, fresh Gauss points are laid on both sides, and the
  unknown column is carried to them by barycentric interpolation from the
  panel's own nodes, while the kernel is evaluated exactly at the new points;
* the kink and the pole conspire to give the solution itself a weak
  (q-p) ln|q-p| singularity at the on-shell point.  The two panels touching p
  are parametrized by a cubic (Kress-type) map clustering nodes toward p,
  which turns that term into a C2 function of the panel parameter and
  restores fast convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from singular_eft.model import CountertermSet, ModelParams, v_contact_lo, v_lo_partial

__all__ = [
    "QuadratureGrid",
    "HalfOffShellK",
    "PoleError",
    "build_grid",
    "pv_moment",
    "solve_k",
    "eval_offshell",
    "phase_shift",
]

_PI2 = math.pi**2

# conditioning beyond this marks the solve as sitting on a counterterm pole
_COND_LIMIT = 1e12

# clustering exponent of the graded panels touching the on-shell point
_GRADE = 3


class PoleError(RuntimeError):
    """The linear system is numerically singular.

    During counterterm sweeps this is the signature of a limit-cycle pole at
    the current cutoff, so callers treat it as a skip/refine condition rather
    than a failure.
    """

    def __init__(self, message: str, condition_number: float = math.inf):
        super().__init__(message)
        self.condition_number = condition_number


@dataclass(frozen=True)
class QuadratureGrid:
    """Momentum nodes and weights on (0, Lambda) with an on-shell point.

    Attributes
    ----------
    nodes, weights : ndarray
        Quadrature points strictly inside (0, cutoff) and their weights.
    cutoff : float
        Upper limit Lambda of the momentum integral.
    onshell : float
        Subtraction point p; always a panel boundary, never a node.
    panel_boundaries : tuple of float
        Where the composite rule breaks; integrand kinks go here.
    panel_grades : tuple of int
        Per-panel parametrization: 0 for affine, +g/-g for a power-g map
        clustering nodes toward the panel's left/right endpoint (used by the
        panels touching the on-shell point).
    """

    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    cutoff: float
    onshell: float
    panel_boundaries: tuple[float, ...]
    panel_grades: tuple[int, ...] = field(repr=False, default=())

    @property
    def nodes_per_panel(self) -> int:
        return self.nodes.size // (len(self.panel_boundaries) - 1)


@dataclass(frozen=True)
class HalfOffShellK:
    """Solved half-off-shell column k_l(q_i, p) plus the on-shell value."""

    params: ModelParams
    counterterms: CountertermSet
    grid: QuadratureGrid = field(repr=False)
    column: np.ndarray = field(repr=False)
    onshell_value: float
    p: float
    potential: Callable = field(repr=False)
    condition_number: float


@lru_cache(maxsize=64)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _map_points(a: float, b: float, grade: int, t: np.ndarray):
    """Map [-1, 1] parameters to panel momenta; returns (q, dq/dt)."""
    u = 0.5 * (t + 1.0)
    if grade == 0:
        return a + (b - a) * u, np.full_like(u, 0.5 * (b - a))
    if grade > 0:
        return a + (b - a) * u**grade, 0.5 * (b - a) * grade * u ** (grade - 1)
    g = -grade
    v = 1.0 - u
    return b - (b - a) * v**g, 0.5 * (b - a) * g * v ** (g - 1)


def _invert_map(a: float, b: float, grade: int, x: float) -> float:
    if grade == 0:
        u = (x - a) / (b - a)
    elif grade > 0:
        u = ((x - a) / (b - a)) ** (1.0 / grade)
    else:
        u = 1.0 - ((b - x) / (b - a)) ** (1.0 / -grade)
    return 2.0 * u - 1.0


def build_grid(cutoff, onshell, nodes_per_panel=40, panel_splits=None) -> QuadratureGrid:
    """Composite Gauss-Legendre grid on [0, cutoff] split at the on-shell point.

    Parameters
    ----------
    cutoff : float
        Upper integration limit.
    onshell : float
        On-shell momentum p, 0 < p < cutoff; becomes a panel boundary so no
        node can collide with the principal-value denominator, and the two
        panels touching it are graded toward it.
    nodes_per_panel : int
        Gauss-Legendre order per panel.
    panel_splits : sequence of float, optional
        Extra interior boundaries, e.g. off-shell momenta at which the
        kernel kinks; values outside (0, cutoff) are ignored.

    Notes
    -----
    [onshell, cutoff] is always subdivided geometrically into three panels so
    that node density follows the logarithmic character of the kernel; the
    default therefore has four panels of ``nodes_per_panel`` points each.
    """
    if not 0.0 < onshell < cutoff:
        raise ValueError("need 0 < onshell < cutoff")
    ratio = (cutoff / onshell) ** (1.0 / 3.0)
    bounds = [0.0, onshell, onshell * ratio, onshell * ratio**2, cutoff]
    if panel_splits is not None:
        bounds.extend(s for s in panel_splits if 0.0 < s < cutoff)
    bounds = np.unique(np.asarray(bounds, dtype=float))

    grades = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b == onshell:
            grades.append(-_GRADE)
        elif a == onshell:
            grades.append(_GRADE)
        else:
            grades.append(0)

    t, wt = _leggauss(int(nodes_per_panel))
    nodes, weights = [], []
    for (a, b), grade in zip(zip(bounds[:-1], bounds[1:]), grades):
        q, jac = _map_points(a, b, grade, t)
        nodes.append(q)
        weights.append(wt * jac)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    if np.min(np.abs(nodes - onshell)) <= 1e-13 * onshell:
        raise ValueError("quadrature node collided with the on-shell point")
    return QuadratureGrid(
        nodes=nodes,
        weights=weights,
        cutoff=float(cutoff),
        onshell=float(onshell),
        panel_boundaries=tuple(bounds),
        panel_grades=tuple(grades),
    )


def pv_moment(p: float, cutoff: float) -> float:
    """PV int_0^cutoff dq/(q^2 - p^2) = ln((cutoff-p)/(cutoff+p)) / (2p)."""
    if not 0.0 < p < cutoff:
        raise ValueError("need 0 < p < cutoff")
    return 0.5 / p * math.log((cutoff - p) / (cutoff + p))


def _lo_potential(params: ModelParams, counterterms: CountertermSet) -> Callable:
    def v(p_out, p_in):
        return v_lo_partial(params, p_out, p_in) + v_contact_lo(
            params, counterterms.c_lo, p_out, p_in
        )

    return v


def _bary_basis(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Lagrange basis values l_i(x_s) for interpolation from ``nodes``.

    Returns an array of shape (x.size, nodes.size).  Coordinates are
    normalized to the node span first so the weight products cannot overflow.
    """
    a, b = nodes[0], nodes[-1]
    scale = 2.0 / (b - a)
    t = (nodes - a) * scale - 1.0
    tx = (x - a) * scale - 1.0
    diff = t[:, None] - t[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / np.prod(diff, axis=1)
    dx = tx[:, None] - t[None, :]
    exact = dx == 0.0
    dx[exact] = 1.0
    terms = bw[None, :] / dx
    basis = terms / np.sum(terms, axis=1)[:, None]
    if np.any(exact):
        rows = np.any(exact, axis=1)
        basis[rows] = exact[rows].astype(float)
    return basis


def _row_rule(grid: QuadratureGrid, p: float, x: float, v_nodes: np.ndarray, vfun):
    """Per-row quadrature for PV int V(x,q) q^2 f(q)/(q^2-p^2) dq.

    Returns (omega, s_row): coefficients such that the integral of the
    q^2 V f / (q^2-p^2) part is sum_i omega_i f(q_i) + omega[-1] f(p) (the
    trailing entry multiplies the on-shell value), together with the row's
    value of sum(w/d) needed by the on-shell subtraction term.  If x falls
    inside a panel, that panel's rule is rebuilt split at x (the kernel kink)
    in the panel's own parameter, and the interpolation of f spreads the new
    points back onto the panel's nodes; elsewhere the plain rule is kept.
    Resampled points on a graded panel that land deeper in the clustered
    corner than the panel's innermost node carry f(p) directly: interpolation
    there would extrapolate into the (q-p) ln|q-p| structure of the solution,
    which differs from its on-shell value by a vanishing amount at those
    distances.
    """
    q, w = grid.nodes, grid.weights
    d = q * q - p * p
    omega = np.append(w * q * q * v_nodes / d, 0.0)
    s_row = np.sum(w / d)

    bounds = grid.panel_boundaries
    k = int(np.searchsorted(bounds, x)) - 1
    if k < 0 or k >= len(bounds) - 1:
        return omega, s_row
    a, b = bounds[k], bounds[k + 1]
    width = b - a
    if x - a < 1e-12 * width or b - x < 1e-12 * width:
        return omega, s_row  # kink already at a boundary
    grade = grid.panel_grades[k] if grid.panel_grades else 0

    npp = grid.nodes_per_panel
    sl = slice(k * npp, (k + 1) * npp)
    t_nodes, _ = _leggauss(npp)
    tx = _invert_map(a, b, grade, x)
    xg, wg = _leggauss(npp)
    ts = np.concatenate(
        [-1.0 + 0.5 * (tx + 1.0) * (xg + 1.0), tx + 0.5 * (1.0 - tx) * (xg + 1.0)]
    )
    wts = np.concatenate([0.5 * (tx + 1.0) * wg, 0.5 * (1.0 - tx) * wg])
    qs, jac = _map_points(a, b, grade, ts)
    if grade != 0:
        # The cubic map can drive resampled points into the pole to within
        # rounding; push them off by a distance whose weight is negligible.
        floor = 1e-13 * p
        close = np.abs(qs - p) < floor
        qs[close] = p + floor if grade > 0 else p - floor
    ws = wts * jac
    ds = qs * qs - p * p
    vs = np.asarray(vfun(qs), dtype=float)
    coeff = ws * qs * qs * vs / ds
    if grade > 0:
        deep = ts < t_nodes[0]
    elif grade < 0:
        deep = ts > t_nodes[-1]
    else:
        deep = np.zeros(ts.size, dtype=bool)
    basis = _bary_basis(t_nodes, ts[~deep])
    omega[sl] = coeff[~deep] @ basis
    omega[-1] += np.sum(coeff[deep])
    s_row = s_row - np.sum(w[sl] / d[sl]) + np.sum(ws / ds)
    return omega, s_row


def solve_k(
    params: ModelParams,
    counterterms: CountertermSet,
    p: float,
    grid: QuadratureGrid,
    potential: Callable | None = None,
) -> HalfOffShellK:
    """Solve the K-matrix equation for the half-off-shell column at p.

    Parameters
    ----------
    params, counterterms : ModelParams, CountertermSet
    p : float
        On-shell momentum; must be the grid's subtraction point.
    grid : QuadratureGrid
    potential : callable, optional
        V(p_out, p_in) totalling whichever pieces the caller enables.
        Defaults to the leading-order theory: the 1/r**2 term plus its
        contact counterterm.  Correction pieces are meant to be treated
        perturbatively (see the nlo module) but can be passed here for
        non-perturbative diagnostics.

    Raises
    ------
    PoleError
        If the Nystrom matrix is singular to working precision, i.e. the
        counterterm sits on a limit-cycle pole at this cutoff.
    """
    if abs(p - grid.onshell) > 1e-12 * grid.cutoff:
        raise ValueError("grid was built for a different on-shell point")
    if potential is None:
        potential = _lo_potential(params, counterterms)
    m = params.reduced_mass
    n = grid.nodes.size
    x_all = np.append(grid.nodes, p)
    vmat = np.asarray(potential(x_all[:, None], x_all[None, :]), dtype=float)
    ell = pv_moment(p, grid.cutoff)

    a = np.eye(n + 1)
    b = (m * p / _PI2) * vmat[:, n]
    for j, x in enumerate(x_all):
        omega, s_row = _row_rule(grid, p, x, vmat[j, :n], lambda qs: potential(x, qs))
        a[j, :n] += (m / _PI2) * omega[:n]
        a[j, n] += (m / _PI2) * omega[n]
        a[j, n] += (m * p * p / _PI2) * (ell - s_row) * vmat[j, n]

    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise PoleError(
            f"singular K-matrix system (condition number {cond:.3e}) at "
            f"cutoff {grid.cutoff:g}: counterterm pole",
            condition_number=float(cond),
        )
    u = np.linalg.solve(a, b)
    return HalfOffShellK(
        params=params,
        counterterms=counterterms,
        grid=grid,
        column=u[:n],
        onshell_value=float(u[n]),
        p=float(p),
        potential=potential,
        condition_number=float(cond),
    )


def eval_offshell(sol: HalfOffShellK, p_out):
    """Evaluate k_l(p_out, p) through the equation's right-hand side.

    Nystrom interpolation: exact at the grid nodes and at the on-shell
    point, smooth in between.  Accepts scalars or arrays in (0, cutoff].
    """
    po = np.atleast_1d(np.asarray(p_out, dtype=float))
    grid = sol.grid
    if np.any(po <= 0.0) or np.any(po > grid.cutoff):
        raise ValueError("off-shell momentum outside (0, cutoff]")
    m = sol.params.reduced_mass
    p = sol.p
    ell = pv_moment(p, grid.cutoff)
    vq = np.asarray(sol.potential(po[:, None], grid.nodes[None, :]), dtype=float)
    vp = np.asarray(sol.potential(po, np.full_like(po, p)), dtype=float)
    out = np.empty(po.size)
    n = grid.nodes.size
    for r, x in enumerate(po):
        omega, s_row = _row_rule(grid, p, x, vq[r], lambda qs: sol.potential(x, qs))
        out[r] = (
            (m * p / _PI2) * vp[r]
            - (m / _PI2) * (omega[:n] @ sol.column + omega[n] * sol.onshell_value)
            - (m * p * p / _PI2) * (ell - s_row) * vp[r] * sol.onshell_value
        )
    return float(out[0]) if np.ndim(p_out) == 0 else out


def phase_shift(sol: HalfOffShellK) -> float:
    """Phase shift delta_l(p) = arctan(pi^2 k_l(p, p)), in (-pi/2, pi/2)."""
    return math.atan(_PI2 * sol.onshell_value)
