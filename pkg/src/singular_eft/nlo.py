"""First-order perturbative correction on top of the solved leading order.

The correction amplitude is one insertion of the correction potential
between leading-order K-matrix distorted waves.  In reduced variables it
has three pieces: the plain Born term, two single-integral cross terms
(equal because the potential is symmetric under exchange of its arguments,
hence a factor of two), and a double integral sandwiching the insertion
between two half-off-shell columns.  Every propagator carries the same
principal-value subtraction the leading-order solver uses, applied once per
integration variable; the half-off-shell values come from the single solved
column via the symmetry of the K matrix.

The correction is exactly linear in the long-range strength and in the two
s-wave contact couplings, so sweeps and fits work with three unit-coupling
basis amplitudes computed once per (momentum, cutoff) and cached.
Calibrating the contact pair is then a 2x2 linear solve.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .model import CountertermSet, ModelParams, v_contact_nlo, v_nlo_partial
from .renorm import calibrate_c0
from .solver import (
    HalfOffShellK,
    QuadratureGrid,
    _row_rule,
    build_grid,
    pv_moment,
    solve_k,
)

__all__ = [
    "NLOBasisAmplitudes",
    "basis_amplitudes",
    "calibrate_nlo",
    "fractional_correction",
    "nlo_amplitude",
]

_PI2 = math.pi**2


@dataclass(frozen=True)
class NLOBasisAmplitudes:
    """Correction amplitude per unit of each of its three couplings.

    First-order perturbation theory is exactly linear in the inserted
    potential, so the full correction at this momentum and cutoff is
    ``g * from_long_range + c1 * from_c + d1 * from_d``.
    """

    from_long_range: float
    from_c: float
    from_d: float
    p: float
    cutoff: float

    def total(self, g: float, c1: float, d1: float) -> float:
        """Assemble the correction amplitude for actual coupling values."""
        return g * self.from_long_range + c1 * self.from_c + d1 * self.from_d


def nlo_amplitude(
    params: ModelParams,
    lo_solution: HalfOffShellK,
    v1: Callable,
    grid: QuadratureGrid,
) -> float:
    """On-shell correction from one insertion of ``v1`` between distorted waves.

    Parameters
    ----------
    params : ModelParams
        Supplies the reduced mass.
    lo_solution : HalfOffShellK
        Leading-order column at the on-shell point of interest, solved with
        a renormalized counterterm.
    v1 : callable
        Correction potential ``v1(p_out, p_in)``; must broadcast over array
        arguments like the model potentials do.
    grid : QuadratureGrid
        Quadrature for the correction integrals.  It must be the grid the
        leading order was solved on: the half-off-shell column is only
        known at its nodes.

    Returns
    -------
    float
        k1(p, p), same reduced units as the leading-order amplitude.

    Raises
    ------
    ValueError
        If ``grid`` does not match the grid of ``lo_solution``.
    """
    lo_grid = lo_solution.grid
    if (
        grid.cutoff != lo_grid.cutoff
        or grid.onshell != lo_grid.onshell
        or grid.nodes.size != lo_grid.nodes.size
        or not np.array_equal(grid.nodes, lo_grid.nodes)
    ):
        raise ValueError(
            "correction quadrature differs from the grid the LO column was solved on"
        )

    m = params.reduced_mass
    p = lo_solution.p
    n = grid.nodes.size
    k0 = lo_solution.column
    k0p = lo_solution.onshell_value
    ell = pv_moment(p, grid.cutoff)

    x_all = np.append(grid.nodes, p)
    vmat = np.asarray(v1(x_all[:, None], x_all[None, :]), dtype=float)

    # f[j] = PV int dq q^2 v1(x_j, q) k0(q, p) / (q^2 - p^2); the row rule
    # splits the panel containing x_j where the kernel kinks.
    f = np.empty(n + 1)
    for j, x in enumerate(x_all):
        omega, s_row = _row_rule(grid, p, x, vmat[j, :n], lambda qs: v1(x, qs))
        f[j] = (
            omega[:n] @ k0
            + omega[n] * k0p
            + p * p * vmat[j, n] * k0p * (ell - s_row)
        )

    born = (m * p / _PI2) * vmat[n, n]
    cross = -2.0 * (m / _PI2) * f[n]

    # Outer principal value over q', subtracted with the same moment; its
    # carrier k0(q') f(q') is already tabulated on the nodes and at p.
    d = grid.nodes**2 - p * p
    s0 = np.sum(grid.weights / d)
    outer = (
        np.sum(grid.weights * grid.nodes**2 * k0 * f[:n] / d)
        + p * p * k0p * f[n] * (ell - s0)
    )
    return float(born + cross + (m / (_PI2 * p)) * outer)


@lru_cache(maxsize=256)
def _lo_and_basis(
    params: ModelParams, cutoff: float, c_lo: float, p: float, nodes_per_panel: int
):
    """Solve the LO column once and take the three unit insertions through it.

    Cached so sweeps revisiting the same (p, cutoff, c_lo) pay for a single
    solve.  Duplicate computation on concurrent cache misses is harmless;
    every entry is immutable.
    """
    counterterms = CountertermSet(cutoff=cutoff, c_lo=c_lo)
    grid = build_grid(cutoff, p, nodes_per_panel=nodes_per_panel)
    lo = solve_k(params, counterterms, p, grid)
    unit_g = dataclasses.replace(params, g=1.0)
    basis = NLOBasisAmplitudes(
        from_long_range=nlo_amplitude(
            params, lo, lambda po, pi: v_nlo_partial(unit_g, po, pi), grid
        ),
        from_c=nlo_amplitude(
            params, lo, lambda po, pi: v_contact_nlo(params, 1.0, 0.0, po, pi), grid
        ),
        from_d=nlo_amplitude(
            params, lo, lambda po, pi: v_contact_nlo(params, 0.0, 1.0, po, pi), grid
        ),
        p=float(p),
        cutoff=float(cutoff),
    )
    return lo.onshell_value, basis


def basis_amplitudes(
    params: ModelParams,
    counterterms: CountertermSet,
    p: float,
    nodes_per_panel: int = 40,
) -> NLOBasisAmplitudes:
    """Unit-coupling correction amplitudes at one momentum and cutoff.

    Only ``counterterms.cutoff`` and ``counterterms.c_lo`` enter (the
    correction couplings are exactly what the basis parametrizes).  s wave
    only: the correction contact pair does not exist in higher waves.
    """
    if params.l != 0:
        raise ValueError("correction basis is defined for the s wave only")
    if not 0.0 < p < counterterms.cutoff:
        raise ValueError("need 0 < p < cutoff")
    _, basis = _lo_and_basis(
        params, float(counterterms.cutoff), float(counterterms.c_lo), float(p),
        int(nodes_per_panel),
    )
    return basis


def calibrate_nlo(
    params: ModelParams,
    cutoff: float,
    data,
    nodes_per_panel: int = 40,
) -> tuple[float, float]:
    """Fit the two s-wave correction couplings to two on-shell data.

    The leading order is first calibrated to the datum at the first
    momentum, so the correction must vanish there; the second datum fixes
    the remaining combination.  Exact linearity in the couplings makes this
    a 2x2 linear solve.

    Parameters
    ----------
    params : ModelParams
    cutoff : float
    data : sequence of (momentum, target) pairs
        Exactly two measured values of the on-shell amplitude k0(p, p).

    Returns
    -------
    (c1, d1) : tuple of float

    Raises
    ------
    ValueError
        Degenerate momenta, or a numerically singular 2x2 system (the
        determinant is reported).
    RuntimeError
        If the fitted couplings fail to reproduce the targets to 1e-10.
    """
    if params.l != 0:
        raise ValueError("correction couplings exist for the s wave only")
    (p1, t1), (p2, t2) = data
    if math.isclose(p1, p2, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError("degenerate momenta: the two data points must differ")

    c_lo = calibrate_c0(params, cutoff, (p1, t1), nodes_per_panel=nodes_per_panel)
    k1, b1 = _lo_and_basis(params, float(cutoff), c_lo, float(p1), int(nodes_per_panel))
    k2, b2 = _lo_and_basis(params, float(cutoff), c_lo, float(p2), int(nodes_per_panel))

    a = np.array([[b1.from_c, b1.from_d], [b2.from_c, b2.from_d]])
    rhs = np.array(
        [
            t1 - k1 - params.g * b1.from_long_range,
            t2 - k2 - params.g * b2.from_long_range,
        ]
    )
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    scale = max(abs(a[0, 0] * a[1, 1]), abs(a[0, 1] * a[1, 0]), 1e-300)
    if abs(det) < 1e-12 * scale:
        raise ValueError(
            f"singular correction fit at cutoff {cutoff:g} "
            f"(determinant {det:.3e}): data do not separate the couplings"
        )
    c1, d1 = np.linalg.solve(a, rhs)

    resid = np.max(np.abs(a @ np.array([c1, d1]) - rhs))
    if resid > 1e-10 * max(1.0, abs(t1), abs(t2)):
        raise RuntimeError(f"correction fit residual {resid:.3e} above tolerance")
    return float(c1), float(d1)


def fractional_correction(
    params: ModelParams,
    counterterms: CountertermSet,
    p: float,
    cutoff: float,
    nodes_per_panel: int = 40,
) -> float:
    """X(p, Lambda) = |k1(p, p) / k0(p, p)| for a calibrated theory.

    ``cutoff`` is accepted separately so sweep drivers are explicit about
    it, but it must agree with the cutoff the counterterms were fixed at.

    Raises
    ------
    ValueError
        On a cutoff mismatch, or when the leading-order amplitude vanishes
        at this momentum and the ratio is undefined.
    """
    if not math.isclose(cutoff, counterterms.cutoff, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError("counterterms were fixed at a different cutoff")
    if params.l != 0:
        raise ValueError("fractional correction is defined for the s wave only")
    k0, basis = _lo_and_basis(
        params, float(cutoff), float(counterterms.c_lo), float(p),
        int(nodes_per_panel),
    )
    if k0 == 0.0:
        raise ValueError(
            f"leading-order amplitude vanishes at p = {p:g}; "
            "fractional correction undefined"
        )
    k1 = basis.total(params.g, counterterms.c_nlo, counterterms.d_nlo)
    return abs(k1 / k0)
