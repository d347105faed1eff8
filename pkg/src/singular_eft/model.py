"""Couplings and partial-wave potential matrix elements.

Everything downstream works in momentum space with a single scale set by the
reduced mass (``reduced_mass = 1`` by default), so momenta and cutoffs are
dimensionless multiples of it.  The long-range pieces are the attractive
``1/r**2`` interaction of strength ``lam`` and its ``1/r**4`` correction of
strength ``g`` at mass scale ``big_m``; the short-range pieces are polynomial
contact terms whose couplings run with the cutoff.

All matrix-element functions broadcast over numpy arrays of momenta, which is
what the Nystrom solver feeds them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "ModelParams",
    "CountertermSet",
    "OscillationIndex",
    "v_lo_partial",
    "v_nlo_partial",
    "v_contact_lo",
    "v_contact_nlo",
    "nu_l",
    "critical_l",
    "perturbative_l",
]

_PI2 = math.pi**2


@dataclass(frozen=True)
class ModelParams:
    """Physical couplings and scales defining one scattering channel.

    Attributes
    ----------
    lam : float
        Dimensionless strength of the attractive 1/r**2 potential
        (positive = attractive in the convention used throughout).
    g : float
        Dimensionless strength of the 1/r**4 correction; sign free.
    big_m : float
        Mass scale of the correction, in units of the reduced mass.
    reduced_mass : float
        Sets the unit system; leave at 1 unless you have a reason not to.
    l : int
        Orbital angular momentum of the channel.
    """

    lam: float
    g: float = 0.0
    big_m: float = 1.0
    reduced_mass: float = 1.0
    l: int = 0

    def __post_init__(self):
        if self.reduced_mass <= 0.0:
            raise ValueError("reduced_mass must be positive")
        if self.g != 0.0 and self.big_m <= 0.0:
            raise ValueError("big_m must be positive when g is nonzero")
        if self.l < 0 or self.l != int(self.l):
            raise ValueError("l must be a non-negative integer")


@dataclass(frozen=True)
class CountertermSet:
    """Contact couplings attached to one value of the cutoff.

    ``c_lo`` multiplies the lowest-derivative contact term in the channel's
    own wave; ``c_nlo`` and ``d_nlo`` are the s-wave correction couplings
    (momentum-independent and quadratic respectively) and are only meaningful
    for ``l = 0``.
    """

    cutoff: float
    c_lo: float = 0.0
    c_nlo: float = 0.0
    d_nlo: float = 0.0

    def __post_init__(self):
        if self.cutoff <= 0.0:
            raise ValueError("cutoff must be positive")


class OscillationIndex(NamedTuple):
    """Short-distance index of a channel: its value and whether the
    attraction overcomes the centrifugal barrier (singular channel)."""

    value: float
    singular: bool


def _checked(p_out, p_in):
    po = np.asarray(p_out, dtype=float)
    pi = np.asarray(p_in, dtype=float)
    if np.any(po <= 0.0) or np.any(pi <= 0.0):
        raise ValueError("momenta must be positive")
    return po, pi


def v_lo_partial(params: ModelParams, p_out, p_in):
    """Partial-wave matrix element of the attractive 1/r**2 potential.

    Parameters
    ----------
    params : ModelParams
    p_out, p_in : float or array_like
        Outgoing/incoming momenta, broadcast together.

    Returns
    -------
    float or ndarray
        -pi^2 lam / (m (2l+1)) * p_<^l / p_>^(l+1).
    """
    po, pi = _checked(p_out, p_in)
    lo = np.minimum(po, pi)
    hi = np.maximum(po, pi)
    l = params.l
    return (
        -_PI2
        * params.lam
        / (params.reduced_mass * (2 * l + 1))
        * lo**l
        / hi ** (l + 1)
    )


def v_nlo_partial(params: ModelParams, p_out, p_in):
    """Partial-wave matrix element of the 1/r**4 correction.

    The constant (delta-shell) piece generated by regulating the 1/r**4
    singularity is absorbed into the contact couplings and does not appear
    here; no short-distance regulator parameter survives.

    Returns
    -------
    float or ndarray
        -pi^2 g / (2 m M^2) * [ (2l+1)(2l-1) ]^-1 * p_<^l / p_>^(l-1)
        * (1 - (2l-1)/(2l+3) * p_<^2 / p_>^2).
    """
    po, pi = _checked(p_out, p_in)
    if params.g == 0.0:
        return np.zeros(np.broadcast(po, pi).shape)
    lo = np.minimum(po, pi)
    hi = np.maximum(po, pi)
    l = params.l
    prefactor = -_PI2 * params.g / (2 * params.reduced_mass * params.big_m**2)
    shape = lo**l / hi ** (l - 1) * (1.0 - (2 * l - 1) / (2 * l + 3) * (lo / hi) ** 2)
    return prefactor / ((2 * l + 1) * (2 * l - 1)) * shape


def v_contact_lo(params: ModelParams, c, p_out, p_in):
    """Lowest-derivative contact term in wave l: (pi^2/m) c/(2l+1) p'^l p^l."""
    po = np.asarray(p_out, dtype=float)
    pi = np.asarray(p_in, dtype=float)
    l = params.l
    return _PI2 / params.reduced_mass * c / (2 * l + 1) * (po * pi) ** l


def v_contact_nlo(params: ModelParams, c1, d1, p_out, p_in):
    """s-wave correction contact terms: (pi^2/m) (c1 + d1 (p^2 + p'^2)).

    Raises
    ------
    ValueError
        For any channel other than l = 0, where these counterterms live.
    """
    if params.l != 0:
        raise ValueError("unsupported channel: correction contact terms exist for l=0 only")
    po = np.asarray(p_out, dtype=float)
    pi = np.asarray(p_in, dtype=float)
    return _PI2 / params.reduced_mass * (c1 + d1 * (po**2 + pi**2))


def nu_l(params: ModelParams) -> OscillationIndex:
    """Log-oscillation index of the channel.

    For lam >= (l+1/2)^2 the attraction wins at short distance and the wave
    function oscillates in ln(r) with index nu = sqrt(lam - (l+1/2)^2); the
    channel is singular and needs one contact coupling.  Otherwise the
    channel is regular and the returned value is |nu| = sqrt((l+1/2)^2 - lam).
    """
    gap = params.lam - (params.l + 0.5) ** 2
    if gap >= 0.0:
        return OscillationIndex(math.sqrt(gap), True)
    return OscillationIndex(math.sqrt(-gap), False)


def critical_l(params: ModelParams) -> float:
    """Threshold wave below which channels are singular: sqrt(lam) - 1/2."""
    return math.sqrt(params.lam) - 0.5


def perturbative_l(params: ModelParams) -> float:
    """Threshold wave above which the 1/r**2 term is perturbative:
    lam pi/4 - 1/2."""
    return params.lam * math.pi / 4 - 0.5
