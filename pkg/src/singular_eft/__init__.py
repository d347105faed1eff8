"""Renormalization laboratory for attractive singular potentials.

Solves the cutoff partial-wave K-matrix equation for an attractive 1/r**2
potential plus contact counterterms, runs the counterterms with the cutoff
(limit cycles), treats a 1/r**4 correction in first-order distorted-wave
perturbation theory, and checks renormalization-group invariance of the
resulting observables.
"""

from singular_eft.model import CountertermSet, ModelParams

__version__ = "0.1.0"

__all__ = ["ModelParams", "CountertermSet", "__version__"]
