"""Spectrum of the linearized operator at a state, and Morse index.

The linearization of the steady equation at u is the symmetric operator
-(Delta_h + a I - diag(f'(u))); its lowest eigenvalues decide stability,
Morse index, and degeneracy everywhere else in the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import (
    DiscreteDomain,
    DiscreteField,
    inner_product,
    laplacian_eigenpairs,
    symmetric_tridiagonal_eigenpairs,
)
from .solver import ProblemState, degeneracy_tolerance, jacobian


class InsufficientSpectrum(ValueError):
    """k eigenvalues were not enough to certify the Morse index."""


@dataclass(frozen=True)
class SpectrumSlice:
    """The k lowest eigenpairs of the linearization, ascending.

    Eigenfunctions carry the quadrature L2 normalization of the ambient
    Laplacian eigenfunctions: the first matches the squared norm of the
    (max-normalized) ground mode, the second that of the second mode, and
    further ones reuse the first target. The first eigenfunction is
    sign-fixed positive; higher ones get their largest-magnitude entry made
    positive, and callers that track orientation along a curve re-align
    against the previous point themselves.
    """

    eigenvalues: tuple[float, ...]
    eigenfunctions: tuple[DiscreteField, ...]
    a: float
    tol: float

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def mu1(self) -> float:
        return self.eigenvalues[0]

    @property
    def mu2(self) -> float:
        return self.eigenvalues[1]


@lru_cache(maxsize=8)
def _reference_square_norms(domain: DiscreteDomain) -> tuple[float, float]:
    pairs = laplacian_eigenpairs(domain, 2)
    return (
        inner_product(pairs[0].eigenfunction, pairs[0].eigenfunction),
        inner_product(pairs[1].eigenfunction, pairs[1].eigenfunction),
    )


def linearized_spectrum(state: ProblemState, k: int = 3) -> SpectrumSlice:
    """k lowest eigenpairs of -(Delta_h + a I - diag(f'(u))) at the state.

    Bisection plus inverse iteration on the symmetric tridiagonal band, with
    a long-double Rayleigh polish of each eigenvalue; the residual of every
    returned pair is comfortably below 1e-10.
    """
    if k < 2:
        raise ValueError(
            f"need at least two eigenvalues (index and degeneracy), got k={k}"
        )
    dom = state.problem.domain
    J = jacobian(state)
    vals, vecs = symmetric_tridiagonal_eigenpairs(-J.diag, -J.off, k)
    phi_sq, psi_sq = _reference_square_norms(dom)
    fields = []
    for j in range(k):
        v = vecs[:, j].copy()
        peak = np.argmax(np.abs(v))
        if v[peak] < 0:
            v = -v
        target_sq = psi_sq if j == 1 else phi_sq
        v *= np.sqrt(target_sq) / (np.sqrt(dom.spacing) * np.linalg.norm(v))
        fields.append(DiscreteField(dom, v))
    return SpectrumSlice(
        tuple(float(x) for x in vals),
        tuple(fields),
        state.a,
        degeneracy_tolerance(state.a),
    )


def morse_index(spectrum: SpectrumSlice) -> tuple[int, bool]:
    """(number of negative eigenvalues, degenerate flag) of a spectrum slice.

    Eigenvalues within the degeneracy tolerance of zero are counted as zero
    and set the flag. Raises InsufficientSpectrum when every computed
    eigenvalue is negative, since the true index could then exceed k - 1.
    """
    mu = np.array(spectrum.eigenvalues)
    tol = spectrum.tol
    negatives = int(np.sum(mu < -tol))
    if negatives == spectrum.k:
        raise InsufficientSpectrum(
            f"all {spectrum.k} computed eigenvalues are negative; "
            "recompute with larger k to certify the index"
        )
    return negatives, bool(np.any(np.abs(mu) < tol))
