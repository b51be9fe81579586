"""Interval discretization: uniform grid, Dirichlet Laplacian, quadrature,
Laplacian eigenpairs.

Everything downstream (Newton solves, spectra, continuation) works on the
interior nodes of a uniform grid over (0, length) with homogeneous Dirichlet
boundary values. Boundary nodes are never stored; the stencils and the
quadrature rule account for the implicit zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.linalg import get_lapack_funcs


#: pi to long-double precision; np.pi widened from float64 carries a phase
#: error that is visible when verifying eigenvector identities beyond 1e-12.
PI_LONGDOUBLE = np.longdouble("3.141592653589793238462643383279502884")


class DomainMismatch(ValueError):
    """Raised when two fields from different discretizations are combined."""


class DiscreteDomain:
    """Uniform grid of interior nodes on (0, length).

    spacing = length / (n_interior + 1); nodes are k*spacing for
    k = 1 .. n_interior. Instances are immutable and safe to share.
    """

    __slots__ = ("length", "n_interior", "spacing", "nodes")

    def __init__(self, n_interior: int, length: float):
        if n_interior < 3:
            raise ValueError(f"need at least 3 interior nodes, got {n_interior}")
        if not (length > 0):
            raise ValueError(f"domain length must be positive, got {length}")
        object.__setattr__(self, "n_interior", int(n_interior))
        object.__setattr__(self, "length", float(length))
        spacing = float(length) / (n_interior + 1)
        object.__setattr__(self, "spacing", spacing)
        nodes = spacing * np.arange(1, n_interior + 1, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteDomain is immutable")

    def __eq__(self, other):
        return (
            isinstance(other, DiscreteDomain)
            and self.n_interior == other.n_interior
            and self.length == other.length
        )

    def __hash__(self):
        return hash((self.n_interior, self.length))

    def __repr__(self):
        return f"DiscreteDomain(n_interior={self.n_interior}, length={self.length})"

    # quadrature on raw value arrays (the hot path; DiscreteField wraps these)

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid rule with the zero boundary values, i.e. spacing * sum."""
        return self.spacing * float(np.sum(values))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return self.spacing * float(np.dot(u, v))

    def l2_norm(self, values: np.ndarray) -> float:
        return float(np.sqrt(self.spacing) * np.linalg.norm(values))


@dataclass(frozen=True)
class DiscreteField:
    """Nodal values on the interior of a domain (boundary values are 0)."""

    domain: DiscreteDomain
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.domain.n_interior,):
            raise ValueError(
                f"field has {values.shape} values, domain has "
                f"{self.domain.n_interior} interior nodes"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, domain: DiscreteDomain, fn) -> "DiscreteField":
        return cls(domain, fn(domain.nodes))

    @classmethod
    def zero(cls, domain: DiscreteDomain) -> "DiscreteField":
        return cls(domain, np.zeros(domain.n_interior))

    def __eq__(self, other):
        return (
            isinstance(other, DiscreteField)
            and self.domain == other.domain
            and np.array_equal(self.values, other.values)
        )


class TridiagonalFactor:
    """LU factorization (with partial pivoting) of a tridiagonal matrix.

    Wraps LAPACK gttrf/gttrs. Exposes the magnitude of the smallest diagonal
    entry of U, which is how near-singularity is detected downstream.
    """

    def __init__(self, diag: np.ndarray, off: np.ndarray):
        n = diag.size
        gttrf, gttrs = get_lapack_funcs(("gttrf", "gttrs"), (diag,))
        dl, d, du, du2, ipiv, info = gttrf(off.copy(), diag.copy(), off.copy())
        if info < 0:
            raise ValueError(f"gttrf: illegal argument {-info}")
        self._gttrs = gttrs
        self._parts = (dl, d, du, du2, ipiv)
        self.exactly_singular = info > 0
        self.min_pivot = 0.0 if info > 0 else float(np.min(np.abs(d)))
        self.n = n

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        dl, d, du, du2, ipiv = self._parts
        x, info = self._gttrs(dl, d, du, du2, ipiv, rhs)
        if info != 0:
            raise np.linalg.LinAlgError(f"gttrs failed with info={info}")
        return x


@dataclass(frozen=True)
class LinearOperatorBanded:
    """Symmetric tridiagonal operator on the interior nodes of a domain."""

    domain: DiscreteDomain
    diag: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        n = self.domain.n_interior
        diag = np.asarray(self.diag, dtype=float)
        off = np.asarray(self.off, dtype=float)
        if diag.shape != (n,) or off.shape != (n - 1,):
            raise ValueError("band shapes inconsistent with domain")
        diag = diag.copy()
        off = off.copy()
        diag.setflags(write=False)
        off.setflags(write=False)
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "off", off)

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = self.diag * values
        out[:-1] += self.off * values[1:]
        out[1:] += self.off * values[:-1]
        return out

    def apply_field(self, f: DiscreteField) -> DiscreteField:
        if f.domain != self.domain:
            raise DomainMismatch("field and operator live on different grids")
        return DiscreteField(self.domain, self.apply(f.values))

    def shifted(self, sigma: float) -> "LinearOperatorBanded":
        """Operator plus sigma times the identity."""
        return LinearOperatorBanded(self.domain, self.diag + sigma, self.off)

    def add_diagonal(self, extra: np.ndarray) -> "LinearOperatorBanded":
        return LinearOperatorBanded(self.domain, self.diag + extra, self.off)

    def factor(self) -> TridiagonalFactor:
        return TridiagonalFactor(self.diag, self.off)

    def norm_inf(self) -> float:
        pad = np.concatenate(([0.0], np.abs(self.off)))
        pad2 = np.concatenate((np.abs(self.off), [0.0]))
        return float(np.max(np.abs(self.diag) + pad + pad2))


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalue and max-normalized eigenfunction of -Laplacian (or of a
    linearization, see the spectral module)."""

    eigenvalue: float
    eigenfunction: DiscreteField
    sign_ambiguous: bool = False


def build_grid(n_interior: int, length: float) -> DiscreteDomain:
    """Uniform grid with n_interior interior nodes on (0, length)."""
    return DiscreteDomain(n_interior, length)


def assemble_laplacian(domain: DiscreteDomain) -> LinearOperatorBanded:
    """Second-order central-difference Dirichlet Laplacian (negative definite)."""
    h2 = domain.spacing**2
    n = domain.n_interior
    return LinearOperatorBanded(
        domain, np.full(n, -2.0 / h2), np.full(n - 1, 1.0 / h2)
    )


def inner_product(f1: DiscreteField, f2: DiscreteField) -> float:
    """Quadrature of f1*f2 over the domain (spacing-weighted interior sum)."""
    if f1.domain != f2.domain:
        raise DomainMismatch("fields live on different grids")
    return f1.domain.inner(f1.values, f2.values)


def l2_norm(f: DiscreteField) -> float:
    return f.domain.l2_norm(f.values)


def renormalize_l2(f: DiscreteField, target: float = 1.0) -> DiscreteField:
    """Scale a field so its quadrature L2 norm equals target.

    Eigenfunctions are returned max-normalized; several derivative formulas
    instead assume unit L2 norm, so the conversion has to be explicit at the
    call site.
    """
    norm = l2_norm(f)
    if norm == 0.0:
        raise ValueError("cannot renormalize the zero field")
    return DiscreteField(f.domain, f.values * (target / norm))


def dirichlet_eigenvalue_exact(domain: DiscreteDomain, k: int) -> float:
    """Closed-form k-th eigenvalue of the discrete -Laplacian.

    (2/h^2)(1 - cos(k pi h / L)), evaluated in the cancellation-free form
    (4/h^2) sin^2(k pi h / (2L)); the naive form loses ~5 digits at n ~ 400.
    """
    h = domain.spacing
    return (4.0 / h**2) * float(np.sin(k * np.pi * h / (2.0 * domain.length)) ** 2)


def _rayleigh_polish(diag: np.ndarray, off: np.ndarray, vec: np.ndarray) -> float:
    """Rayleigh quotient of vec accumulated in long double.

    LAPACK's bisection eigenvalues are only accurate to ~eps*||A|| which at the
    1/h^2 operator scale is ~6e-11; the long-double Rayleigh quotient of the
    returned vector recovers ~1e-13.
    """
    d = diag.astype(np.longdouble)
    e = off.astype(np.longdouble)
    v = vec.astype(np.longdouble)
    av = d * v
    av[:-1] += e * v[1:]
    av[1:] += e * v[:-1]
    return float((v @ av) / (v @ v))


def symmetric_tridiagonal_eigenpairs(
    diag: np.ndarray, off: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """k smallest eigenpairs of a symmetric tridiagonal matrix.

    Bisection for the eigenvalues, inverse iteration for the eigenvectors,
    then a long-double Rayleigh polish per eigenvalue. Vectors come back
    euclidean-orthonormal, one per column, in ascending eigenvalue order.
    """
    n = diag.size
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    polished = np.array(
        [_rayleigh_polish(diag, off, vecs[:, j]) for j in range(k)]
    )
    return polished, vecs


def laplacian_eigenpairs(
    domain: DiscreteDomain, k: int, harvest: DiscreteField | None = None
) -> list[EigenPair]:
    """k smallest eigenpairs of -Laplacian, max-normalized.

    Sign conventions: the first eigenfunction is positive. When a harvest
    field is supplied, the second eigenfunction's sign is fixed so that its
    harvest-weighted integral is negative (the orientation every
    second-eigenvalue formula downstream assumes); if that integral vanishes
    the pair is flagged sign_ambiguous instead. Higher modes get a positive
    first node.
    """
    h2 = domain.spacing**2
    n = domain.n_interior
    vals, vecs = symmetric_tridiagonal_eigenpairs(
        np.full(n, 2.0 / h2), np.full(n - 1, -1.0 / h2), k
    )
    pairs: list[EigenPair] = []
    for j in range(k):
        v = vecs[:, j].copy()
        ambiguous = False
        if j == 0:
            if v[np.argmax(np.abs(v))] < 0:
                v = -v
        elif j == 1 and harvest is not None:
            weighted = domain.inner(harvest.values, v)
            if abs(weighted) <= 1e-12 * domain.l2_norm(v) * max(
                1.0, domain.l2_norm(harvest.values)
            ):
                ambiguous = True
                if v[0] < 0:
                    v = -v
            elif weighted > 0:
                v = -v
        else:
            if v[0] < 0:
                v = -v
        v /= np.max(v)
        pairs.append(
            EigenPair(float(vals[j]), DiscreteField(domain, v), ambiguous)
        )
    return pairs
