"""Model loss functions with analytic gradients and curvature estimation.

Three objective families are provided:

* a one-dimensional corrupted double well (a quartic with a tilt plus
  high-frequency sinusoidal corruption, scaled by a stability constant F),
* its d-dimensional generalization (separable quartic wells plus pairwise
  sinusoidal products between all coordinate pairs),
* a multivariate quadratic ``0.5 * x^T H x`` for closed-form analysis.

Each objective reports the curvature constants consumed by the bound
formulas: the supremum ``lambda_bar`` of the maximum eigenvalue of the
negated Hessian, the third-derivative bound ``q_bound``, and (when they
exist) strong-convexity and smoothness moduli.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Angular frequencies of the three corruption terms.
FREQ_A = 20.0
FREQ_B = 2.0 * np.pi
FREQ_C = 10.0 * np.e / 3.0


class CurvatureEstimationError(RuntimeError):
    """Raised when finite differencing hits a non-finite derivative value."""

    def __init__(self, point, message="non-finite derivative encountered"):
        self.point = np.atleast_1d(np.asarray(point, dtype=float))
        super().__init__(f"{message} at x={self.point}")


@dataclass(frozen=True)
class CurvatureInfo:
    """Curvature constants of an objective over a declared domain box.

    ``lambda_bar`` bounds the maximum eigenvalue of the negated Hessian,
    ``q_bound`` bounds the maximum eigenvalue of the Hessian of each
    component of the negated gradient. ``lambda_strong``/``lambda_smooth``
    are the strong-convexity and smoothness moduli when known.
    """

    lambda_bar: float
    lambda_strong: float | None = None
    lambda_smooth: float | None = None
    q_bound: float | None = None
    domain_box: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        vals = [self.lambda_bar, self.lambda_strong, self.lambda_smooth, self.q_bound]
        for v in vals:
            if v is not None and not np.isfinite(v):
                raise ValueError("curvature constants must be finite")
        if self.lambda_strong is not None and self.lambda_smooth is not None:
            if self.lambda_strong > self.lambda_smooth + 1e-12:
                raise ValueError("lambda_strong must not exceed lambda_smooth")


# ---------------------------------------------------------------------------
# One-dimensional corrupted double well
# ---------------------------------------------------------------------------

def double_well_value(x, F):
    """Corrupted double-well loss at ``x`` (elementwise over arrays).

    ``(x^4 - 4x^2 + x/5 + (2/5)(3 sin 20x - (7/2) sin 2*pi*x
    + cos(10 e x / 3))) / F`` with stability constant ``F > 0``.
    """
    if F <= 0:
        raise ValueError("F must be positive")
    x = np.asarray(x, dtype=float)
    poly = x**4 - 4.0 * x**2 + x / 5.0
    ripple = 3.0 * np.sin(FREQ_A * x) - 3.5 * np.sin(FREQ_B * x) + np.cos(FREQ_C * x)
    return (poly + 0.4 * ripple) / F


def double_well_grad(x, F):
    """Analytic derivative of :func:`double_well_value` (elementwise)."""
    if F <= 0:
        raise ValueError("F must be positive")
    x = np.asarray(x, dtype=float)
    poly = 4.0 * x**3 - 8.0 * x + 0.2
    ripple = (
        3.0 * FREQ_A * np.cos(FREQ_A * x)
        - 3.5 * FREQ_B * np.cos(FREQ_B * x)
        - FREQ_C * np.sin(FREQ_C * x)
    )
    return (poly + 0.4 * ripple) / F


def double_well_second(x, F):
    """Analytic second derivative; used by curvature oracles."""
    x = np.asarray(x, dtype=float)
    poly = 12.0 * x**2 - 8.0
    ripple = (
        -3.0 * FREQ_A**2 * np.sin(FREQ_A * x)
        + 3.5 * FREQ_B**2 * np.sin(FREQ_B * x)
        - FREQ_C**2 * np.cos(FREQ_C * x)
    )
    return (poly + 0.4 * ripple) / F


def double_well_third(x, F):
    """Analytic third derivative; used by curvature oracles."""
    x = np.asarray(x, dtype=float)
    poly = 24.0 * x
    ripple = (
        -3.0 * FREQ_A**3 * np.cos(FREQ_A * x)
        + 3.5 * FREQ_B**3 * np.cos(FREQ_B * x)
        + FREQ_C**3 * np.sin(FREQ_C * x)
    )
    return (poly + 0.4 * ripple) / F


# ---------------------------------------------------------------------------
# d-dimensional generalization
# ---------------------------------------------------------------------------

def _nd_trig_sums(X):
    """Sums of the three sinusoids over coordinates; X has shape (..., d)."""
    s_a = np.sum(np.sin(FREQ_A * X), axis=-1)
    s_b = np.sum(np.sin(FREQ_B * X), axis=-1)
    c_c = np.sum(np.cos(FREQ_C * X), axis=-1)
    return s_a, s_b, c_c


def nd_loss_value(x, F):
    """Separable quartic wells plus all pairwise sinusoidal products.

    The pairwise double sums collapse to squared sums of the coordinate
    sinusoids: ``sum_{i,j} sin(a x_i) sin(a x_j) = (sum_i sin(a x_i))^2``.
    Accepts a single point of shape ``(d,)`` or a batch ``(m, d)``.
    """
    if F <= 0:
        raise ValueError("F must be positive")
    X = np.asarray(x, dtype=float)
    quartic = np.sum(X**4 - 4.0 * X**2 + X / 5.0, axis=-1)
    s_a, s_b, c_c = _nd_trig_sums(X)
    pairwise = 3.0 * s_a**2 + c_c**2 - 3.5 * s_b**2
    return (quartic + 0.4 * pairwise) / F


def nd_loss_grad(x, F):
    """Analytic gradient of :func:`nd_loss_value`.

    Each pairwise product contributes through both of its coordinates,
    which is why the sinusoid sums multiply the per-coordinate factors.
    """
    if F <= 0:
        raise ValueError("F must be positive")
    X = np.asarray(x, dtype=float)
    quartic = 4.0 * X**3 - 8.0 * X + 0.2
    s_a, s_b, c_c = _nd_trig_sums(X)
    pair = (
        6.0 * FREQ_A * s_a[..., None] * np.cos(FREQ_A * X)
        - 2.0 * FREQ_C * c_c[..., None] * np.sin(FREQ_C * X)
        - 7.0 * FREQ_B * s_b[..., None] * np.cos(FREQ_B * X)
    )
    return (quartic + 0.4 * pair) / F


# ---------------------------------------------------------------------------
# Multivariate quadratic
# ---------------------------------------------------------------------------

def _check_quadratic_matrix(H):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    if not np.allclose(H, H.T, rtol=1e-10, atol=1e-12):
        raise ValueError("H must be symmetric")
    return H


def quadratic_value(x, H):
    """``0.5 * x^T H x`` for symmetric ``H`` (batched over leading axes)."""
    H = _check_quadratic_matrix(H)
    X = np.asarray(x, dtype=float)
    return 0.5 * np.sum((X @ H) * X, axis=-1)


def quadratic_grad(x, H):
    """Gradient ``H x`` of the quadratic (batched over leading axes)."""
    H = _check_quadratic_matrix(H)
    X = np.asarray(x, dtype=float)
    return X @ H.T


# ---------------------------------------------------------------------------
# Objective objects
# ---------------------------------------------------------------------------

class Objective:
    """A loss with an analytic gradient, batched evaluation, and metadata.

    ``value``/``gradient`` act on a single point of shape ``(n,)``;
    ``value_batch``/``gradient_batch`` act on a stack of points ``(m, n)``.
    Objectives are immutable after construction and safe to evaluate from
    many workers at once.
    """

    dimension: int
    curvature: CurvatureInfo | None = None

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def value_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.array([self.value(row) for row in X])

    def gradient_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.stack([self.gradient(row) for row in X])


class DoubleWell(Objective):
    """One-dimensional corrupted double well with stability constant F."""

    def __init__(self, F=150.0, curvature=None):
        if F <= 0:
            raise ValueError("F must be positive")
        self.F = float(F)
        self.dimension = 1
        self.curvature = curvature

    def value(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(double_well_value(x[0], self.F))

    def gradient(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return double_well_grad(x, self.F)

    def value_batch(self, X):
        X = np.asarray(X, dtype=float)
        return double_well_value(X[..., 0], self.F)

    def gradient_batch(self, X):
        X = np.asarray(X, dtype=float)
        return double_well_grad(X, self.F)


class NdLoss(Objective):
    """d-dimensional corrupted quartic landscape with pairwise coupling."""

    def __init__(self, d, F=50.0, curvature=None):
        if d < 1:
            raise ValueError("dimension must be at least 1")
        if F <= 0:
            raise ValueError("F must be positive")
        self.F = float(F)
        self.dimension = int(d)
        self.curvature = curvature

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected shape ({self.dimension},), got {x.shape}")
        return float(nd_loss_value(x, self.F))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected shape ({self.dimension},), got {x.shape}")
        return nd_loss_grad(x, self.F)

    def value_batch(self, X):
        return nd_loss_value(np.asarray(X, dtype=float), self.F)

    def gradient_batch(self, X):
        return nd_loss_grad(np.asarray(X, dtype=float), self.F)


class Quadratic(Objective):
    """Quadratic ``0.5 * x^T H x`` with exact curvature metadata.

    The eigenvalues of H give the strong-convexity and smoothness moduli
    exactly, the negated-Hessian eigenvalue bound is ``-min eig(H)``, and
    the third derivative vanishes so ``q_bound`` is zero.
    """

    def __init__(self, H):
        H = _check_quadratic_matrix(H)
        eigs = np.linalg.eigvalsh(H)
        if eigs[0] <= 0:
            raise ValueError("H must be positive definite")
        self.H = H
        self.dimension = H.shape[0]
        self.curvature = CurvatureInfo(
            lambda_bar=float(-eigs[0]),
            lambda_strong=float(eigs[0]),
            lambda_smooth=float(eigs[-1]),
            q_bound=0.0,
        )

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(quadratic_value(x, self.H))

    def gradient(self, x):
        return quadratic_grad(np.asarray(x, dtype=float), self.H)

    def value_batch(self, X):
        return quadratic_value(np.asarray(X, dtype=float), self.H)

    def gradient_batch(self, X):
        return quadratic_grad(np.asarray(X, dtype=float), self.H)


# ---------------------------------------------------------------------------
# Finite-difference curvature estimation
# ---------------------------------------------------------------------------

def _fd_hessian_of_gradient(obj, x, h):
    """Hessians of every gradient component at x, shape (n, n, n).

    ``out[j, a, b]`` is the (a, b) second difference of gradient component
    j, i.e. a central-difference estimate of the third-derivative tensor.
    """
    n = obj.dimension
    out = np.empty((n, n, n))
    g0 = obj.gradient(x)
    if not np.all(np.isfinite(g0)):
        raise CurvatureEstimationError(x)
    eye = np.eye(n)
    for a in range(n):
        ga_p = obj.gradient(x + h * eye[a])
        ga_m = obj.gradient(x - h * eye[a])
        out[:, a, a] = (ga_p - 2.0 * g0 + ga_m) / h**2
        for b in range(a + 1, n):
            gpp = obj.gradient(x + h * eye[a] + h * eye[b])
            gpm = obj.gradient(x + h * eye[a] - h * eye[b])
            gmp = obj.gradient(x - h * eye[a] + h * eye[b])
            gmm = obj.gradient(x - h * eye[a] - h * eye[b])
            mixed = (gpp - gpm - gmp + gmm) / (4.0 * h**2)
            out[:, a, b] = mixed
            out[:, b, a] = mixed
    if not np.all(np.isfinite(out)):
        raise CurvatureEstimationError(x)
    return out


def fd_hessian(obj, x, h):
    """Central-difference Hessian of the objective at x, from its gradient."""
    n = obj.dimension
    eye = np.eye(n)
    cols = []
    for a in range(n):
        gp = obj.gradient(x + h * eye[a])
        gm = obj.gradient(x - h * eye[a])
        cols.append((gp - gm) / (2.0 * h))
    H = np.stack(cols, axis=1)
    if not np.all(np.isfinite(H)):
        raise CurvatureEstimationError(x)
    return 0.5 * (H + H.T)


def _sample_box(box, samples, seed, dimension):
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (dimension, 1))
    if box.shape != (dimension, 2):
        raise ValueError("box must give (low, high) per coordinate")
    lo, hi = box[:, 0], box[:, 1]
    if np.any(hi < lo):
        raise ValueError("box upper bounds must not be below lower bounds")
    if dimension == 1:
        pts = np.linspace(lo[0], hi[0], samples)[:, None]
    else:
        rng = np.random.default_rng(seed)
        pts = lo + (hi - lo) * rng.random((samples, dimension))
    return box, pts


def estimate_curvature(obj, box, samples=1000, seed=0, h=1e-4):
    """Estimate curvature constants of ``obj`` over a domain box.

    Scans a deterministic grid (1-D) or seeded uniform samples (higher d)
    and takes suprema of finite-difference Hessian eigenvalues:
    ``lambda_bar`` from the negated Hessian of the loss and ``q_bound``
    from the Hessians of the negated gradient components. Also records
    Hessian eigenvalue extremes as smoothness/strong-convexity estimates.

    Raises :class:`CurvatureEstimationError` if differencing produces a
    non-finite value, reporting the offending sample point.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    box, pts = _sample_box(box, samples, seed, obj.dimension)

    lambda_bar = -np.inf
    q_bound = 0.0
    eig_min = np.inf
    eig_max = -np.inf
    for x in pts:
        H = fd_hessian(obj, x, h)
        eigs = np.linalg.eigvalsh(H)
        eig_min = min(eig_min, eigs[0])
        eig_max = max(eig_max, eigs[-1])
        lambda_bar = max(lambda_bar, -eigs[0])
        T = _fd_hessian_of_gradient(obj, x, h)
        for j in range(obj.dimension):
            slab = -0.5 * (T[j] + T[j].T)
            q_bound = max(q_bound, float(np.linalg.eigvalsh(slab)[-1]))
    return CurvatureInfo(
        lambda_bar=float(lambda_bar),
        lambda_strong=float(eig_min) if eig_min > 0 else None,
        lambda_smooth=float(eig_max),
        q_bound=float(q_bound),
        domain_box=tuple((float(lo), float(hi)) for lo, hi in box),
    )
