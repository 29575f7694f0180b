"""Diagnostics and estimators linking simulation output to theory.

Contains the synchronization measure and mean-gradient distortion
computed along trajectories, a Monte Carlo estimator of the
noise-convolved (smoothed) loss, a Gaussian kernel density estimator for
final-iterate distributions, running iterate averages, stationary and
averaged variance formulas for linear-drift diffusions, and the report
generator that pairs empirical ensemble statistics with their
closed-form bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import BoundDomainError, BoundInputs, eps_bound, qsgd_conv_bound, sync_bound
from .stochastic import NoiseModel, StreamKey, stream_generator


@dataclass(frozen=True)
class TrajectoryDiagnostics:
    """Per-recorded-step diagnostics of one simulation run."""

    steps: np.ndarray
    sync_measure: np.ndarray
    eps_norm: np.ndarray
    loss_quorum: np.ndarray
    loss_mean_agents: np.ndarray

    def __post_init__(self):
        arrays = [self.steps, self.sync_measure, self.eps_norm,
                  self.loss_quorum, self.loss_mean_agents]
        lengths = {np.asarray(a).shape[0] for a in arrays}
        if len(lengths) > 1:
            raise ValueError("diagnostic series must have equal lengths")

    def __len__(self):
        return np.asarray(self.steps).shape[0]


def sync_measure(positions) -> float:
    """Summed squared distance of every agent from the center of mass."""
    positions = np.asarray(positions, dtype=float)
    com = positions.mean(axis=0)
    return float(np.sum((positions - com) ** 2))


def epsilon_distortion(obj, positions) -> np.ndarray:
    """Gradient-of-mean minus mean-of-gradients over the ensemble.

    Vanishes when all agents coincide and, by linearity of the gradient,
    identically on quadratics.
    """
    positions = np.asarray(positions, dtype=float)
    com = positions.mean(axis=0)
    mean_grad = obj.gradient_batch(positions).mean(axis=0)
    return obj.gradient(com) - mean_grad


def smoothed_loss(obj, noise: NoiseModel, eta, x, n_samples, key: StreamKey):
    """Monte Carlo estimate of the loss convolved with the scaled noise.

    Estimates ``E[f(x - eta * zeta)]`` with draws addressed by ``key``.
    Returns ``(estimate, standard_error)``.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rng = stream_generator(key)
    template = np.broadcast_to(x, (int(n_samples), x.shape[0]))
    draws = noise._draw_block(rng, template)
    values = np.asarray(obj.value_batch(x[None, :] - eta * draws), dtype=float)
    estimate = float(values.mean())
    if n_samples == 1:
        return estimate, float("inf")
    stderr = float(values.std(ddof=1) / np.sqrt(n_samples))
    return estimate, stderr


def smoothed_loss_grid(obj, noise, eta, grid, n_samples, seed):
    """Smoothed-loss curve over a 1-D grid using common random draws."""
    grid = np.asarray(grid, dtype=float)
    rng = stream_generator(StreamKey(int(seed)))
    template = np.zeros((int(n_samples), 1))
    draws = noise._draw_block(rng, template)[:, 0]
    out = np.empty_like(grid)
    for i, g in enumerate(grid):
        pts = (g - eta * draws)[:, None]
        out[i] = float(np.mean(obj.value_batch(pts)))
    return out


# ---------------------------------------------------------------------------
# Kernel density estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityEstimate:
    """Gaussian-kernel density on a grid; ``spike`` flags zero-variance input."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    spike: bool = False
    spike_location: float | None = None


def silverman_bandwidth(samples) -> float:
    """Rule-of-thumb bandwidth ``1.06 * std * m^(-1/5)``."""
    samples = np.asarray(samples, dtype=float)
    return float(1.06 * samples.std(ddof=1) * samples.size ** (-0.2))


def kde(samples, bandwidth=None, grid_points=512) -> DensityEstimate:
    """Gaussian kernel density of 1-D samples on an automatic grid.

    The grid spans the sample range widened by three bandwidths. With
    zero sample variance no density exists; the estimate is returned with
    ``spike=True`` and the common value recorded instead.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 2:
        raise ValueError("need at least two samples")
    if np.ptp(samples) == 0.0:
        return DensityEstimate(
            grid=np.array([samples[0]]),
            density=np.array([np.inf]),
            bandwidth=0.0,
            spike=True,
            spike_location=float(samples[0]),
        )
    bw = float(bandwidth) if bandwidth is not None else silverman_bandwidth(samples)
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(samples.min() - 3.0 * bw, samples.max() + 3.0 * bw, int(grid_points))
    density = np.zeros_like(grid)
    norm = 1.0 / (samples.size * bw * np.sqrt(2.0 * np.pi))
    chunk = max(1, int(2e6 // grid.size))
    for start in range(0, samples.size, chunk):
        block = samples[start:start + chunk]
        z = (grid[:, None] - block[None, :]) / bw
        density += norm * np.exp(-0.5 * z**2).sum(axis=1)
    return DensityEstimate(grid=grid, density=density, bandwidth=bw)


def kde_evaluate(estimate: DensityEstimate, x) -> np.ndarray:
    """Linear interpolation of a density estimate at points ``x``."""
    return np.interp(np.asarray(x, dtype=float), estimate.grid, estimate.density,
                     left=0.0, right=0.0)


# ---------------------------------------------------------------------------
# Iterate averaging and linear-diffusion variances
# ---------------------------------------------------------------------------

def loss_cross_section(obj, grid_x, grid_y, fill=-1.2):
    """2-D slice of a high-dimensional loss for contour visualization.

    Evaluates the objective over the product grid of the first two
    coordinates with every remaining coordinate held at ``fill``.
    Returns a (len(grid_y), len(grid_x)) value matrix.
    """
    grid_x = np.asarray(grid_x, dtype=float)
    grid_y = np.asarray(grid_y, dtype=float)
    if obj.dimension < 2:
        raise ValueError("cross sections need at least two coordinates")
    out = np.empty((grid_y.size, grid_x.size))
    row = np.full((grid_x.size, obj.dimension), float(fill))
    for i, y in enumerate(grid_y):
        row[:, 0] = grid_x
        row[:, 1] = y
        out[i] = obj.value_batch(row)
    return out


def iterate_average(trajectory) -> np.ndarray:
    """Running means ``z_T = (1/T) sum_{t<=T} x_t`` of a trajectory."""
    traj = np.asarray(trajectory, dtype=float)
    if traj.shape[0] == 0:
        raise ValueError("trajectory must be nonempty")
    counts = np.arange(1, traj.shape[0] + 1, dtype=float)
    if traj.ndim == 1:
        return np.cumsum(traj) / counts
    return np.cumsum(traj, axis=0) / counts[:, None]


def ou_stationary_variance(A, Sigma, p=1) -> np.ndarray:
    """Stationary covariance of ``dx = -A x dt + B dW / sqrt(p)``.

    Solves ``A V + V A^T = Sigma / p`` by the vectorized direct linear
    solve. ``A`` must be stable as written (eigenvalues with positive
    real part, since the drift carries the minus sign).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or Sigma.shape != (n, n):
        raise ValueError("A and Sigma must be square matrices of equal size")
    if np.any(np.real(np.linalg.eigvals(A)) <= 0):
        raise ValueError("A must have eigenvalues with positive real part")
    eye = np.eye(n)
    M = np.kron(eye, A) + np.kron(A, eye)
    if np.linalg.cond(M) > 1e12:
        raise np.linalg.LinAlgError("Lyapunov system is ill-conditioned")
    v = np.linalg.solve(M, (Sigma / p).flatten(order="F"))
    V = v.reshape(n, n, order="F")
    return 0.5 * (V + V.T)


def ou_asymptotic_avg_variance(A, Sigma, p=1) -> np.ndarray:
    """Asymptotic covariance of the scaled running average of the diffusion.

    ``(1/p) A^{-1} Sigma A^{-T}``: the limit of ``Var[sqrt(t) z(t)]`` for
    the iterate average z of ``dx = -A x dt + B dW / sqrt(p)``. Invariant
    under preconditioning ``(A, Sigma) -> (Q A, Q Sigma Q^T)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    Ainv_Sigma = np.linalg.solve(A, Sigma)
    return np.linalg.solve(A, Ainv_Sigma.T).T / p


def auxiliary_y_sequence(x_traj, noise_traj, eps_traj, obj, eta, b=1.0, p=1):
    """Residuals of the lookahead-sequence identity along a recorded run.

    For the center-of-mass trajectory with recorded standardized noise
    ``zeta_t`` (``sqrt(b p)`` times the agent-mean draw) and distortions
    ``eps_t``, computes ``y_t = x_t - eta grad f(x_t)`` and returns the
    norms of ``x_{t+1} - (y_t + eta eps_t - (eta / sqrt(b p)) zeta_t)``,
    which are zero (to rounding) for a faithfully recorded run.
    """
    x_traj = np.atleast_2d(np.asarray(x_traj, dtype=float))
    noise_traj = np.atleast_2d(np.asarray(noise_traj, dtype=float))
    eps_traj = np.atleast_2d(np.asarray(eps_traj, dtype=float))
    T = x_traj.shape[0] - 1
    if T < 1 or noise_traj.shape[0] != T or eps_traj.shape[0] != T:
        raise ValueError("need x of length T+1 and noise/eps of length T")
    grads = obj.gradient_batch(x_traj[:-1])
    y = x_traj[:-1] - eta * grads
    predicted = y + eta * eps_traj - (eta / np.sqrt(b * p)) * noise_traj
    return np.linalg.norm(x_traj[1:] - predicted, axis=1)


# ---------------------------------------------------------------------------
# Theory-versus-experiment report
# ---------------------------------------------------------------------------

def _post_burn_mean(series_list, burn_in):
    values = []
    for s in series_list:
        s = np.asarray(s, dtype=float)
        if s.size == 0:
            continue
        start = int(np.floor(burn_in * s.size))
        start = min(start, s.size - 1)
        values.append(s[start:].mean())
    if not values:
        raise ValueError("no diagnostic samples to report on")
    return float(np.mean(values))


def bound_report(diagnostics, inputs: BoundInputs, burn_in=0.2, com_distances=None):
    """Pair post-burn-in ensemble statistics with their theoretical bounds.

    ``diagnostics`` is a sequence of :class:`TrajectoryDiagnostics`, one
    per run (diverged runs should be excluded by the caller or will simply
    contribute their recorded prefix). Returns a list of entries
    ``{quantity, empirical, bound, margin, passed, status}``; bounds whose
    preconditions fail are reported as not applicable rather than failed.
    """
    if not diagnostics:
        raise ValueError("need at least one run")
    report = []

    def entry(quantity, empirical, bound_fn):
        try:
            bound_value = bound_fn()
        except BoundDomainError as exc:
            return {
                "quantity": quantity,
                "empirical": empirical,
                "bound": None,
                "margin": None,
                "pass": None,
                "status": f"not applicable ({exc})",
            }
        margin = bound_value - empirical
        return {
            "quantity": quantity,
            "empirical": empirical,
            "bound": bound_value,
            "margin": margin,
            "pass": bool(margin >= 0.0),
            "status": "pass" if margin >= 0.0 else "fail",
        }

    sync_mean = _post_burn_mean([d.sync_measure for d in diagnostics], burn_in)
    report.append(entry("sync_measure", sync_mean, lambda: sync_bound(inputs)))

    eps_mean = _post_burn_mean([d.eps_norm for d in diagnostics], burn_in)
    report.append(
        entry("eps_norm", eps_mean, lambda: eps_bound(inputs, inputs.k - inputs.lambda_bar))
    )

    if com_distances is not None:
        com_mean = float(np.mean(np.asarray(com_distances, dtype=float)))
        report.append(entry("com_distance", com_mean, lambda: qsgd_conv_bound(inputs)))
    return report
