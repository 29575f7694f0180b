"""Closed-form synchronization and convergence bounds for coupled SGD.

Every bound is a pure scalar function of the problem constants with an
explicit precondition check. Outside its validity domain a bound raises
:class:`BoundDomainError` so automated theory-versus-experiment reports
can route to "not applicable" instead of silently producing garbage.

Symbols follow the usual conventions for this family of algorithms:
``p`` agents in dimension ``n`` with batch size ``b`` and learning rate
``eta``; ``C`` bounds the noise covariance trace; ``Q`` bounds the
eigenvalues of the Hessians of the negated gradient components;
``lambda_bar`` bounds the eigenvalues of the negated Hessian;
``lambda_strong`` is the strong-convexity modulus; ``k`` is the coupling
gain; ``k1``/``k2``/``mu`` are momentum coupling and damping parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple


class BoundDomainError(ValueError):
    """A bound was evaluated outside the domain where it is proved."""


@dataclass(frozen=True)
class BoundInputs:
    """Problem constants consumed by the bound formulas."""

    p: int = 1
    n: int = 1
    b: float = 1.0
    eta: float = 0.0
    C: float = 0.0
    Q: float = 0.0
    k: float = 0.0
    lambda_bar: float = 0.0
    lambda_strong: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    mu: float = 0.0
    delta_metric: float = 0.0

    def __post_init__(self):
        if self.p < 1:
            raise BoundDomainError("need at least one agent")
        if self.b < 1:
            raise BoundDomainError("batch size must be at least 1")
        for name in ("n", "eta", "C", "Q", "k", "k1", "k2", "mu", "delta_metric"):
            if getattr(self, name) < 0:
                raise BoundDomainError(f"{name} must be nonnegative")


def sync_bound(inputs: BoundInputs) -> float:
    """Stationary bound on the expected summed squared spread of the agents.

    ``(p - 1) C eta / (2 b (k - lambda_bar))``, valid once the coupling
    gain exceeds the negated-Hessian eigenvalue bound.
    """
    gap = inputs.k - inputs.lambda_bar
    if gap <= 0:
        raise BoundDomainError(
            f"coupling gain k={inputs.k} must exceed lambda_bar={inputs.lambda_bar}"
        )
    return (inputs.p - 1) * inputs.C * inputs.eta / (2.0 * inputs.b * gap)


def sync_bound_multi_lr(inputs: BoundInputs, etas) -> float:
    """Spread bound when each agent carries its own learning rate.

    ``C / (2 p b (k - lambda_bar)) * sum_{i<j} (eta_i + eta_j)``; with all
    rates equal this reduces exactly to :func:`sync_bound`.
    """
    gap = inputs.k - inputs.lambda_bar
    if gap <= 0:
        raise BoundDomainError(
            f"coupling gain k={inputs.k} must exceed lambda_bar={inputs.lambda_bar}"
        )
    etas = list(float(e) for e in etas)
    p = len(etas)
    if p != inputs.p:
        raise BoundDomainError("one learning rate per agent is required")
    # sum_{i<j} (eta_i + eta_j) = (p - 1) * sum_i eta_i
    pair_sum = (p - 1) * sum(etas)
    return inputs.C * pair_sum / (2.0 * p * inputs.b * gap)


def eps_bound(inputs: BoundInputs, rate: float) -> float:
    """Bound on the expected norm of the mean-gradient distortion.

    ``(p - 1) sqrt(n) Q C eta / (4 p b rate)`` where ``rate`` is the
    synchronization rate of the coupled system (the coupling gap for a
    general objective, ``lambda_strong + k`` under strong convexity).
    """
    if rate <= 0:
        raise BoundDomainError("synchronization rate must be positive")
    return (
        (inputs.p - 1)
        * math.sqrt(inputs.n)
        * inputs.Q
        * inputs.C
        * inputs.eta
        / (4.0 * inputs.p * inputs.b * rate)
    )


def qsgd_conv_bound(inputs: BoundInputs) -> float:
    """Expected distance of the center of mass from the strong-convex minimum.

    Distortion term plus averaged-noise term:
    ``Q (p-1) C sqrt(n) eta / (4 p b lam (lam + k)) + sqrt(eta C / (2 b p lam))``.
    """
    lam = inputs.lambda_strong
    if lam <= 0:
        raise BoundDomainError("strong convexity modulus must be positive")
    first = (
        inputs.Q
        * (inputs.p - 1)
        * inputs.C
        * math.sqrt(inputs.n)
        * inputs.eta
        / (4.0 * inputs.p * inputs.b * lam * (lam + inputs.k))
    )
    second = math.sqrt(inputs.eta * inputs.C / (2.0 * inputs.b * inputs.p * lam))
    return first + second


def easgd_rate(lambda_strong: float, k: float, p: int) -> float:
    """Contraction-rate lower bound of the synchronized elastic system.

    ``(lam + k + k p)/2 - sqrt(((lam + k - k p)/2)^2 + k^2 p)``.
    """
    if lambda_strong <= 0:
        raise BoundDomainError("strong convexity modulus must be positive")
    if k <= 0:
        raise BoundDomainError("coupling gain must be positive")
    if p < 1:
        raise BoundDomainError("need at least one agent")
    half_sum = (lambda_strong + k + k * p) / 2.0
    half_diff = (lambda_strong + k - k * p) / 2.0
    return half_sum - math.sqrt(half_diff**2 + k**2 * p)


def easgd_conv_bound(inputs: BoundInputs, C_p: float, gamma: float) -> float:
    """Deviation bound for the elastic algorithm's combined state.

    ``Q (p-1) C_p sqrt(n) eta / (4 b sqrt(p) gamma (lam + k))
    + sqrt(eta C_p / (2 b p gamma))`` with ``gamma`` the elastic
    contraction rate and ``C_p`` the (possibly p-dependent) metric-weighted
    noise trace bound.
    """
    if gamma <= 0:
        raise BoundDomainError("contraction rate gamma must be positive")
    if C_p < 0:
        raise BoundDomainError("noise trace bound must be nonnegative")
    lam = inputs.lambda_strong
    first = (
        inputs.Q
        * (inputs.p - 1)
        * C_p
        * math.sqrt(inputs.n)
        * inputs.eta
        / (4.0 * inputs.b * math.sqrt(inputs.p) * gamma * (lam + inputs.k))
    )
    second = math.sqrt(inputs.eta * C_p / (2.0 * inputs.b * inputs.p * gamma))
    return first + second


class MomentumSyncRate(NamedTuple):
    threshold_ok: bool
    xi: float


def momentum_sync_rate(k1, k2, mu_inf, lambda_strong, lambda_smooth) -> MomentumSyncRate:
    """Synchronization rate of position/velocity-coupled momentum agents.

    ``threshold_ok`` reports whether the position gain clears
    ``max((1-L)^2, (1-lam)^2) / (4 (mu + k2))``; ``xi`` is the rate

    ``(k1 + mu + k2)/2 - sqrt(((k1 - (mu + k2))/2)^2 + max(...)/4)``.
    """
    for name, v in (("k1", k1), ("k2", k2), ("mu_inf", mu_inf),
                    ("lambda_strong", lambda_strong), ("lambda_smooth", lambda_smooth)):
        if v < 0:
            raise BoundDomainError(f"{name} must be nonnegative")
    damping = mu_inf + k2
    if damping == 0:
        raise BoundDomainError("mu_inf + k2 must be positive")
    biggest = max((1.0 - lambda_smooth) ** 2, (1.0 - lambda_strong) ** 2)
    ok = k1 > biggest / (4.0 * damping)
    xi = (k1 + damping) / 2.0 - math.sqrt(((k1 - damping) / 2.0) ** 2 + biggest / 4.0)
    return MomentumSyncRate(ok, xi)


class MomentumMetricParams(NamedTuple):
    delta: float
    a: float
    psi: float
    Psi: float


def momentum_metric_params(mu, lambda_strong, lambda_smooth, alpha=1e-3, delta=None):
    """Metric parameters for the momentum contraction analysis.

    Computes the metric mixing weight ``delta`` (its canonical value from
    the damping mu minus a small ``alpha``, unless given explicitly), the
    shear scale ``a``, and the extreme eigenvalues ``psi <= Psi`` of the
    metric built from them.
    """
    lam, L = lambda_strong, lambda_smooth
    if lam <= 0 or L < lam:
        raise BoundDomainError("need 0 < lambda_strong <= lambda_smooth")
    threshold = 2.0 * math.sqrt(max(lam + L - 2.0 * math.sqrt(lam * L), 0.0))
    if mu <= threshold:
        raise BoundDomainError(f"damping mu={mu} must exceed {threshold}")
    if delta is None:
        inner = mu**2 + 4.0 * (2.0 * math.sqrt(L * lam) - (L + lam))
        if inner < 0:
            raise BoundDomainError("metric weight undefined for this mu")
        delta = (math.sqrt(inner) + mu) / (2.0 * mu) - alpha
    if not 0.0 < delta < 1.0:
        raise BoundDomainError(f"metric weight delta={delta} outside (0, 1)")
    a_sq = 0.5 * (lam + L + 2.0 * (delta - 1.0) * delta * mu**2)
    if a_sq <= 0:
        raise BoundDomainError("metric shear scale is not real for these inputs")
    a = math.sqrt(a_sq)
    trace_term = 1.0 + a**2 + delta**2 * mu**2
    disc = math.sqrt(trace_term**2 - 4.0 * a**2)
    psi = 0.5 * (trace_term - disc)
    Psi = 0.5 * (trace_term + disc)
    return MomentumMetricParams(delta, a, psi, Psi)


def momentum_contraction_rate(mu, delta, lambda_strong, lambda_smooth) -> float:
    """Contraction-rate lower bound of the synchronized momentum system.

    ``mu/2 - sqrt(((2 delta - 1) mu / 2)^2 + (L - lam)^2 /
    (8 (lam + L + 2 (delta - 1) delta mu^2)))``.
    """
    lam, L = lambda_strong, lambda_smooth
    if not 0.0 < delta < 1.0:
        raise BoundDomainError("delta must lie in (0, 1)")
    denom = 2.0 * (lam + L + 2.0 * (delta - 1.0) * delta * mu**2)
    if denom <= 0:
        raise BoundDomainError("inner square root is not real for these inputs")
    half_sum = (delta * mu + (1.0 - delta) * mu) / 2.0
    half_diff = (delta * mu - (1.0 - delta) * mu) / 2.0
    return half_sum - math.sqrt(half_diff**2 + 0.25 * (L - lam) ** 2 / denom)


def momentum_conv_bound(inputs: BoundInputs, kappa, xi, psi, Psi) -> float:
    """Deviation bound for the momentum algorithm's combined state.

    ``Q sqrt(Psi) (p-1) C sqrt(n) eta / (sqrt(psi) 4 b p kappa xi)
    + sqrt(eta C / (2 b p psi kappa))``.
    """
    if kappa <= 0 or xi <= 0 or psi <= 0:
        raise BoundDomainError("rates kappa, xi and metric floor psi must be positive")
    first = (
        inputs.Q
        * math.sqrt(Psi)
        * (inputs.p - 1)
        * inputs.C
        * math.sqrt(inputs.n)
        * inputs.eta
        / (math.sqrt(psi) * 4.0 * inputs.b * inputs.p * kappa * xi)
    )
    second = math.sqrt(inputs.eta * inputs.C / (2.0 * inputs.b * inputs.p * psi * kappa))
    return first + second


class SdSyncRate(NamedTuple):
    rate: float
    guaranteed: bool


def sd_sync_rate(inf_gain_sum: float, sup_lambda_bar: float) -> SdSyncRate:
    """Synchronization rate under state-dependent per-agent gains.

    The rate is the worst-case total gain minus the negated-Hessian
    eigenvalue bound, independent of the number of agents; a nonpositive
    value means no synchronization guarantee.
    """
    rate = inf_gain_sum - sup_lambda_bar
    return SdSyncRate(rate, rate > 0)
