"""One-step update rules for ensembles of coupled stochastic-gradient agents.

Every stepper is a pure function ``state -> state`` operating on an
:class:`EnsembleState`. Updates are simultaneous: all agents read the
pre-step center of mass / quorum variable, so agents within a step can be
evaluated in parallel in any order. Noise enters as ``- eta_i * zeta_i``
with blocks supplied by a :class:`~quorumsim.stochastic.NoiseStream` (or
injected directly via ``zeta=`` for tests and recording).

A non-finite coordinate anywhere in the updated state aborts the step
with :class:`DivergenceError`; harnesses record this as a run outcome
rather than crashing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .stochastic import NoiseStream

# Weight of the newest center of mass in the reporting-only exponentially
# weighted quorum kept by mean-coupled runs.
EMA_GAMMA = 0.1

LR_DECAY_FACTORS = (5.0, 2.0, 2.0)
LR_PATIENCE = 5
LR_IMPROVE_FRACTION = 0.01


class DivergenceError(RuntimeError):
    """A state coordinate left the floating-point range."""

    def __init__(self, agent, step):
        self.agent = int(agent)
        self.step = int(step)
        super().__init__(f"agent {self.agent} diverged at step {self.step}")


class AlgorithmKind(str, enum.Enum):
    SGD = "sgd"
    QSGD = "qsgd"
    QSGD_MOMENTUM = "qsgd_momentum"
    EASGD = "easgd"
    EASGD_NESTEROV = "easgd_nesterov"
    SD_QSGD = "sd_qsgd"
    GENERIC_QUORUM = "generic_quorum"


MOMENTUM_KINDS = {AlgorithmKind.QSGD_MOMENTUM, AlgorithmKind.EASGD_NESTEROV}
QUORUM_KINDS = {AlgorithmKind.EASGD, AlgorithmKind.EASGD_NESTEROV, AlgorithmKind.GENERIC_QUORUM}


@dataclass(frozen=True)
class EnsembleState:
    """Positions (p, n), optional velocities/quorum, per-agent rates, step."""

    positions: np.ndarray
    etas: np.ndarray
    velocities: np.ndarray | None = None
    quorum: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        etas = np.broadcast_to(np.asarray(self.etas, dtype=float), (pos.shape[0],)).copy()
        object.__setattr__(self, "etas", etas)
        if self.velocities is not None:
            v = np.asarray(self.velocities, dtype=float)
            if v.shape != pos.shape:
                raise ValueError("velocities must match positions in shape")
            object.__setattr__(self, "velocities", v)
        if self.quorum is not None:
            q = np.asarray(self.quorum, dtype=float)
            if q.shape != (pos.shape[1],):
                raise ValueError("quorum must be a vector of the state dimension")
            object.__setattr__(self, "quorum", q)

    @property
    def p(self):
        return self.positions.shape[0]

    @property
    def n(self):
        return self.positions.shape[1]


def center_of_mass(positions):
    """Columnwise mean of the agent positions."""
    return np.asarray(positions).mean(axis=0)


# ---------------------------------------------------------------------------
# Coupling schedules
# ---------------------------------------------------------------------------

@dataclass
class Constant:
    """Fixed total gain k; per-agent gains k/p so the gain sum is k."""

    k: float


@dataclass
class TimeRamp:
    """Total gain ramping linearly from k0 to k1 over ramp_steps."""

    k0: float
    k1: float
    ramp_steps: int

    def total_gain(self, step):
        if self.ramp_steps <= 0:
            return self.k1
        frac = min(max(step / self.ramp_steps, 0.0), 1.0)
        return self.k0 + (self.k1 - self.k0) * frac


@dataclass
class WtaSpike:
    """Spiking winner-take-all gains favoring the current best agent.

    At each epoch start the best agent's gain spikes to M*k with all other
    gains at zero, then the gains relax back to the uniform value k/p with
    time constant tau, reaching it at t_f (where the winner's residual
    discontinuity is snapped to k/p).
    """

    k: float
    M: float
    tau: float
    t_f: float
    epoch_len: int
    j_star: int = 0


def wta_gains(t, j_star, k, M, tau, t_f, p):
    """Per-agent gain vector of the winner-take-all spike at phase ``t``.

    The winner decays from M*k as ``k/p + (M p - 1)(k/p) e^{-t/tau}``; the
    rest grow from zero as ``(k/p)(e^{t/tau}-1)/(e^{t_f/tau}-1)``. At
    ``t == t_f`` every gain equals k/p exactly.
    """
    if t < 0 or t > t_f:
        raise ValueError(f"spike phase t={t} outside [0, {t_f}]")
    if M < 1:
        raise ValueError("magnification M must be at least 1")
    base = k / p
    if t == t_f:
        return np.full(p, base)
    gains = np.full(p, base * np.expm1(t / tau) / np.expm1(t_f / tau))
    gains[j_star] = base + (M * p - 1.0) * base * np.exp(-t / tau)
    return gains


# ---------------------------------------------------------------------------
# Internal helpers
# ---------------------------------------------------------------------------

def _noise_block(state, noise, zeta):
    if zeta is not None:
        z = np.asarray(zeta, dtype=float)
        if z.shape != state.positions.shape:
            raise ValueError("zeta must have shape (p, n)")
        return z
    if noise is None:
        return np.zeros_like(state.positions)
    return noise.block(state.step, state.positions)


def _check_finite(positions, step):
    if not np.all(np.isfinite(positions)):
        bad = np.where(~np.isfinite(positions).all(axis=1))[0]
        raise DivergenceError(bad[0] if bad.size else 0, step)


def _ema_quorum(state, com):
    if state.quorum is None:
        return None
    return EMA_GAMMA * com + (1.0 - EMA_GAMMA) * state.quorum


# ---------------------------------------------------------------------------
# Steppers
# ---------------------------------------------------------------------------

def step_qsgd(state, obj, k, noise=None, zeta=None):
    """Gradient step with coupling toward the pre-step center of mass.

    ``x_i <- x_i - eta_i grad f(x_i) + eta_i k (com - x_i) - eta_i zeta_i``.
    With a single agent the coupling term vanishes identically and the
    update reduces to plain stochastic gradient descent. A quorum vector
    on the state is treated as a reporting-only exponential average of the
    center of mass and never feeds back into the dynamics.
    """
    if state.velocities is not None:
        raise ValueError("mean-coupled step without momentum expects no velocities")
    if k < 0:
        raise ValueError("coupling gain must be nonnegative")
    z = _noise_block(state, noise, zeta)
    com = center_of_mass(state.positions)
    grads = obj.gradient_batch(state.positions)
    e = state.etas[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        new_pos = state.positions + e * (k * (com - state.positions) - grads - z)
    _check_finite(new_pos, state.step)
    return replace(state, positions=new_pos, quorum=_ema_quorum(state, com), step=state.step + 1)


def step_qsgd_momentum(state, obj, k, delta, noise=None, zeta=None):
    """Momentum step with lookahead gradient and center-of-mass coupling.

    ``v_i <- delta v_i - eta_i grad f(x_i + delta v_i) - eta_i zeta_i``
    followed by ``x_i <- x_i + v_i + eta_i k (com - x_i)`` with the
    pre-step center of mass.
    """
    if state.velocities is None:
        raise ValueError("momentum step requires velocities")
    if not 0.0 <= delta < 1.0:
        raise ValueError("momentum coefficient must lie in [0, 1)")
    z = _noise_block(state, noise, zeta)
    com = center_of_mass(state.positions)
    e = state.etas[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        lookahead = state.positions + delta * state.velocities
        grads = obj.gradient_batch(lookahead)
        new_vel = delta * state.velocities - e * (grads + z)
        new_pos = state.positions + new_vel + e * k * (com - state.positions)
    _check_finite(new_pos, state.step)
    _check_finite(new_vel, state.step)
    return replace(
        state,
        positions=new_pos,
        velocities=new_vel,
        quorum=_ema_quorum(state, com),
        step=state.step + 1,
    )


def step_easgd(state, obj, k, noise=None, zeta=None):
    """Elastic step: agents pull toward the quorum, the quorum pulls back.

    ``x_i <- x_i - eta_i grad f(x_i) + eta_i k (q - x_i) - eta_i zeta_i``
    and ``q <- q + k sum_i eta_i (x_i - q)``, both from pre-step values.
    With equal learning rates the quorum update is the low-pass filter
    ``q + eta p k (com - q)``.
    """
    if state.quorum is None:
        raise ValueError("elastic averaging requires a quorum vector")
    if state.velocities is not None:
        raise ValueError("elastic step without momentum expects no velocities")
    z = _noise_block(state, noise, zeta)
    q = state.quorum
    grads = obj.gradient_batch(state.positions)
    e = state.etas[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        new_pos = state.positions + e * (k * (q - state.positions) - grads - z)
        new_q = q + k * np.sum(e * (state.positions - q), axis=0)
    _check_finite(new_pos, state.step)
    _check_finite(new_q[None, :], state.step)
    return replace(state, positions=new_pos, quorum=new_q, step=state.step + 1)


def step_easgd_nesterov(state, obj, k, delta, noise=None, zeta=None):
    """Elastic step with Nesterov momentum on each agent.

    ``v_i <- delta v_i - eta_i (grad f(x_i + delta v_i) + zeta_i)``,
    ``x_i <- x_i + v_i + eta_i k (q - x_i)``, and the same quorum low-pass
    update as the non-momentum elastic step. ``delta = 0`` recovers it
    exactly.
    """
    if state.quorum is None or state.velocities is None:
        raise ValueError("elastic momentum step requires quorum and velocities")
    if not 0.0 <= delta < 1.0:
        raise ValueError("momentum coefficient must lie in [0, 1)")
    z = _noise_block(state, noise, zeta)
    q = state.quorum
    e = state.etas[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        lookahead = state.positions + delta * state.velocities
        grads = obj.gradient_batch(lookahead)
        new_vel = delta * state.velocities - e * (grads + z)
        new_pos = state.positions + new_vel + e * k * (q - state.positions)
        new_q = q + k * np.sum(e * (state.positions - q), axis=0)
    _check_finite(new_pos, state.step)
    _check_finite(new_vel, state.step)
    _check_finite(new_q[None, :], state.step)
    return replace(
        state, positions=new_pos, velocities=new_vel, quorum=new_q, step=state.step + 1
    )


def step_sd_qsgd(state, obj, schedule, scores, noise=None, zeta=None, delta=None):
    """State-dependent coupling: gains set per agent by a schedule.

    At each epoch boundary the best-scoring agent (lowest score, ties to
    the lowest index) becomes the spike winner. The coupling term is
    ``eta_i (sum_j k_j x_j - x_i sum_j k_j)``; with all gains equal to k/p
    this is exactly the center-of-mass coupling. ``delta`` switches the
    agent update between the plain and momentum forms.
    """
    if isinstance(schedule, Constant):
        if delta is None:
            return step_qsgd(state, obj, schedule.k, noise=noise, zeta=zeta)
        return step_qsgd_momentum(state, obj, schedule.k, delta, noise=noise, zeta=zeta)
    if isinstance(schedule, TimeRamp):
        k_now = schedule.total_gain(state.step)
        if delta is None:
            return step_qsgd(state, obj, k_now, noise=noise, zeta=zeta)
        return step_qsgd_momentum(state, obj, k_now, delta, noise=noise, zeta=zeta)
    if not isinstance(schedule, WtaSpike):
        raise TypeError(f"unsupported coupling schedule {type(schedule).__name__}")

    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("scores must be nonempty")
    t_epoch = state.step % schedule.epoch_len
    if t_epoch == 0:
        schedule.j_star = int(np.argmin(scores))
    if t_epoch <= schedule.t_f:
        gains = wta_gains(
            t_epoch, schedule.j_star, schedule.k, schedule.M, schedule.tau, schedule.t_f, state.p
        )
    else:
        gains = np.full(state.p, schedule.k / state.p)

    z = _noise_block(state, noise, zeta)
    e = state.etas[:, None]
    weighted = gains @ state.positions
    gain_sum = float(np.sum(gains))
    coupling = e * (weighted[None, :] - state.positions * gain_sum)
    with np.errstate(over="ignore", invalid="ignore"):
        if delta is None:
            grads = obj.gradient_batch(state.positions)
            new_pos = state.positions - e * (grads + z) + coupling
            new_vel = state.velocities
        else:
            lookahead = state.positions + delta * state.velocities
            grads = obj.gradient_batch(lookahead)
            new_vel = delta * state.velocities - e * (grads + z)
            new_pos = state.positions + new_vel + coupling
    _check_finite(new_pos, state.step)
    com = center_of_mass(state.positions)
    return replace(
        state,
        positions=new_pos,
        velocities=new_vel,
        quorum=_ema_quorum(state, com),
        step=state.step + 1,
    )


def step_generic_quorum(state, obj, k, filter_fn, eta_quorum, noise=None, zeta=None):
    """Agents coupled to a quorum with arbitrary quorum dynamics.

    Agents update as in the mean-coupled step but toward the quorum q;
    the quorum follows ``q <- q + eta_quorum * g(q, com)`` for the
    supplied filter g. The linear filter ``g = c (com - q)`` with
    ``c = k p`` reproduces the elastic low-pass quorum law.
    """
    if state.quorum is None:
        raise ValueError("generic quorum step requires a quorum vector")
    z = _noise_block(state, noise, zeta)
    q = state.quorum
    com = center_of_mass(state.positions)
    grads = obj.gradient_batch(state.positions)
    e = state.etas[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        new_pos = state.positions + e * (k * (q - state.positions) - grads - z)
        new_q = q + eta_quorum * np.asarray(filter_fn(q, com), dtype=float)
    _check_finite(new_pos, state.step)
    _check_finite(new_q[None, :], state.step)
    return replace(state, positions=new_pos, quorum=new_q, step=state.step + 1)


class EmDrift(str, enum.Enum):
    QSGD = "qsgd"
    EASGD = "easgd"


def euler_maruyama_step(state, obj, kind, dt, k, noise=None, eta=1.0, b=1.0, zeta=None):
    """Euler-Maruyama step of the continuous-time coupled system.

    ``x_i <- x_i + drift_i dt + sqrt(eta dt / b) * zeta_i`` where the
    noise block ``zeta_i`` is one draw of the diffusion matrix model
    (``B xi`` with standard-normal xi). Drift is the gradient flow with
    center-of-mass coupling; in elastic mode the quorum is integrated with
    its ODE ``q' = k p (com - q)``. A zero diffusion reduces the step to
    forward Euler.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = _noise_block(state, noise, zeta)
    amp = np.sqrt(eta * dt / b)
    com = center_of_mass(state.positions)
    grads = obj.gradient_batch(state.positions)
    kind = EmDrift(kind)
    with np.errstate(over="ignore", invalid="ignore"):
        if kind is EmDrift.QSGD:
            drift = -grads + k * (com - state.positions)
            new_q = _ema_quorum(state, com)
        else:
            if state.quorum is None:
                raise ValueError("elastic drift requires a quorum vector")
            drift = -grads + k * (state.quorum - state.positions)
            new_q = state.quorum + dt * k * state.p * (com - state.quorum)
        new_pos = state.positions + dt * drift + amp * z
    _check_finite(new_pos, state.step)
    return replace(state, positions=new_pos, quorum=new_q, step=state.step + 1)


# ---------------------------------------------------------------------------
# Per-agent learning-rate scheduling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LrScheduleState:
    """Per-agent reference losses, stall counters, and decay stages."""

    reference: np.ndarray
    stalled: np.ndarray
    decays: np.ndarray

    @classmethod
    def initial(cls, p):
        return cls(
            reference=np.full(p, np.inf),
            stalled=np.zeros(p, dtype=int),
            decays=np.zeros(p, dtype=int),
        )


def lr_schedule_step(etas, sched, losses):
    """One scheduling check: decay stalled agents' learning rates.

    An agent whose loss has not improved on its reference by more than 1%
    for five consecutive checks has its rate divided by the next factor in
    (5, 2, 2); after three decays the rate is frozen. Returns the new
    ``(etas, schedule_state)`` pair.
    """
    etas = np.asarray(etas, dtype=float).copy()
    losses = np.asarray(losses, dtype=float)
    ref = sched.reference.copy()
    stalled = sched.stalled.copy()
    decays = sched.decays.copy()

    fresh = ~np.isfinite(ref)
    ref[fresh] = losses[fresh]
    stalled[fresh] = 0

    seen = ~fresh
    improved = seen & ((ref - losses) > LR_IMPROVE_FRACTION * np.abs(ref))
    ref[improved] = losses[improved]
    stalled[improved] = 0
    stalled[seen & ~improved] += 1

    due = (stalled >= LR_PATIENCE) & (decays < len(LR_DECAY_FACTORS))
    for i in np.where(due)[0]:
        etas[i] /= LR_DECAY_FACTORS[decays[i]]
        decays[i] += 1
        stalled[i] = 0
        ref[i] = losses[i]
    return etas, LrScheduleState(reference=ref, stalled=stalled, decays=decays)
