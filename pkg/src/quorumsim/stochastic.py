"""Reproducible noise streams and gradient-perturbation models.

All sampling is counter-based: a draw is addressed by a
:class:`StreamKey` (master seed, agent id, step, draw index) and fed to a
Philox bit generator, so identical keys always reproduce identical
samples while distinct keys give statistically independent streams. This
lets agents and runs be stepped in parallel, in any order, with results
identical to serial execution.

The ensemble hot path uses :class:`NoiseStream`, which draws one block of
per-agent samples per step from the same keyed generator family (chunked
for speed); single draws go through :func:`sample_noise`.

Noise samples are returned unscaled; update rules multiply them by the
learning rate, and any minibatch attenuation is folded into the model's
amplitude parameter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# Domain separators packed into the top counter word so different draw
# purposes never overlap within one master seed. Word 0 is left zero:
# Philox increments it (with carry) as a draw consumes blocks, so keyed
# streams stay disjoint for any draw length below 2^64 blocks.
_PURPOSE_AGENT = 1
_PURPOSE_BLOCK = 2
_PURPOSE_INIT = 3

# Steps per pre-drawn block in NoiseStream. Fixed: changing it would
# change which sample lands on which step.
_CHUNK = 1024


@dataclass(frozen=True)
class StreamKey:
    """Address of one noise draw: (master_seed, agent_id, step, draw_index)."""

    master_seed: int
    agent_id: int = 0
    step: int = 0
    draw_index: int = 0


def derive_stream(master_seed, agent_id, step):
    """Key for agent ``agent_id``'s draw at ``step`` under ``master_seed``."""
    return StreamKey(int(master_seed), int(agent_id), int(step), 0)


def fold_seed(master_seed, run_index):
    """Derive an independent per-run seed from the master seed."""
    ss = np.random.SeedSequence(entropy=[int(master_seed), int(run_index)])
    return int(ss.generate_state(1, np.uint64)[0])


def _philox(master_seed, counter):
    key = np.random.SeedSequence(entropy=int(master_seed)).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def stream_generator(key: StreamKey):
    """Generator positioned at ``key``; equal keys yield equal streams."""
    counter = [0, key.draw_index, key.step, (key.agent_id << 3) | _PURPOSE_AGENT]
    return _philox(key.master_seed, counter)


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------

class NoiseModel:
    """Generator of the stochastic-gradient perturbation for one agent.

    Subclasses implement ``_draw(rng, x)`` returning one mean-zero sample
    of shape ``(n,)`` given the agent position ``x``, plus a vectorized
    ``_draw_block`` used by :class:`NoiseStream`.
    """

    dimension: int | None = None  # None means any

    def _check_dim(self, n):
        if self.dimension is not None and self.dimension != n:
            raise ValueError(
                f"noise model dimension {self.dimension} does not match state dimension {n}"
            )

    def _draw(self, rng, x):
        raise NotImplementedError

    def _draw_block(self, rng, X):
        # (m, n) positions -> (m, n) samples; default loops.
        return np.stack([self._draw(rng, row) for row in X])

    def trace_covariance(self, n):
        """Trace of the sample covariance in dimension n (None if unknown)."""
        return None


class NoNoise(NoiseModel):
    """Zero perturbation; turns the steppers into deterministic descent."""

    def _draw(self, rng, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def _draw_block(self, rng, X):
        return np.zeros_like(np.asarray(X, dtype=float))

    def trace_covariance(self, n):
        return 0.0


class AdditiveUniform(NoiseModel):
    """Componentwise uniform noise on ``[-a, a]``."""

    def __init__(self, half_width):
        if half_width < 0:
            raise ValueError("half_width must be nonnegative")
        self.half_width = float(half_width)

    def _draw(self, rng, x):
        n = np.asarray(x).shape[-1]
        return rng.uniform(-self.half_width, self.half_width, size=n)

    def _draw_block(self, rng, X):
        return rng.uniform(-self.half_width, self.half_width, size=np.asarray(X).shape)

    def trace_covariance(self, n):
        return n * self.half_width**2 / 3.0


class AdditiveGaussian(NoiseModel):
    """Componentwise isotropic Gaussian noise with standard deviation sigma."""

    def __init__(self, sigma):
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self.sigma = float(sigma)

    def _draw(self, rng, x):
        n = np.asarray(x).shape[-1]
        return self.sigma * rng.standard_normal(n)

    def _draw_block(self, rng, X):
        return self.sigma * rng.standard_normal(np.asarray(X).shape)

    def trace_covariance(self, n):
        return n * self.sigma**2


class ConstantMatrix(NoiseModel):
    """Correlated Gaussian noise ``B xi`` with covariance ``B B^T``."""

    def __init__(self, B):
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape[0] != B.shape[1]:
            raise ValueError("B must be square")
        self.B = B
        self.dimension = B.shape[0]

    def _draw(self, rng, x):
        self._check_dim(np.asarray(x).shape[-1])
        return self.B @ rng.standard_normal(self.dimension)

    def _draw_block(self, rng, X):
        X = np.asarray(X)
        self._check_dim(X.shape[-1])
        xi = rng.standard_normal(X.shape)
        return xi @ self.B.T

    def trace_covariance(self, n):
        self._check_dim(n)
        return float(np.trace(self.B @ self.B.T))


class StateScaledGaussian(NoiseModel):
    """Gaussian noise ``B(x) xi`` with a user-supplied matrix rule."""

    def __init__(self, matrix_rule: Callable[[np.ndarray], np.ndarray]):
        self.matrix_rule = matrix_rule

    def _draw(self, rng, x):
        x = np.asarray(x, dtype=float)
        B = np.atleast_2d(np.asarray(self.matrix_rule(x), dtype=float))
        return B @ rng.standard_normal(x.shape[-1])

    def _draw_block(self, rng, X):
        X = np.asarray(X, dtype=float)
        xi = rng.standard_normal(X.shape)
        out = np.empty_like(X)
        for i, row in enumerate(X):
            B = np.atleast_2d(np.asarray(self.matrix_rule(row), dtype=float))
            out[i] = B @ xi[i]
        return out


def scale_amplitude(model: NoiseModel, factor: float) -> NoiseModel:
    """Return a copy of ``model`` with its amplitude multiplied by ``factor``.

    Used to fold the ``1/sqrt(batch size)`` attenuation into the model.
    """
    if factor == 1.0:
        return model
    if isinstance(model, NoNoise):
        return model
    if isinstance(model, AdditiveUniform):
        return AdditiveUniform(model.half_width * factor)
    if isinstance(model, AdditiveGaussian):
        return AdditiveGaussian(model.sigma * factor)
    if isinstance(model, ConstantMatrix):
        return ConstantMatrix(model.B * factor)
    if isinstance(model, StateScaledGaussian):
        rule = model.matrix_rule
        return StateScaledGaussian(lambda x: factor * np.asarray(rule(x)))
    raise TypeError(f"cannot rescale noise model of type {type(model).__name__}")


def sample_noise(model: NoiseModel, x, key: StreamKey):
    """One mean-zero perturbation draw for position ``x``, addressed by key.

    Deterministic in the key: the same (seed, agent, step, draw index)
    always returns the same sample.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    model._check_dim(x.shape[-1])
    rng = stream_generator(key)
    return model._draw(rng, x)


class NoiseStream:
    """Per-run stream of (p, n) noise blocks, one block per step.

    Blocks are pre-drawn in fixed-size chunks from Philox generators keyed
    by (run seed, chunk index), so the sample used at a given (step, agent)
    is a pure function of the run seed regardless of execution order or
    worker count.
    """

    def __init__(self, model: NoiseModel, seed: int, p: int, n: int):
        self.model = model
        self.seed = int(seed)
        self.p = int(p)
        self.n = int(n)
        self._chunk_index = -1
        self._chunk = None

    def _load_chunk(self, chunk_index):
        rng = _philox(self.seed, [0, chunk_index, 0, _PURPOSE_BLOCK])
        if isinstance(self.model, StateScaledGaussian):
            # State-dependent models cannot be pre-drawn; keep raw normals.
            self._chunk = rng.standard_normal((_CHUNK, self.p, self.n))
        else:
            template = np.zeros((_CHUNK * self.p, self.n))
            block = self.model._draw_block(rng, template)
            self._chunk = block.reshape(_CHUNK, self.p, self.n)
        self._chunk_index = chunk_index

    def block(self, step, positions=None):
        """Noise block for ``step``; positions required for state-scaled models."""
        chunk_index, offset = divmod(int(step), _CHUNK)
        if chunk_index != self._chunk_index:
            self._load_chunk(chunk_index)
        raw = self._chunk[offset]
        if isinstance(self.model, StateScaledGaussian):
            if positions is None:
                raise ValueError("state-scaled noise needs agent positions")
            out = np.empty_like(raw)
            for i in range(self.p):
                B = np.atleast_2d(np.asarray(self.model.matrix_rule(positions[i]), dtype=float))
                out[i] = B @ raw[i]
            return out
        return raw


def initial_positions(seed, p, n, low, high):
    """Uniform agent initialization over a box, keyed to the run seed."""
    rng = _philox(seed, [0, 0, 0, _PURPOSE_INIT])
    low = np.broadcast_to(np.asarray(low, dtype=float), (n,))
    high = np.broadcast_to(np.asarray(high, dtype=float), (n,))
    return low + (high - low) * rng.random((p, n))
