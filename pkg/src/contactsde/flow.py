"""Reproducible Brownian paths and Stratonovich integration of the contact
system together with its tangent flow and conformal factor.

Noise pipeline
--------------
Increments are reproducible bit for bit from ``(master_seed, stream_index)``
on every platform:

1. the per-stream seed is element ``stream_index`` of the SplitMix64 output
   sequence started at ``master_seed`` (golden-ratio increment followed by
   the standard SplitMix64 finalizer);
2. that seed feeds a PCG64 generator producing uniform doubles;
3. standard normals come from the polar Box-Muller method, consuming exactly
   two uniforms per attempt and accepting pairs with 0 < s < 1;
4. normals fill the d x n_steps increment matrix row by row and are scaled
   by sqrt(dt).

Schemes
-------
``heun``      predictor-corrector (Euler predictor, trapezoidal corrector).
``midpoint``  implicit Stratonovich midpoint rule, solved by fixed-point
              iteration to sup-norm tolerance 1e-13 (at most 50 sweeps).

Both schemes are applied unchanged to the augmented system carrying the flow
Jacobian J (the linearization dJ = DX J) and log of the conformal factor
(d log_lambda = -R(H_0) dt - sum_k R(H_k) o dB).  Co-integrating J with the
same internal stages makes J exactly the derivative of the discrete flow map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (
    IndivisibleFactor,
    InvalidStep,
    MidpointDivergence,
    NumericalFailure,
)
from .geometry import HamiltonianSystem

__all__ = [
    "BrownianPath", "sample_brownian", "coarsen",
    "Trajectory", "AugmentedState", "AugmentedTrajectory",
    "drift_diffusion", "step", "integrate", "integrate_augmented",
    "SCHEMES",
]

SCHEMES = ("heun", "midpoint")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def stream_seed(master_seed: int, stream_index: int) -> int:
    """Seed of the given noise stream: SplitMix64 output #stream_index."""
    return _splitmix64((master_seed + (stream_index + 1) * _GOLDEN) & _MASK64)


def _polar_gaussians(seed: int, count: int) -> np.ndarray:
    """``count`` standard normals via polar Box-Muller over PCG64 uniforms.

    Attempt i always consumes uniforms (2i, 2i+1) of the stream, so the
    output is independent of internal block sizing and is prefix-stable in
    ``count``.
    """
    gen = np.random.Generator(np.random.PCG64(seed))
    out = np.empty(count)
    filled = 0
    while filled < count:
        pairs_needed = (count - filled + 1) // 2
        block = max(int(pairs_needed / 0.75) + 8, 16)
        u = gen.random((block, 2))
        xy = 2.0 * u - 1.0
        s = xy[:, 0] ** 2 + xy[:, 1] ** 2
        ok = (s > 0.0) & (s < 1.0)
        xs = xy[ok, 0]
        ys = xy[ok, 1]
        ss = s[ok]
        factor = np.sqrt(-2.0 * np.log(ss) / ss)
        g = np.empty(2 * ss.size)
        g[0::2] = xs * factor
        g[1::2] = ys * factor
        take = min(g.size, count - filled)
        out[filled: filled + take] = g[:take]
        filled += take
    return out


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """A seeded grid of Brownian increments shared across schemes and
    refinements.  ``increments[k, j]`` is the increment of channel k over
    step j, distributed N(0, dt)."""

    t0: float
    dt: float
    n_steps: int
    d: int
    increments: np.ndarray
    master_seed: int
    stream_index: int

    @property
    def t_final(self) -> float:
        return self.t0 + self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def with_zeroed_channels(self, channels: Sequence[int]) -> "BrownianPath":
        """Copy of the path with the given (0-indexed) noise channels zeroed.
        Diagnostic helper for isolating the effect of single noise terms."""
        inc = self.increments.copy()
        for k in channels:
            inc[k, :] = 0.0
        inc.setflags(write=False)
        return replace(self, increments=inc)


def sample_brownian(
    d: int, n_steps: int, dt: float, master_seed: int, stream_index: int = 0,
    t0: float = 0.0,
) -> BrownianPath:
    """Draw a reproducible Brownian path on a uniform grid starting at ``t0``.

    ``d = 0`` yields an empty increment matrix (the deterministic case).
    """
    if dt <= 0.0:
        raise InvalidStep(f"dt must be positive, got {dt!r}")
    if n_steps < 0 or d < 0:
        raise InvalidStep("n_steps and d must be nonnegative")
    if d == 0 or n_steps == 0:
        inc = np.zeros((d, n_steps))
    else:
        g = _polar_gaussians(stream_seed(master_seed, stream_index), d * n_steps)
        inc = (g * math.sqrt(dt)).reshape(d, n_steps)
    inc.setflags(write=False)
    return BrownianPath(
        t0=float(t0), dt=float(dt), n_steps=n_steps, d=d,
        increments=inc, master_seed=master_seed, stream_index=stream_index,
    )


def coarsen(path: BrownianPath, factor: int) -> BrownianPath:
    """The same sample path on a grid coarsened by ``factor`` (consecutive
    increments summed in blocks)."""
    if factor < 1 or path.n_steps % factor != 0:
        raise IndivisibleFactor(f"factor {factor} does not divide {path.n_steps} steps")
    if factor == 1:
        return path
    n_new = path.n_steps // factor
    inc = path.increments.reshape(path.d, n_new, factor).sum(axis=2)
    inc.setflags(write=False)
    return replace(path, dt=path.dt * factor, n_steps=n_new, increments=inc)


# ---------------------------------------------------------------------------
# One-step maps (generic over the augmented state)
# ---------------------------------------------------------------------------

def _heun_step(drift: Callable, diffusion: Callable, y, dw, dt):
    a0 = drift(y)
    g0 = diffusion(y)
    y_pred = y + a0 * dt + g0 @ dw
    a1 = drift(y_pred)
    g1 = diffusion(y_pred)
    return y + 0.5 * dt * (a0 + a1) + 0.5 * ((g0 + g1) @ dw)


def _midpoint_step(drift, diffusion, y, dw, dt, tol=1e-13, max_iter=50):
    y_new = y + drift(y) * dt + diffusion(y) @ dw
    for _ in range(max_iter):
        mid = 0.5 * (y + y_new)
        y_next = y + drift(mid) * dt + diffusion(mid) @ dw
        err = float(np.max(np.abs(y_next - y_new)))
        y_new = y_next
        if err <= tol * max(1.0, float(np.max(np.abs(y_new)))):
            return y_new
    raise MidpointDivergence(
        f"midpoint fixed point did not reach {tol:g} within {max_iter} sweeps"
    )


_STEPPERS = {"heun": _heun_step, "midpoint": _midpoint_step}


def _stepper(scheme: str):
    try:
        return _STEPPERS[scheme]
    except KeyError:
        raise InvalidStep(f"unknown scheme {scheme!r}; expected one of {SCHEMES}") from None


# ---------------------------------------------------------------------------
# State-space integration
# ---------------------------------------------------------------------------

def drift_diffusion(sys: HamiltonianSystem, x) -> tuple:
    """Drift vector X_{H_0}(x) and the (dim x d) matrix of diffusion columns
    X_{H_k}(x)."""
    return sys.drift_diffusion(np.asarray(x, dtype=float))


def step(sys: HamiltonianSystem, x, dw, dt: float, scheme: str = "heun") -> np.ndarray:
    """Advance the state by one step of the chosen Stratonovich scheme."""
    x = np.asarray(x, dtype=float)
    dw = np.asarray(dw, dtype=float)
    return _stepper(scheme)(
        lambda y: sys.vector_field(0, y),
        lambda y: sys.diffusion_matrix(y),
        x, dw, float(dt),
    )


@dataclass(eq=False)
class Trajectory:
    """Uniformly spaced time series of states; ``states[i]`` at ``times[i]``."""

    times: np.ndarray
    states: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def integrate(sys: HamiltonianSystem, x0, path: BrownianPath, scheme: str = "heun") -> Trajectory:
    """Integrate the stochastic contact system over the grid of ``path``."""
    if path.d != sys.d:
        raise InvalidStep(f"path has {path.d} noise channels, system expects {sys.d}")
    stepper = _stepper(scheme)
    drift = lambda y: sys.vector_field(0, y)
    diffusion = lambda y: sys.diffusion_matrix(y)
    dim = sys.dim
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dim,):
        raise InvalidStep(f"initial state must have length {dim}")
    states = np.empty((path.n_steps + 1, dim))
    states[0] = x0
    x = states[0]
    dt = path.dt
    for j in range(path.n_steps):
        x = stepper(drift, diffusion, x, path.increments[:, j], dt)
        states[j + 1] = x
    if not np.isfinite(states).all():
        raise NumericalFailure("integrate", "trajectory contains non-finite values")
    return Trajectory(times=path.times(), states=states)


# ---------------------------------------------------------------------------
# Augmented integration: state + flow Jacobian + conformal factor
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AugmentedState:
    """State together with the flow Jacobian J = dx_t/dx_0 and log of the
    conformal factor (log_lambda = 0, J = I at the initial time)."""

    x: np.ndarray
    jacobian: np.ndarray
    log_lambda: float


@dataclass(eq=False)
class AugmentedTrajectory:
    times: np.ndarray
    states: np.ndarray       # (n+1, dim)
    jacobians: np.ndarray    # (n+1, dim, dim)
    log_lambda: np.ndarray   # (n+1,)

    def state(self, i: int) -> AugmentedState:
        return AugmentedState(self.states[i], self.jacobians[i], float(self.log_lambda[i]))

    @property
    def conformal_factor(self) -> np.ndarray:
        return np.exp(self.log_lambda)


def integrate_augmented(
    sys: HamiltonianSystem, x0, path: BrownianPath, scheme: str = "heun"
) -> AugmentedTrajectory:
    """Co-integrate state, tangent flow and conformal factor on one grid.

    The augmented drift/diffusion fields are, per Hamiltonian H_i,

        dx        = X_{H_i}
        dJ        = DX_{H_i}(x) J
        dlog_lam  = -R(H_i)(x)

    applied with the same increments and scheme as the state itself.
    """
    if path.d != sys.d:
        raise InvalidStep(f"path has {path.d} noise channels, system expects {sys.d}")
    dim = sys.dim
    d = sys.d
    n_aug = dim + dim * dim + 1

    def unpack(y):
        return y[:dim], y[dim:-1].reshape(dim, dim)

    def drift(y):
        x, jac = unpack(y)
        out = np.empty(n_aug)
        out[:dim] = sys.vector_field(0, x)
        out[dim:-1] = (sys.vector_field_jacobian(0, x) @ jac).ravel()
        out[-1] = -sys.reeb_rate(0, x)
        return out

    def diffusion(y):
        x, jac = unpack(y)
        out = np.empty((n_aug, d))
        for k in range(d):
            out[:dim, k] = sys.vector_field(k + 1, x)
            out[dim:-1, k] = (sys.vector_field_jacobian(k + 1, x) @ jac).ravel()
            out[-1, k] = -sys.reeb_rate(k + 1, x)
        return out

    stepper = _stepper(scheme)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dim,):
        raise InvalidStep(f"initial state must have length {dim}")
    y = np.concatenate([x0, np.eye(dim).ravel(), [0.0]])
    states = np.empty((path.n_steps + 1, dim))
    jacobians = np.empty((path.n_steps + 1, dim, dim))
    log_lambda = np.empty(path.n_steps + 1)
    states[0], jacobians[0], log_lambda[0] = x0, np.eye(dim), 0.0
    dt = path.dt
    for j in range(path.n_steps):
        y = stepper(drift, diffusion, y, path.increments[:, j], dt)
        states[j + 1] = y[:dim]
        jacobians[j + 1] = y[dim:-1].reshape(dim, dim)
        log_lambda[j + 1] = y[-1]
    if not (np.isfinite(states).all() and np.isfinite(jacobians).all()
            and np.isfinite(log_lambda).all()):
        raise NumericalFailure("integrate_augmented", "non-finite values in augmented flow")
    return AugmentedTrajectory(
        times=path.times(), states=states, jacobians=jacobians, log_lambda=log_lambda
    )


# ---------------------------------------------------------------------------
# Batched integration (one row per path; used by the ensemble runner)
# ---------------------------------------------------------------------------

def _heun_step_batch(sys, states, dw, dt):
    a0 = sys.drift_batch(states)
    g0 = sys.diffusion_batch(states)
    pred = states + a0 * dt + (g0 @ dw[:, :, None])[:, :, 0]
    a1 = sys.drift_batch(pred)
    g1 = sys.diffusion_batch(pred)
    return states + 0.5 * dt * (a0 + a1) + 0.5 * ((g0 + g1) @ dw[:, :, None])[:, :, 0]


def _midpoint_step_batch(sys, states, dw, dt, tol=1e-13, max_iter=50):
    a = sys.drift_batch(states)
    g = sys.diffusion_batch(states)
    new = states + a * dt + (g @ dw[:, :, None])[:, :, 0]
    for _ in range(max_iter):
        mid = 0.5 * (states + new)
        a = sys.drift_batch(mid)
        g = sys.diffusion_batch(mid)
        nxt = states + a * dt + (g @ dw[:, :, None])[:, :, 0]
        err = float(np.max(np.abs(nxt - new)))
        new = nxt
        if err <= tol * max(1.0, float(np.max(np.abs(new)))):
            return new
    raise MidpointDivergence("batched midpoint fixed point stalled")


def integrate_batch_final(
    sys: HamiltonianSystem,
    initial_states: np.ndarray,
    increments: np.ndarray,
    dt: float,
    scheme: str = "heun",
) -> np.ndarray:
    """Final states of many independent paths integrated in lockstep.

    ``initial_states`` is (B, dim) and ``increments`` is (B, d, n_steps).
    Only the final state is kept; intermediate states are discarded.
    """
    _stepper(scheme)  # validate name
    stepper = _heun_step_batch if scheme == "heun" else _midpoint_step_batch
    states = np.array(initial_states, dtype=float)
    n_steps = increments.shape[2]
    with np.errstate(all="ignore"):
        for j in range(n_steps):
            states = stepper(sys, states, increments[:, :, j], dt)
    if not np.isfinite(states).all():
        raise NumericalFailure("integrate_batch_final", "non-finite final states")
    return states
