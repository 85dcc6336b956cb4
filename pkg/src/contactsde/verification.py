"""Structure-preservation certificates, convergence studies, and Monte Carlo
statistics against closed-form oracles.

The central check: along an augmented trajectory the covector

    r(t) = eta(x_t) . J_t - exp(log_lambda_t) . eta(x_0)

vanishes identically for the exact flow (the flow rescales the contact form
by the conformal factor).  For a consistent one-step scheme the defect decays
with the step size; the convergence helpers measure that decay on a single
Brownian sample shared across refinements via coarsening, never on
re-sampled noise.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr
from .errors import IndivisibleFactor, InvalidStep, MissingTangentData
from .flow import (
    AugmentedTrajectory,
    BrownianPath,
    coarsen,
    integrate,
    integrate_augmented,
    integrate_batch_final,
    _polar_gaussians,
    stream_seed,
)
from .geometry import HamiltonianSystem

__all__ = [
    "ContactDefectReport", "ConvergenceReport", "EnsembleStats",
    "contact_defect", "conformal_factor_check", "finite_difference_jacobian",
    "convergence_study", "defect_convergence", "monte_carlo",
]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ContactDefectReport:
    """Pullback residual of the contact form along one trajectory."""

    times: np.ndarray
    residuals: np.ndarray   # (n+1, dim) covector rows
    sup_norms: np.ndarray   # (n+1,)
    max_sup: float

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "residuals": self.residuals.tolist(),
            "sup_norms": self.sup_norms.tolist(),
            "max_sup": self.max_sup,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContactDefectReport":
        return cls(
            times=np.asarray(data["times"], dtype=float),
            residuals=np.asarray(data["residuals"], dtype=float),
            sup_norms=np.asarray(data["sup_norms"], dtype=float),
            max_sup=float(data["max_sup"]),
        )

    def to_csv(self, fileobj) -> None:
        """Write columns t, r_1..r_dim, sup with 17 significant digits."""
        dim = self.residuals.shape[1]
        header = "t," + ",".join(f"r_{i+1}" for i in range(dim)) + ",sup\n"
        fileobj.write(header)
        for i, t in enumerate(self.times):
            row = [f"{t:.17g}"]
            row += [f"{v:.17g}" for v in self.residuals[i]]
            row.append(f"{self.sup_norms[i]:.17g}")
            fileobj.write(",".join(row) + "\n")


@dataclass(eq=False)
class ConvergenceReport:
    """Errors over a nested family of step sizes (descending, factor 2)."""

    label: str
    dts: list
    errors: list
    orders: list  # log2(errors[i] / errors[i+1]) per adjacent pair

    def to_dict(self) -> dict:
        return {"label": self.label, "dts": self.dts, "errors": self.errors, "orders": self.orders}

    @classmethod
    def from_dict(cls, data: dict) -> "ConvergenceReport":
        return cls(
            label=data["label"],
            dts=[float(v) for v in data["dts"]],
            errors=[float(v) for v in data["errors"]],
            orders=[float(v) for v in data["orders"]],
        )


@dataclass(eq=False)
class EnsembleStats:
    """Sample statistics of an observable over independent noise streams."""

    n_paths: int
    observable: str
    mean: float
    variance: float
    stderr: float

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "observable": self.observable,
            "mean": self.mean,
            "variance": self.variance,
            "stderr": self.stderr,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleStats":
        return cls(
            n_paths=int(data["n_paths"]),
            observable=data["observable"],
            mean=float(data["mean"]),
            variance=float(data["variance"]),
            stderr=float(data["stderr"]),
        )


def _fitted_orders(errors: Sequence[float]) -> list:
    orders = []
    for coarse, fine in zip(errors[:-1], errors[1:]):
        if coarse > 0.0 and fine > 0.0:
            orders.append(math.log2(coarse / fine))
        else:
            orders.append(math.inf if coarse > 0.0 else 0.0)
    return orders


# ---------------------------------------------------------------------------
# Structure checks
# ---------------------------------------------------------------------------

def contact_defect(traj: AugmentedTrajectory, chart) -> ContactDefectReport:
    """Residual eta(x_t) J_t - lambda_t eta(x_0) per time, with sup norms.

    At the initial time the residual is exactly zero (J = I, lambda = 1).
    """
    if getattr(traj, "jacobians", None) is None or getattr(traj, "log_lambda", None) is None:
        raise MissingTangentData("trajectory carries no tangent flow / conformal factor")
    eta0 = chart.eta(traj.states[0])
    n = len(traj.times)
    residuals = np.empty((n, chart.dim))
    for i in range(n):
        eta_t = chart.eta(traj.states[i])
        residuals[i] = eta_t @ traj.jacobians[i] - math.exp(traj.log_lambda[i]) * eta0
    sups = np.max(np.abs(residuals), axis=1)
    return ContactDefectReport(
        times=traj.times.copy(),
        residuals=residuals,
        sup_norms=sups,
        max_sup=float(sups.max()),
    )


def conformal_factor_check(traj: AugmentedTrajectory, closed_form) -> float:
    """Max over the grid of |exp(log_lambda_t) - closed_form(t)|.

    ``closed_form`` is an expression in the single variable ``t``.
    """
    cf = expr.parse(closed_form, ["t"]) if isinstance(closed_form, str) else closed_form
    dev = 0.0
    for t, ll in zip(traj.times, traj.log_lambda):
        dev = max(dev, abs(math.exp(ll) - expr.evaluate(cf, {"t": float(t)})))
    return dev


def finite_difference_jacobian(
    sys: HamiltonianSystem, x0, path: BrownianPath, scheme: str = "heun", h: float = 1e-5
) -> np.ndarray:
    """Central-difference Jacobian of the time-T flow map, re-integrating
    with the same path.  Independent oracle for the co-integrated tangent
    flow."""
    if h <= 0.0:
        raise InvalidStep("h must be positive")
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    out = np.empty((dim, dim))
    for c in range(dim):
        plus = x0.copy()
        minus = x0.copy()
        plus[c] += h
        minus[c] -= h
        final_plus = integrate(sys, plus, path, scheme).final_state
        final_minus = integrate(sys, minus, path, scheme).final_state
        out[:, c] = (final_plus - final_minus) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# Convergence studies (same Brownian sample across levels)
# ---------------------------------------------------------------------------

def _check_levels(path: BrownianPath, levels: int) -> None:
    if levels < 3:
        raise InvalidStep("levels must be >= 3")
    if path.n_steps % (2 ** (levels - 1)) != 0:
        raise IndivisibleFactor(
            f"finest grid of {path.n_steps} steps is not divisible by 2^{levels - 1}"
        )


def convergence_study(
    sys: HamiltonianSystem, x0, finest_path: BrownianPath, scheme: str = "heun", levels: int = 3
) -> ConvergenceReport:
    """Strong self-convergence: final-state error of each coarsened grid
    against the finest grid on the same Brownian sample."""
    _check_levels(finest_path, levels)
    reference = integrate(sys, x0, finest_path, scheme).final_state
    dts = []
    errors = []
    for j in range(levels - 1, 0, -1):
        coarse = coarsen(finest_path, 2 ** j)
        final = integrate(sys, x0, coarse, scheme).final_state
        dts.append(coarse.dt)
        errors.append(float(np.linalg.norm(final - reference)))
    return ConvergenceReport(
        label="strong_error_vs_finest", dts=dts, errors=errors, orders=_fitted_orders(errors)
    )


def defect_convergence(
    sys: HamiltonianSystem, x0, finest_path: BrownianPath, scheme: str = "heun", levels: int = 3
) -> ConvergenceReport:
    """Max contact-defect sup norm per step size, finest level included."""
    _check_levels(finest_path, levels)
    dts = []
    errors = []
    for j in range(levels - 1, -1, -1):
        coarse = coarsen(finest_path, 2 ** j)
        traj = integrate_augmented(sys, x0, coarse, scheme)
        dts.append(coarse.dt)
        errors.append(contact_defect(traj, sys.chart).max_sup)
    return ConvergenceReport(
        label="contact_defect_sup", dts=dts, errors=errors, orders=_fitted_orders(errors)
    )


# ---------------------------------------------------------------------------
# Monte Carlo ensembles
# ---------------------------------------------------------------------------

def _mc_batch(args) -> np.ndarray:
    (sys, x0, dt, n_steps, master_seed, start, count, scheme,
     observable_source, zero_channels) = args
    d = sys.d
    increments = np.empty((count, d, n_steps))
    sqrt_dt = math.sqrt(dt)
    for i in range(count):
        g = _polar_gaussians(stream_seed(master_seed, start + i), d * n_steps)
        increments[i] = (g * sqrt_dt).reshape(d, n_steps)
    for k in zero_channels:
        increments[:, k, :] = 0.0
    initial = np.tile(np.asarray(x0, dtype=float), (count, 1))
    finals = integrate_batch_final(sys, initial, increments, dt, scheme)
    tape = expr.compile_tape(sys.prepare(observable_source), sys.chart.names)
    values = tape([finals[:, i] for i in range(sys.dim)])
    return np.broadcast_to(np.asarray(values, dtype=float), (count,)).copy()


def monte_carlo(
    sys: HamiltonianSystem,
    x0,
    T: float,
    dt: float,
    n_paths: int,
    master_seed: int,
    observable,
    t0: float = 0.0,
    scheme: str = "heun",
    workers: int = 1,
    batch_size: int = 1024,
    zero_channels: Sequence[int] = (),
) -> EnsembleStats:
    """Mean/variance/standard error of ``observable(x_T)`` over paths driven
    by independent noise streams 0..n_paths-1.

    Paths are processed in fixed-size batches ordered by stream index, so the
    result is bit-identical for any worker count.  ``zero_channels`` is a
    diagnostic knob that switches off individual noise channels (0-indexed).
    """
    if n_paths < 2:
        raise InvalidStep("n_paths must be >= 2")
    span = T - t0
    if span <= 0.0:
        raise InvalidStep("T must exceed t0")
    n_steps = round(span / dt)
    if n_steps < 1 or abs(n_steps * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise InvalidStep(f"dt {dt!r} does not divide T - t0 = {span!r}")
    observable_source = observable if isinstance(observable, str) else expr.to_source(observable)
    sys.prepare(observable_source)  # validate early

    batches = []
    start = 0
    while start < n_paths:
        count = min(batch_size, n_paths - start)
        batches.append(
            (sys, x0, float(dt), n_steps, master_seed, start, count, scheme,
             observable_source, tuple(zero_channels))
        )
        start += count

    if workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_mc_batch, batches))
    else:
        parts = [_mc_batch(b) for b in batches]
    values = np.concatenate(parts)

    mean = float(np.mean(values))
    variance = float(np.var(values, ddof=1))
    return EnsembleStats(
        n_paths=n_paths,
        observable=observable_source,
        mean=mean,
        variance=variance,
        stderr=math.sqrt(variance / n_paths),
    )
