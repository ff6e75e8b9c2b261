"""SGD whose learning rate is an exponential draw shaped by the loss geometry.

Each step draws a mini-batch, then a radius eta from the inhomogeneous
exponential law with rate ``beta * <grad(theta + r v), v>_+ + 1/epsilon``
along the current velocity, moves theta by ``eta * v`` (wrapped), and
reflects v about the mini-batch gradient at the new point. The constant part
of the rate is always ``1/epsilon``; the rate grows where the loss increases
along v, so uphill moves are cut short while downhill and flat stretches get
long strides.

Two execution paths produce the same law: a readable single-chain loop
(``poisson_sgd_step`` / ``run_poisson_sgd``) and a lock-step vectorized
ensemble (``run_poisson_sgd_ensemble``) that advances many independent
chains per numpy call for distribution-level experiments.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import TorusDomain
from .objectives import Objective, sample_minibatch
from .records import RunRecord
from .sampler import RayRate, RngStream, sample_ray_exponential, thin_first_arrivals, uniform_sphere

__all__ = [
    "reflect",
    "PoissonSgdConfig",
    "OptimizerState",
    "poisson_sgd_step",
    "run_poisson_sgd",
    "EnsembleResult",
    "run_poisson_sgd_ensemble",
]

ZERO_GRAD_TOL = 1e-12


def reflect(v, g, tol: float = ZERO_GRAD_TOL):
    """Householder reflection of ``v`` about the hyperplane normal to ``g``.

    Returns ``v - 2 (<g,v>/||g||^2) g``; norm-preserving and involutive.
    Where ``||g|| < tol`` the reflection plane is undefined and ``v`` is
    returned unchanged (exact critical points of the mini-batch loss).
    Accepts matching (..., d) stacks.
    """
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float)
    sq = np.einsum("...d,...d->...", g, g)
    defined = sq > tol * tol
    coef = np.where(
        defined, 2.0 * np.einsum("...d,...d->...", g, v) / np.where(defined, sq, 1.0), 0.0
    )
    return v - coef[..., None] * g


@dataclass(frozen=True)
class PoissonSgdConfig:
    """Hyperparameters of one run. ``c_p`` is always ``1/epsilon``.

    ``batch_size = 0`` means full batch. ``beta = 0`` is allowed: the rate is
    then the constant ``1/epsilon`` and the position law is driven by
    reflections only (useful as an exactly-solvable reference).
    """

    beta: float
    epsilon: float
    n_steps: int
    batch_size: int = 0
    initial_point: tuple[float, ...] | None = None
    initial_velocity: tuple[float, ...] | None = None
    seed: int = 0
    record_stride: int = 1
    record_risk: bool = True

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise ValueError("beta must be finite and >= 0")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError("epsilon must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0 (0 = full batch)")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        for name in ("initial_point", "initial_velocity"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(x) for x in value))

    @property
    def c_p(self) -> float:
        return 1.0 / self.epsilon

    def ceiling(self, grad_norm_bound: float) -> float:
        return self.beta * grad_norm_bound + self.c_p

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "epsilon": self.epsilon,
            "n_steps": self.n_steps,
            "batch_size": self.batch_size,
            "initial_point": None if self.initial_point is None else list(self.initial_point),
            "initial_velocity": None
            if self.initial_velocity is None
            else list(self.initial_velocity),
            "seed": self.seed,
            "record_stride": self.record_stride,
            "record_risk": self.record_risk,
        }


@dataclass
class OptimizerState:
    theta: np.ndarray
    velocity: np.ndarray
    k: int
    rng: RngStream
    max_norm_deviation: float = 0.0
    # per-step diagnostics, refreshed by the step functions
    last_eta: float | None = None
    last_batch: object = None
    last_grad_norm: float | None = None
    last_event: str | None = None
    last_p_reflect: float | None = None

    def renormalize(self) -> None:
        """Track worst pre-correction |norm - 1|, then snap back to the sphere."""
        norm = float(np.linalg.norm(self.velocity))
        self.max_norm_deviation = max(self.max_norm_deviation, abs(norm - 1.0))
        self.velocity = self.velocity / norm


def _initial_state(objective: Objective, initial_point, initial_velocity, seed: int) -> OptimizerState:
    domain = objective.domain
    rng = RngStream(int(seed))
    if initial_point is None:
        theta = domain.sample_uniform(rng.generator)
    else:
        theta = domain.wrap(np.asarray(initial_point, dtype=float))
    if initial_velocity is None:
        velocity = uniform_sphere(domain.dim, rng)
    else:
        velocity = np.asarray(initial_velocity, dtype=float)
        norm = np.linalg.norm(velocity)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("initial_velocity must be a unit vector")
        velocity = velocity / norm
    return OptimizerState(theta=theta, velocity=velocity, k=0, rng=rng)


def _resolve_batch_size(objective: Objective, batch_size: int) -> int:
    n = objective.n_samples
    m = n if batch_size == 0 else batch_size
    if not 1 <= m <= n:
        raise ValueError(f"batch_size must lie in [1, {n}], got {batch_size}")
    return m


def poisson_sgd_step(
    state: OptimizerState, objective: Objective, cfg: PoissonSgdConfig
) -> OptimizerState:
    """Advance one step in place; returns the state for chaining.

    Order matters: eta is drawn from the rate field based at the OLD point
    along the OLD velocity, the position moves, and the reflection gradient
    is evaluated at the NEW point with the SAME mini-batch.
    """
    domain = objective.domain
    m = _resolve_batch_size(objective, cfg.batch_size)
    batch = None if m == objective.n_samples else sample_minibatch(objective.n_samples, m, state.rng)
    grad_field = objective.grad_field(batch)

    base, direction = state.theta.copy(), state.velocity.copy()
    ray = RayRate(
        base_point=base,
        direction=direction,
        beta=cfg.beta,
        constant_floor=cfg.c_p,
        grad_field=grad_field,
        grad_norm_bound=objective.grad_norm_bound,
        wrap=domain.wrap,
        seam_radii=lambda length: domain.ray_seam_radii(base, direction, length),
    )
    eta = sample_ray_exponential(ray, state.rng)

    state.theta = domain.wrap(state.theta + eta * state.velocity)
    grad_new = np.asarray(grad_field(state.theta), dtype=float)
    objective.check_grad_norms(grad_new)
    state.velocity = reflect(state.velocity, grad_new)
    state.renormalize()
    state.k += 1
    state.last_eta = eta
    state.last_batch = batch
    state.last_grad_norm = float(np.linalg.norm(grad_new))
    return state


def run_poisson_sgd(objective: Objective, cfg: PoissonSgdConfig) -> RunRecord:
    """Run K sequential steps and return the stride-thinned record.

    The record keeps steps with ``k % record_stride == 0`` plus step K, so
    ``record_stride = 1`` retains every step and replaying the same config
    byte-reproduces the file.
    """
    started = time.perf_counter()
    state = _initial_state(objective, cfg.initial_point, cfg.initial_velocity, cfg.seed)
    record = RunRecord(kind="poisson_sgd", config=cfg.to_dict(), stride=cfg.record_stride)
    if cfg.n_steps == 0:
        record.append(0, state.theta, state.velocity, force=True)
    for k in range(1, cfg.n_steps + 1):
        poisson_sgd_step(state, objective, cfg)
        extras = {"grad_norm": state.last_grad_norm}
        if state.last_batch is not None:
            extras["batch"] = list(state.last_batch.indices)
        if cfg.record_risk and (k % cfg.record_stride == 0 or k == cfg.n_steps):
            extras["risk"] = float(objective.empirical_risk(state.theta))
        record.append(
            k,
            state.theta,
            state.velocity,
            eta=state.last_eta,
            force=(k == cfg.n_steps),
            **extras,
        )
    record.wall_time_s = time.perf_counter() - started
    record.max_norm_deviation = state.max_norm_deviation
    return record


# ----------------------------------------------------------------------
# lock-step ensembles
# ----------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Endpoint ensemble of N independent chains advanced in lock step."""

    thetas: np.ndarray
    velocities: np.ndarray
    n_steps: int
    max_norm_deviation: float
    mean_eta: float
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


def _sample_batches(gen: np.random.Generator, n_chains: int, n: int, m: int) -> np.ndarray:
    """(N, m) sorted uniform m-subsets of range(n), one per chain.

    The smallest m of n iid random keys per row form a uniform subset; sorting
    keeps index order canonical so full-batch and m = n paths agree exactly.
    """
    keys = gen.random((n_chains, n))
    idx = np.argpartition(keys, m - 1, axis=1)[:, :m] if m < n else np.tile(np.arange(n), (n_chains, 1))
    return np.sort(idx, axis=1)


def run_poisson_sgd_ensemble(
    objective: Objective,
    cfg: PoissonSgdConfig,
    n_chains: int,
    rng: RngStream | None = None,
    initial_points: np.ndarray | None = None,
    initial_velocities: np.ndarray | None = None,
    snapshot_steps: Sequence[int] = (),
) -> EnsembleResult:
    """Advance ``n_chains`` independent chains in lock step.

    Each chain carries its own mini-batch sequence and its own event draws;
    all randomness comes from one stream, consumed blockwise, which keeps the
    whole ensemble reproducible from a single seed. Initial points default to
    uniform on the domain, velocities to uniform on the sphere.
    """
    domain = objective.domain
    d = domain.dim
    N = int(n_chains)
    if N < 1:
        raise ValueError("n_chains must be >= 1")
    rng = RngStream(cfg.seed) if rng is None else rng
    gen = rng.generator

    if initial_points is None:
        thetas = domain.sample_uniform(gen, N)
    else:
        thetas = domain.wrap(np.array(initial_points, dtype=float))
        if thetas.shape != (N, d):
            raise ValueError(f"initial_points must have shape ({N}, {d})")
    if initial_velocities is None:
        vels = uniform_sphere(d, rng, N)
    else:
        vels = np.array(initial_velocities, dtype=float)
        if vels.shape != (N, d):
            raise ValueError(f"initial_velocities must have shape ({N}, {d})")
        norms = np.linalg.norm(vels, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("initial_velocities must be unit vectors")
        vels = vels / norms[:, None]

    m = _resolve_batch_size(objective, cfg.batch_size)
    per_chain_batches = m < objective.n_samples
    full_field = objective.grad_field(None)

    floor = cfg.c_p
    ceiling = cfg.ceiling(objective.grad_norm_bound)
    wanted = {int(s) for s in snapshot_steps}
    snapshots: dict[int, np.ndarray] = {}
    if 0 in wanted:
        snapshots[0] = thetas.copy()

    max_dev = 0.0
    eta_sum = 0.0
    for k in range(1, cfg.n_steps + 1):
        if per_chain_batches:
            idx = _sample_batches(gen, N, objective.n_samples, m)
            fld = objective.grad_field(idx)
        else:
            fld = full_field

        if cfg.beta == 0.0:
            # rate is exactly the constant floor: draw directly
            etas = gen.exponential(1.0 / floor, size=N)
        else:

            def rate_rows(radii: np.ndarray, rows: np.ndarray) -> np.ndarray:
                pts = thetas[rows, None, :] + radii[..., None] * vels[rows, None, :]
                grads = fld(domain.wrap(pts), rows=rows)
                proj = np.einsum("kbd,kd->kb", grads, vels[rows])
                return cfg.beta * np.maximum(proj, 0.0) + floor

            etas = thin_first_arrivals(rate_rows, N, floor, ceiling, rng)
        eta_sum += float(etas.sum())

        thetas = domain.wrap(thetas + etas[:, None] * vels)
        grads = np.asarray(fld(thetas, rows=None), dtype=float)
        vels = reflect(vels, grads)
        norms = np.linalg.norm(vels, axis=1)
        max_dev = max(max_dev, float(np.max(np.abs(norms - 1.0))))
        vels = vels / norms[:, None]
        if k in wanted:
            snapshots[k] = thetas.copy()

    return EnsembleResult(
        thetas=thetas,
        velocities=vels,
        n_steps=cfg.n_steps,
        max_norm_deviation=max_dev,
        mean_eta=eta_sum / max(1, cfg.n_steps * N),
        snapshots=snapshots,
    )
