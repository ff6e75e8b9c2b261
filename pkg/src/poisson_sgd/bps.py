"""Discrete bouncy particle sampler: straight-line moves at random event
radii, then a stochastic choice between gradient reflection and uniform
velocity refreshment.

The event rate along the ray is ``beta * <grad L(theta + r v), v>_+ +
Lambda_ref + C_B`` with the full-batch gradient. After the move, reflection
is chosen with probability ``(beta * <grad L, v>_+ + C_B) / (beta *
<grad L, v>_+ + Lambda_ref + C_B)`` evaluated at the new point; otherwise the
velocity refreshes uniformly on the sphere. In coupling mode the constants
satisfy ``Lambda_ref + C_B = beta * M + 1/epsilon``, matching the optimizer's
constant floor, which is what makes the two chains directly comparable.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import sliced_wasserstein1
from .objectives import Objective
from .optimizer import EnsembleResult, OptimizerState, PoissonSgdConfig, _initial_state, reflect, run_poisson_sgd_ensemble
from .records import RunRecord
from .sampler import RayRate, RngStream, sample_ray_exponential, thin_first_arrivals, uniform_sphere

__all__ = [
    "BpsConfig",
    "bps_step",
    "run_bps",
    "run_bps_ensemble",
    "CoupledCompareResult",
    "coupled_compare",
]


@dataclass(frozen=True)
class BpsConfig:
    """Sampler constants. ``lambda_ref`` must be strictly positive so the
    chain refreshes with positive probability; ``c_b`` may be zero.

    ``epsilon`` is optional bookkeeping: when set, the config asserts the
    coupling constraint ``lambda_ref + c_b = beta * grad_norm_bound +
    1/epsilon`` via :meth:`validate_coupling` (construct with
    :meth:`coupled` to get it by definition).
    """

    beta: float
    lambda_ref: float
    c_b: float
    n_steps: int
    epsilon: float | None = None
    initial_point: tuple[float, ...] | None = None
    initial_velocity: tuple[float, ...] | None = None
    seed: int = 0
    record_stride: int = 1

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise ValueError("beta must be finite and >= 0")
        if not (math.isfinite(self.lambda_ref) and self.lambda_ref > 0.0):
            raise ValueError("lambda_ref must be strictly positive")
        if not (math.isfinite(self.c_b) and self.c_b >= 0.0):
            raise ValueError("c_b must be >= 0")
        if self.epsilon is not None and not (
            math.isfinite(self.epsilon) and self.epsilon > 0.0
        ):
            raise ValueError("epsilon must be positive when given")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        for name in ("initial_point", "initial_velocity"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(x) for x in value))

    @classmethod
    def coupled(
        cls,
        beta: float,
        epsilon: float,
        grad_norm_bound: float,
        c_b: float = 0.0,
        **kwargs,
    ) -> "BpsConfig":
        """Constants matched to the optimizer: lambda_ref + c_b = beta*M + 1/eps.

        The split is a free knob; the default ``c_b = 0`` maximizes
        refreshment and gives the classical reflect probability
        ``lambda / (lambda + lambda_ref)``.
        """
        total = beta * grad_norm_bound + 1.0 / epsilon
        lambda_ref = total - c_b
        if lambda_ref <= 0.0:
            raise ValueError(
                f"c_b={c_b} leaves no room for a positive lambda_ref "
                f"(coupled total is {total})"
            )
        return cls(
            beta=beta, lambda_ref=lambda_ref, c_b=c_b, epsilon=epsilon, **kwargs
        )

    @property
    def floor(self) -> float:
        """Constant part of the event rate."""
        return self.lambda_ref + self.c_b

    def ceiling(self, grad_norm_bound: float) -> float:
        return self.beta * grad_norm_bound + self.floor

    def validate_coupling(self, grad_norm_bound: float) -> None:
        if self.epsilon is None:
            raise ValueError("config has no epsilon: not in coupling mode")
        total = self.beta * grad_norm_bound + 1.0 / self.epsilon
        if abs(self.floor - total) > 1e-9 * max(1.0, total):
            raise ValueError(
                f"coupling violated: lambda_ref + c_b = {self.floor} but "
                f"beta*M + 1/epsilon = {total}"
            )

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "lambda_ref": self.lambda_ref,
            "c_b": self.c_b,
            "epsilon": self.epsilon,
            "n_steps": self.n_steps,
            "initial_point": None if self.initial_point is None else list(self.initial_point),
            "initial_velocity": None
            if self.initial_velocity is None
            else list(self.initial_velocity),
            "seed": self.seed,
            "record_stride": self.record_stride,
        }


def bps_step(state: OptimizerState, objective: Objective, cfg: BpsConfig) -> OptimizerState:
    """One event: move by the drawn radius, then reflect or refresh."""
    domain = objective.domain
    grad_field = objective.grad_field(None)

    base, direction = state.theta.copy(), state.velocity.copy()
    ray = RayRate(
        base_point=base,
        direction=direction,
        beta=cfg.beta,
        constant_floor=cfg.floor,
        grad_field=grad_field,
        grad_norm_bound=objective.grad_norm_bound,
        wrap=domain.wrap,
        seam_radii=lambda length: domain.ray_seam_radii(base, direction, length),
    )
    eta = sample_ray_exponential(ray, state.rng)

    state.theta = domain.wrap(state.theta + eta * state.velocity)
    grad_new = np.asarray(grad_field(state.theta), dtype=float)
    objective.check_grad_norms(grad_new)
    lam = cfg.beta * max(float(grad_new @ state.velocity), 0.0)
    p_reflect = (lam + cfg.c_b) / (lam + cfg.lambda_ref + cfg.c_b)
    if state.rng.generator.random() < p_reflect:
        state.velocity = reflect(state.velocity, grad_new)
        state.last_event = "reflect"
    else:
        state.velocity = uniform_sphere(domain.dim, state.rng)
        state.last_event = "refresh"
    state.renormalize()
    state.k += 1
    state.last_eta = eta
    state.last_grad_norm = float(np.linalg.norm(grad_new))
    state.last_p_reflect = p_reflect
    return state


def run_bps(objective: Objective, cfg: BpsConfig) -> RunRecord:
    """Run K events and return the stride-thinned record with event tags."""
    started = time.perf_counter()
    state = _initial_state(objective, cfg.initial_point, cfg.initial_velocity, cfg.seed)
    record = RunRecord(kind="bps", config=cfg.to_dict(), stride=cfg.record_stride)
    if cfg.n_steps == 0:
        record.append(0, state.theta, state.velocity, force=True)
    for k in range(1, cfg.n_steps + 1):
        bps_step(state, objective, cfg)
        record.append(
            k,
            state.theta,
            state.velocity,
            eta=state.last_eta,
            force=(k == cfg.n_steps),
            event=state.last_event,
            p_reflect=state.last_p_reflect,
            grad_norm=state.last_grad_norm,
        )
    record.wall_time_s = time.perf_counter() - started
    record.max_norm_deviation = state.max_norm_deviation
    return record


def run_bps_ensemble(
    objective: Objective,
    cfg: BpsConfig,
    n_chains: int,
    rng: RngStream | None = None,
    initial_points: np.ndarray | None = None,
    initial_velocities: np.ndarray | None = None,
    snapshot_steps: Sequence[int] = (),
) -> EnsembleResult:
    """Lock-step vectorized ensemble of independent sampler chains.

    Mirrors ``run_poisson_sgd_ensemble``; the per-step extras track the
    realized refresh fraction, which stationarity diagnostics use.
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

    field = objective.grad_field(None)
    floor = cfg.floor
    ceiling = cfg.ceiling(objective.grad_norm_bound)
    wanted = {int(s) for s in snapshot_steps}
    snapshots: dict[int, np.ndarray] = {}
    if 0 in wanted:
        snapshots[0] = thetas.copy()

    max_dev = 0.0
    eta_sum = 0.0
    n_refresh = 0
    for k in range(1, cfg.n_steps + 1):
        if cfg.beta == 0.0:
            etas = gen.exponential(1.0 / floor, size=N)
        else:

            def rate_rows(radii: np.ndarray, rows: np.ndarray) -> np.ndarray:
                pts = thetas[rows, None, :] + radii[..., None] * vels[rows, None, :]
                grads = field(domain.wrap(pts), rows=rows)
                proj = np.einsum("kbd,kd->kb", grads, vels[rows])
                return cfg.beta * np.maximum(proj, 0.0) + floor

            etas = thin_first_arrivals(rate_rows, N, floor, ceiling, rng)
        eta_sum += float(etas.sum())

        thetas = domain.wrap(thetas + etas[:, None] * vels)
        grads = np.asarray(field(thetas, rows=None), dtype=float)
        lam = cfg.beta * np.maximum(np.einsum("nd,nd->n", grads, vels), 0.0)
        p_reflect = (lam + cfg.c_b) / (lam + cfg.lambda_ref + cfg.c_b)
        do_reflect = gen.random(N) < p_reflect
        fresh = uniform_sphere(d, rng, N)
        vels = np.where(do_reflect[:, None], reflect(vels, grads), fresh)
        n_refresh += int(N - do_reflect.sum())

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
        extras={"refresh_fraction": n_refresh / max(1, cfg.n_steps * N)},
    )


@dataclass(frozen=True)
class CoupledCompareResult:
    sliced_w1: float
    optimizer_thetas: np.ndarray
    sampler_thetas: np.ndarray


def coupled_compare(
    objective: Objective,
    beta: float,
    epsilon: float,
    n_steps: int,
    trials: int,
    seed: int = 0,
    c_b: float = 0.0,
    n_proj: int = 128,
) -> CoupledCompareResult:
    """Distance between the optimizer's and the sampler's step-K position laws.

    Both chains run full batch with matched constants (optimizer floor
    ``1/epsilon``; sampler floor ``beta*M + 1/epsilon``) from identical
    initial positions and velocities, one pair per trial; returns the sliced
    Wasserstein distance between the two endpoint clouds.
    """
    rng = RngStream(int(seed), spawn_key=(3,))
    domain = objective.domain
    inits = domain.sample_uniform(rng.generator, trials)
    init_vels = uniform_sphere(domain.dim, rng, trials)

    opt_cfg = PoissonSgdConfig(beta=beta, epsilon=epsilon, n_steps=n_steps, seed=seed)
    opt = run_poisson_sgd_ensemble(
        objective,
        opt_cfg,
        trials,
        rng=rng.child(0),
        initial_points=inits,
        initial_velocities=init_vels,
    )
    bps_cfg = BpsConfig.coupled(
        beta=beta,
        epsilon=epsilon,
        grad_norm_bound=objective.grad_norm_bound,
        c_b=c_b,
        n_steps=n_steps,
        seed=seed,
    )
    smp = run_bps_ensemble(
        objective,
        bps_cfg,
        trials,
        rng=rng.child(1),
        initial_points=inits,
        initial_velocities=init_vels,
    )
    distance = sliced_wasserstein1(opt.thetas, smp.thetas, n_proj=n_proj, rng=rng.child(2))
    return CoupledCompareResult(
        sliced_w1=distance, optimizer_thetas=opt.thetas, sampler_thetas=smp.thetas
    )
