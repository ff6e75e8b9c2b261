"""The closed-form stationary position density of both chains, its sphere
moment constants, deterministic grid normalization, and an independent
rejection-sampling oracle.

The unnormalized density is

    u(theta) = (beta*M + 1/epsilon + E[(cos phi)_+] * beta * ||grad L(theta)||)
               * exp(-beta * L(theta))

where E[(cos phi)_+] is the mean positive part of one coordinate of a uniform
unit vector, i.e. half the mean absolute value ``sphere_cos_abs_mean(d)``.
The floor ``beta*M + 1/epsilon`` keeps u strictly positive everywhere, which
both the rejection sampler and the total-variation comparisons rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .objectives import Objective
from .sampler import as_generator

__all__ = [
    "sphere_cos_abs_mean",
    "sphere_cos_plus_mean",
    "gamma_ratio_fences",
    "cos_plus_bracket",
    "estimate_cos_plus_moment",
    "GridDensity",
    "EnvelopeError",
    "StationaryDensity",
    "grid_mean_risk",
    "DEFAULT_RESOLUTIONS",
]

DEFAULT_RESOLUTIONS = {1: 4096, 2: 256, 3: 64}


def sphere_cos_abs_mean(d: int) -> float:
    """E|v_1| for v uniform on S^{d-1}: Gamma(d/2) / (sqrt(pi) Gamma((d+1)/2)).

    Evaluated through log-gamma so large d stays stable. Closed forms:
    1 (d=1), 2/pi (d=2), 1/2 (d=3).
    """
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    return math.exp(math.lgamma(d / 2.0) - math.lgamma((d + 1) / 2.0)) / math.sqrt(math.pi)


def sphere_cos_plus_mean(d: int) -> float:
    """E[(v_1)_+] = E|v_1| / 2 by symmetry; the density's gradient coefficient."""
    return 0.5 * sphere_cos_abs_mean(d)


def gamma_ratio_fences(d: int) -> tuple[float, float]:
    """Closed-form fences for Gamma(d/2)/Gamma((d+1)/2):
    1/sqrt(d/2) <= ratio <= 1/sqrt((d-1)/2) (upper fence infinite at d=1)."""
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    lower = 1.0 / math.sqrt(d / 2.0)
    upper = math.inf if d == 1 else 1.0 / math.sqrt((d - 1) / 2.0)
    return lower, upper


def cos_plus_bracket(d: int) -> tuple[float, float]:
    """Bracket [1/sqrt(2 pi d), 1/sqrt(2 pi (d-1))] containing E[(v_1)_+], d >= 2."""
    if int(d) != d or d < 2:
        raise ValueError(f"d must be an integer >= 2, got {d!r}")
    return 1.0 / math.sqrt(2.0 * math.pi * d), 1.0 / math.sqrt(2.0 * math.pi * (d - 1))


def estimate_cos_plus_moment(d: int, n: int, rng) -> tuple[float, float]:
    """Monte-Carlo (mean, standard error) of (v_1)_+ over n uniform sphere draws.

    Draws standard normals and normalizes; only the first coordinate's
    positive part is kept, so memory stays O(n) even for large d.
    """
    gen = as_generator(rng)
    n = int(n)
    if n < 2:
        raise ValueError("n must be >= 2")
    first = np.empty(n)
    block = 1_000_000 // max(1, d)
    done = 0
    while done < n:
        take = min(block, n - done)
        x = gen.standard_normal((take, int(d)))
        first[done : done + take] = x[:, 0] / np.linalg.norm(x, axis=1)
        done += take
    plus = np.maximum(first, 0.0)
    return float(plus.mean()), float(plus.std(ddof=1) / math.sqrt(n))


class EnvelopeError(RuntimeError):
    """The rejection envelope was exceeded: the grid max was not a sup."""


@dataclass
class GridDensity:
    """Probability masses on a rectangular midpoint grid.

    ``edges`` holds one edge array per dimension; ``masses`` sums to 1 and has
    shape ``tuple(len(e) - 1 for e in edges)``.
    """

    edges: list[np.ndarray]
    masses: np.ndarray
    z: float | None = None  # normalization of the source density, if known

    def __post_init__(self) -> None:
        shape = tuple(len(e) - 1 for e in self.edges)
        if self.masses.shape != shape:
            raise ValueError(f"masses shape {self.masses.shape} != grid shape {shape}")
        total = float(self.masses.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"masses must sum to 1 within 1e-6, got {total}")
        if np.any(self.masses < 0.0):
            raise ValueError("masses must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.edges)

    def midpoints(self, axis: int) -> np.ndarray:
        e = self.edges[axis]
        return 0.5 * (e[:-1] + e[1:])

    def marginal(self, axis: int) -> "GridDensity":
        other = tuple(i for i in range(self.dim) if i != axis)
        return GridDensity(edges=[self.edges[axis]], masses=self.masses.sum(axis=other))

    def coarsen(self, factor: int) -> "GridDensity":
        """Merge ``factor`` adjacent bins per dimension (mass-preserving)."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("factor must be >= 1")
        for e in self.edges:
            if (len(e) - 1) % factor:
                raise ValueError(f"bin count {len(e) - 1} not divisible by {factor}")
        masses = self.masses
        for axis in range(self.dim):
            shape = masses.shape[:axis] + (-1, factor) + masses.shape[axis + 1 :]
            masses = masses.reshape(shape).sum(axis=axis + 1)
        edges = [e[::factor] for e in self.edges]
        return GridDensity(edges=edges, masses=masses, z=self.z)

    def cdf_1d(self):
        """Piecewise-linear CDF callable (1-D grids only)."""
        if self.dim != 1:
            raise ValueError("cdf_1d is defined for 1-D grids")
        edges = self.edges[0]
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        cum[-1] = 1.0

        def cdf(x):
            return np.interp(np.asarray(x, dtype=float), edges, cum)

        return cdf

    def to_csv(self, path) -> None:
        mids = np.meshgrid(*(self.midpoints(i) for i in range(self.dim)), indexing="ij")
        cols = [m.ravel() for m in mids] + [self.masses.ravel()]
        header = ",".join([f"coord_{i}" for i in range(self.dim)] + ["mass"])
        rows = [header]
        rows += [",".join(repr(float(v)) for v in row) for row in zip(*cols)]
        Path(path).write_text("\n".join(rows) + "\n")


@dataclass
class StationaryDensity:
    """Closed-form stationary density of the coupled chains on an objective.

    ``beta >= 0`` and ``epsilon > 0``; at ``beta = 0`` the density is exactly
    uniform. The gradient-norm bound entering the floor is the objective's
    declared bound, the same constant the samplers use for thinning, so the
    density and the dynamics share their constants.
    """

    objective: Objective
    beta: float
    epsilon: float
    _grid_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise ValueError("beta must be finite and >= 0")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError("epsilon must be positive")

    @property
    def floor(self) -> float:
        return self.beta * self.objective.grad_norm_bound + 1.0 / self.epsilon

    @property
    def grad_coefficient(self) -> float:
        return sphere_cos_plus_mean(self.objective.domain.dim) * self.beta

    def unnormalized(self, theta) -> np.ndarray:
        """u(theta); strictly positive, shaped like theta without its last axis."""
        theta = np.asarray(theta, dtype=float)
        loss = np.asarray(self.objective.empirical_risk(theta), dtype=float)
        grad_norm = np.linalg.norm(self.objective.grad(theta), axis=-1)
        return (self.floor + self.grad_coefficient * grad_norm) * np.exp(-self.beta * loss)

    def _midpoint_grid(self, resolution: int):
        domain = self.objective.domain
        edges = [np.linspace(0.0, s, resolution + 1) for s in domain.sides]
        mids = [0.5 * (e[:-1] + e[1:]) for e in edges]
        points = np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)
        values = self.unnormalized(points)
        cell = float(np.prod(domain.sides / resolution))
        return edges, values, cell

    def grid(self, resolution: int | None = None) -> GridDensity:
        """Midpoint-rule normalization; raises if 2x refinement moves Z > 1e-4.

        The convergence check reuses the cache, so asking for the same
        resolution twice costs one evaluation.
        """
        domain = self.objective.domain
        if domain.dim > 3:
            raise ValueError("grid normalization supports dim <= 3")
        if resolution is None:
            resolution = DEFAULT_RESOLUTIONS[domain.dim]
        if resolution < 64:
            raise ValueError("resolution must be >= 64 per dimension")
        key = int(resolution)
        if key in self._grid_cache:
            return self._grid_cache[key]

        edges, values, cell = self._midpoint_grid(key)
        if not np.all(values > 0.0):
            raise ValueError("density must be strictly positive on the grid")
        z = float(values.sum() * cell)
        _, fine_values, fine_cell = self._midpoint_grid(2 * key)
        z_fine = float(fine_values.sum() * fine_cell)
        if abs(z_fine - z) > 1e-4 * z:
            raise RuntimeError(
                f"grid normalization not converged at resolution {key}: "
                f"Z = {z:.10g} vs {z_fine:.10g} at 2x"
            )
        masses = values * cell / z
        masses /= masses.sum()  # absorb the last-ulp rounding so masses sum to 1
        grid = GridDensity(edges=edges, masses=masses, z=z)
        self._grid_cache[key] = grid
        self._max_on_grid = float(max(values.max(), fine_values.max()))
        return grid

    def sample(self, n: int, rng, resolution: int | None = None) -> np.ndarray:
        """n exact draws by rejection from the uniform proposal.

        The envelope is 1.1x the density's max over the normalization grid;
        any proposal where u exceeds the envelope aborts the run rather than
        silently biasing the output.
        """
        gen = as_generator(rng)
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        self.grid(resolution)  # ensures _max_on_grid
        envelope = 1.1 * self._max_on_grid
        domain = self.objective.domain
        out = np.empty((n, domain.dim))
        got = 0
        block = max(4096, 2 * n)
        while got < n:
            props = domain.sample_uniform(gen, block)
            u = self.unnormalized(props)
            if np.any(u > envelope):
                raise EnvelopeError(
                    f"density value {float(u.max()):.6g} exceeds envelope "
                    f"{envelope:.6g}; grid max was not a supremum"
                )
            keep = props[gen.random(block) * envelope < u]
            take = min(keep.shape[0], n - got)
            out[got : got + take] = keep[:take]
            got += take
        return out

    def acceptance_rate(self, resolution: int | None = None) -> float:
        """Expected rejection-sampling acceptance: Z / (envelope * volume)."""
        grid = self.grid(resolution)
        envelope = 1.1 * self._max_on_grid
        return float(grid.z / (envelope * self.objective.domain.volume()))


def grid_mean_risk(objective: Objective, resolution: int = 512) -> float:
    """Mean empirical risk under the uniform law, by midpoint quadrature."""
    domain = objective.domain
    if domain.dim > 3:
        raise ValueError("grid quadrature supports dim <= 3")
    edges = [np.linspace(0.0, s, resolution + 1) for s in domain.sides]
    mids = [0.5 * (e[:-1] + e[1:]) for e in edges]
    points = np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)
    return float(np.mean(objective.empirical_risk(points)))
