"""Seedable RNG streams and exact first-arrival samplers for ray rates.

The event law shared by the optimizer and the sampler has survival function
``exp(-int_0^t rate(r) dr)`` with ``rate(r) = beta * <g(x + r v), v>_+ + C``.
Two independent routes draw from it: Poisson thinning (primary; exact whenever
the declared ceiling really dominates) and a tabulated inverse CDF built by
quadrature (test oracle). They share no code beyond the rate callable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "RateBoundError",
    "RngStream",
    "as_generator",
    "uniform_sphere",
    "RayRate",
    "thin_first_arrivals",
    "sample_ray_exponential",
    "RayCdfInverter",
    "sample_ray_exponential_oracle",
]

_RTOL = 1e-9


class RateBoundError(RuntimeError):
    """A ray rate escaped its declared [floor, ceiling] envelope."""


@dataclass
class RngStream:
    """Deterministic PCG64 stream with an explicit spawn lineage.

    The same ``(seed, spawn_key)`` always reproduces the same draw sequence.
    ``child`` streams are independent by construction, so parallel trials can
    be keyed by index with no draw-order coupling between them. Streams are
    single-owner: stepping an algorithm consumes the stream it holds.
    """

    seed: int
    spawn_key: tuple[int, ...] = ()
    algorithm: str = "pcg64"

    def __post_init__(self) -> None:
        if self.algorithm != "pcg64":
            raise ValueError(f"unsupported rng algorithm {self.algorithm!r}")
        self.seed = int(self.seed)
        self.spawn_key = tuple(int(k) for k in self.spawn_key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(seq))
        self._spawned = 0

    def child(self, *key: int) -> "RngStream":
        """Independent stream addressed by a fixed integer path."""
        return RngStream(self.seed, self.spawn_key + tuple(int(k) for k in key))

    def spawn(self, n: int) -> list["RngStream"]:
        """n fresh independent child streams (counter keeps keys unique)."""
        kids = [self.child(self._spawned + i) for i in range(int(n))]
        self._spawned += int(n)
        return kids

    def describe(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "spawn_key": list(self.spawn_key),
        }


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream or a bare numpy Generator; return the Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    gen = getattr(rng, "generator", None)
    if isinstance(gen, np.random.Generator):
        return gen
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def uniform_sphere(d: int, rng, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) on the unit sphere S^{d-1} via normalized Gaussians.

    Returns shape (d,) for ``size=None`` else (size, d). For d = 1 this is a
    fair coin on {-1, +1}.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    out = gen.standard_normal((n, int(d)))
    norms = np.linalg.norm(out, axis=1)
    while np.any(norms < 1e-150):  # probability ~0, but keep the law exact
        bad = norms < 1e-150
        out[bad] = gen.standard_normal((int(bad.sum()), int(d)))
        norms = np.linalg.norm(out, axis=1)
    out /= norms[:, None]
    return out[0] if size is None else out


def _check_rate_envelope(values: np.ndarray, floor: float, ceiling: float) -> None:
    if values.size == 0:
        return
    vmax = float(np.max(values))
    vmin = float(np.min(values))
    if not math.isfinite(vmax) or vmax > ceiling * (1.0 + _RTOL) + 1e-12:
        raise RateBoundError(
            f"rate {vmax:.6g} exceeds ceiling {ceiling:.6g}: the declared "
            "gradient bound is false; aborting instead of drawing biased times"
        )
    if vmin < floor * (1.0 - _RTOL) - 1e-12:
        raise RateBoundError(
            f"rate {vmin:.6g} fell below floor {floor:.6g}: rate construction bug"
        )


GradientField = Callable[[np.ndarray], np.ndarray]


@dataclass
class RayRate:
    """Directional event rate ``r -> beta * <g(base + r*direction), v>_+ + floor``.

    ``grad_norm_bound`` must dominate ``||g||`` along the whole ray; the
    implied ceiling is what makes thinning exact, so every evaluation is
    checked against both ends of the envelope and a violation aborts the draw.
    When ``wrap`` is given (any callable mapping raw points into the geometry,
    like ``TorusDomain.wrap``) ray points are passed through it before the
    gradient evaluation; otherwise ``grad_field`` must be geometry-aware.
    """

    base_point: np.ndarray
    direction: np.ndarray
    beta: float
    constant_floor: float
    grad_field: GradientField
    grad_norm_bound: float
    wrap: Callable[[np.ndarray], np.ndarray] | None = None
    # radii in (0, length) where the rate may jump (e.g. periodic seam
    # crossings); quadrature oracles integrate piecewise between them
    seam_radii: Callable[[float], np.ndarray] | None = None

    def __post_init__(self) -> None:
        self.base_point = np.asarray(self.base_point, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)
        if (
            self.base_point.ndim != 1
            or self.base_point.shape != self.direction.shape
        ):
            raise ValueError("base_point and direction must be equal-length 1-d arrays")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        if not (math.isfinite(self.constant_floor) and self.constant_floor > 0.0):
            raise ValueError("constant_floor must be positive (guarantees termination)")
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise ValueError("beta must be finite and >= 0")
        if not (math.isfinite(self.grad_norm_bound) and self.grad_norm_bound >= 0.0):
            raise ValueError("grad_norm_bound must be finite and >= 0")

    @property
    def upper_bound(self) -> float:
        return self.beta * self.grad_norm_bound + self.constant_floor

    def rate(self, radii) -> np.ndarray:
        radii = np.asarray(radii, dtype=float)
        points = self.base_point + radii[..., None] * self.direction
        if self.wrap is not None:
            points = self.wrap(points)
        grads = np.asarray(self.grad_field(points), dtype=float)
        if grads.shape != points.shape:
            raise ValueError(
                f"grad_field returned shape {grads.shape} for points {points.shape}"
            )
        proj = np.einsum("...d,d->...", grads, self.direction)
        values = self.beta * np.maximum(proj, 0.0) + self.constant_floor
        _check_rate_envelope(np.atleast_1d(values), self.constant_floor, self.upper_bound)
        return values

    __call__ = rate


def thin_first_arrivals(
    rate_rows: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n: int,
    floor: float,
    ceiling: float,
    rng: RngStream,
    block: int | None = None,
    max_proposals: int = 200_000_000,
) -> np.ndarray:
    """Vectorized exact first arrivals of inhomogeneous exponential laws.

    Proposals come from the homogeneous Exp(ceiling) process and are accepted
    with probability ``rate/ceiling``, which is the classic thinning
    construction; the first accepted proposal has exactly the target law.
    Termination is a.s. because acceptance probability >= floor/ceiling > 0.

    Args:
        rate_rows: callback mapping (radii (k, B), rows (k,)) -> rates (k, B),
            where ``rows`` indexes which of the n rays each radii row belongs
            to. Rates must respect the shared [floor, ceiling] envelope.
        n: number of independent rays.
        floor, ceiling: shared positive rate envelope.
        rng: stream consumed by the draws.
        block: proposals drawn per ray per round; default sized so one round
            usually suffices.

    Returns:
        (n,) array of arrival radii.
    """
    if not (floor > 0.0 and ceiling > 0.0 and math.isfinite(ceiling)):
        raise ValueError("floor and ceiling must be positive and finite")
    if floor > ceiling * (1.0 + _RTOL):
        raise ValueError("floor exceeds ceiling")
    if block is None:
        block = int(min(max(math.ceil(1.3 * ceiling / floor) + 2, 4), 4096))
    gen = as_generator(rng)
    eta = np.full(n, np.nan)
    offsets = np.zeros(n)
    active = np.arange(n)
    proposed = 0
    while active.size:
        k = active.size
        gaps = gen.exponential(1.0 / ceiling, size=(k, block))
        radii = offsets[active, None] + np.cumsum(gaps, axis=1)
        rates = np.asarray(rate_rows(radii, active), dtype=float)
        if rates.shape != radii.shape:
            raise ValueError(f"rate_rows returned shape {rates.shape}, expected {radii.shape}")
        _check_rate_envelope(rates, floor, ceiling)
        accept = gen.random((k, block)) * ceiling < rates
        hit = accept.any(axis=1)
        first = accept.argmax(axis=1)
        rows = active[hit]
        eta[rows] = radii[hit, first[hit]]
        offsets[active[~hit]] = radii[~hit, -1]
        active = active[~hit]
        proposed += k * block
        if proposed > max_proposals:
            raise RateBoundError("thinning exceeded its proposal budget")
    return eta


def sample_ray_exponential(rate: RayRate, rng: RngStream) -> float:
    """One exact draw of the first arrival along ``rate``'s ray (thinning)."""

    def rows(radii: np.ndarray, _rows: np.ndarray) -> np.ndarray:
        return rate.rate(radii)

    out = thin_first_arrivals(rows, 1, rate.constant_floor, rate.upper_bound, rng)
    return float(out[0])


class RayCdfInverter:
    """Tabulated inverse CDF of the first-arrival law for an arbitrary rate.

    Integrates the rate with the composite trapezoid rule, doubling node
    counts until the cumulative hazard is stable to ``tol``, then inverts by
    monotone interpolation. ``breakpoints`` lists radii where the rate may
    jump (periodic seam crossings); quadrature then runs piecewise between
    them, with jump points excluded by one-ulp nudges, so discontinuities
    cost no accuracy. Fully independent of the thinning sampler; meant as a
    test oracle, not a hot path.
    """

    def __init__(
        self,
        rate_fn: Callable[[np.ndarray], np.ndarray],
        floor: float,
        tol: float = 1e-8,
        tail_mass: float = 1e-13,
        initial_nodes: int = 4097,
        max_doublings: int = 10,
        breakpoints=(),
    ):
        if not (floor > 0.0 and math.isfinite(floor)):
            raise ValueError("a positive rate floor is required to bound the horizon")
        self.floor = float(floor)
        self.horizon = -math.log(tail_mass) / floor

        # Nudge distance for keeping evaluation radii strictly off the jump
        # points. One ulp in r is NOT enough: downstream the caller computes
        # base + r * direction, and that addition can round exactly onto the
        # seam, landing the evaluation on the wrong side. An absolute margin
        # proportional to the horizon's float spacing survives the addition;
        # the hazard mass skipped is at most ceiling * delta, far below tol.
        delta = 32.0 * np.spacing(self.horizon)
        cuts = np.unique(np.asarray(breakpoints, dtype=float).ravel())
        cuts = cuts[(cuts > 0.0) & (cuts < self.horizon)]
        edges = np.concatenate([[0.0], cuts, [self.horizon]])
        keep = np.concatenate([[True], np.diff(edges) > 4.0 * delta])
        edges = edges[keep]
        if edges[-1] < self.horizon:
            edges[-1] = self.horizon

        pieces = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            # nudge interior jump points out of the evaluation grid
            lo_in = lo + delta if lo > 0.0 else lo
            hi_in = hi - delta if hi < self.horizon else hi
            count = max(33, int(math.ceil(initial_nodes * (hi - lo) / self.horizon)))
            times = np.linspace(lo_in, hi_in, count)
            rates = np.asarray(rate_fn(times), dtype=float)
            pieces.append([times, rates, _cumtrapz(times, rates), math.inf])

        for _ in range(max_doublings):
            if all(p[3] < tol for p in pieces):
                break
            for p in pieces:
                if p[3] < tol:
                    continue
                times, rates, cum, _ = p
                fine = np.linspace(times[0], times[-1], 2 * (times.size - 1) + 1)
                fine[::2] = times  # keep coarse nodes exact for the comparison
                fine_rates = np.asarray(rate_fn(fine), dtype=float)
                fine_cum = _cumtrapz(fine, fine_rates)
                p[:] = [fine, fine_rates, fine_cum, float(np.max(np.abs(fine_cum[::2] - cum)))]
        if any(p[3] >= tol for p in pieces):
            raise RuntimeError(
                f"cumulative hazard did not converge to tol={tol:g} "
                f"within {max_doublings} refinements"
            )

        offsets = np.concatenate([[0.0], np.cumsum([p[2][-1] for p in pieces])])
        times = np.concatenate([p[0] for p in pieces])
        rates = np.concatenate([p[1] for p in pieces])
        cum = np.concatenate([p[2] + off for p, off in zip(pieces, offsets)])
        if np.any(rates < floor * (1.0 - _RTOL) - 1e-12) or not np.all(
            np.isfinite(rates)
        ):
            raise ValueError("rate function dips below its declared floor")
        self.times = times
        self.rates = rates
        self.cumhaz = cum

    def ppf(self, u):
        """Quantile(s) of the arrival law; u in [0, 1)."""
        u_arr = np.asarray(u, dtype=float)
        if np.any((u_arr < 0.0) | (u_arr >= 1.0)):
            raise ValueError("u must lie in [0, 1)")
        target = -np.log1p(-u_arr)
        idx = np.clip(
            np.searchsorted(self.cumhaz, target, side="left"), 1, self.cumhaz.size - 1
        )
        t0 = self.times[idx - 1]
        h0 = self.cumhaz[idx - 1]
        dh = self.cumhaz[idx] - h0
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(
                dh > 0.0, t0 + (target - h0) * (self.times[idx] - t0) / dh, t0
            )
        # beyond the tabulated horizon (mass ~tail_mass) extend with final rate
        tail = target > self.cumhaz[-1]
        if np.any(tail):
            out = np.where(
                tail,
                self.times[-1] + (target - self.cumhaz[-1]) / self.rates[-1],
                out,
            )
        return float(out) if np.isscalar(u) or np.ndim(u) == 0 else out

    def sample(self, rng, size: int | None = None):
        gen = as_generator(rng)
        u = gen.random() if size is None else gen.random(int(size))
        return self.ppf(u)


def _cumtrapz(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    steps = np.diff(x) * 0.5 * (y[1:] + y[:-1])
    return np.concatenate([[0.0], np.cumsum(steps)])


def sample_ray_exponential_oracle(
    rate: RayRate, rng, tol: float = 1e-8, breakpoints=None
) -> float:
    """One draw from the same law as ``sample_ray_exponential`` via the
    quadrature + inverse-CDF route. Slow by design; use for cross-checks.

    ``breakpoints=None`` asks the rate for its own jump radii (when it carries
    a ``seam_radii`` provider); pass an explicit sequence to override.
    """
    floor = rate.constant_floor
    if breakpoints is None:
        horizon = -math.log(1e-13) / floor
        breakpoints = rate.seam_radii(horizon) if rate.seam_radii is not None else ()
    inverter = RayCdfInverter(rate.rate, floor, tol=tol, breakpoints=breakpoints)
    return float(inverter.sample(rng))
