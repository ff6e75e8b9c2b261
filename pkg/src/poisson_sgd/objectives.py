"""Loss objectives: evaluation contract, mini-batching, built-in test problems.

Objectives are immutable and vectorized: ``theta`` may carry arbitrary leading
axes, and gradient evaluation accepts per-row mini-batch index matrices so
lock-step chain ensembles evaluate in a single call. Every objective declares
an analytic bound ``grad_norm_bound`` on per-sample gradient norms over its
whole domain; the samplers' correctness rests on that bound being true, so it
is derived in closed form per problem, never estimated from samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .domain import TorusDomain
from .sampler import RngStream

__all__ = [
    "GradientBoundError",
    "ObjectiveMetadata",
    "MiniBatch",
    "sample_minibatch",
    "Objective",
    "AnalyticObjective",
    "QuadraticBowlObjective",
    "LinearRegressionObjective",
    "check_gradient",
    "double_well_1d",
    "double_well_2d",
    "quadratic_bowl",
    "linreg_synthetic",
    "BUILTIN_OBJECTIVES",
    "build_objective",
]


class GradientBoundError(RuntimeError):
    """An observed gradient norm exceeded the declared bound: the bound is false."""


@dataclass(frozen=True)
class ObjectiveMetadata:
    """Optional smoothness constants: gradient Lipschitz constant and bounds on
    the per-sample gradient/loss at the origin of the box."""

    lipschitz_c1: float | None = None
    grad_at_origin_b: float | None = None
    loss_at_origin_a: float | None = None

    def __post_init__(self) -> None:
        for name in ("lipschitz_c1", "grad_at_origin_b", "loss_at_origin_a"):
            value = getattr(self, name)
            if value is None:
                continue
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True, init=False)
class MiniBatch:
    """Distinct sample indices, canonicalized to sorted order.

    Sorting makes the m = n batch average exactly the full-batch summation
    order, so full-batch and all-samples-minibatch gradients agree bitwise.
    """

    indices: tuple[int, ...]

    def __init__(self, indices: Sequence[int]):
        idx = tuple(int(i) for i in indices)
        if len(idx) == 0:
            raise ValueError("a mini-batch must contain at least one index")
        if any(i < 0 for i in idx):
            raise ValueError("indices must be nonnegative")
        ordered = tuple(sorted(idx))
        if any(a == b for a, b in zip(ordered, ordered[1:])):
            raise ValueError("indices must be distinct")
        object.__setattr__(self, "indices", ordered)

    @property
    def size(self) -> int:
        return len(self.indices)


def sample_minibatch(n: int, m: int, rng: RngStream) -> MiniBatch:
    """Uniform size-m subset of range(n), without replacement."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    idx = rng.generator.choice(int(n), size=int(m), replace=False)
    return MiniBatch(int(i) for i in idx)


class Objective:
    """Evaluation contract shared by the optimizer, sampler, and experiments.

    Subclasses implement ``_mean_loss``/``_mean_grad`` over an index set that
    is None (full dataset), an (m,) vector (shared batch), or an (N, m) matrix
    paired row-wise with a leading axis of ``theta``. Per-sample losses are
    nonnegative; per-sample gradient norms never exceed ``grad_norm_bound``
    anywhere on ``domain``.
    """

    def __init__(
        self,
        domain: TorusDomain,
        n_samples: int,
        grad_norm_bound: float,
        name: str,
        metadata: ObjectiveMetadata | None = None,
    ):
        if int(n_samples) != n_samples or n_samples < 1:
            raise ValueError("n_samples must be a positive integer")
        if not (math.isfinite(grad_norm_bound) and grad_norm_bound > 0.0):
            raise ValueError("grad_norm_bound must be positive and finite")
        self.domain = domain
        self.n_samples = int(n_samples)
        self.grad_norm_bound = float(grad_norm_bound)
        self.name = str(name)
        self.metadata = metadata or ObjectiveMetadata()

    # ------------------------------------------------------------------
    # subclass surface
    # ------------------------------------------------------------------

    def _mean_loss(self, theta: np.ndarray, indices: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    def _mean_grad(self, theta: np.ndarray, indices: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    # ------------------------------------------------------------------
    # public api
    # ------------------------------------------------------------------

    def empirical_risk(self, theta):
        """Mean per-sample loss over the full dataset; theta (..., d) -> (...)."""
        return self._mean_loss(self._as_points(theta), None)

    def grad(self, theta) -> np.ndarray:
        """Full-batch risk gradient; theta (..., d) -> (..., d)."""
        return self._mean_grad(self._as_points(theta), None)

    def minibatch_risk(self, batch, theta):
        return self._mean_loss(self._as_points(theta), self.resolve_batch(batch))

    def minibatch_grad(self, batch, theta) -> np.ndarray:
        """Mean gradient over ``batch``; unbiased for the full gradient when
        the batch is sampled uniformly."""
        return self._mean_grad(self._as_points(theta), self.resolve_batch(batch))

    def grad_field(self, batch=None) -> Callable[..., np.ndarray]:
        """Gradient evaluator ``field(points, rows=None)`` for ray samplers.

        ``batch`` may be None (full dataset), a MiniBatch / (m,) vector, or an
        (N, m) per-chain matrix; in the matrix case ``rows`` selects which
        chain rows the leading axis of ``points`` refers to.
        """
        idx = self.resolve_batch(batch)
        if idx is None or idx.ndim == 1:

            def field(points, rows=None):
                return self._mean_grad(np.asarray(points, dtype=float), idx)

        else:

            def field(points, rows=None):
                sel = idx if rows is None else idx[rows]
                return self._mean_grad(np.asarray(points, dtype=float), sel)

        return field

    def check_grad_norms(self, grads: np.ndarray) -> None:
        """Runtime guard: abort if any observed gradient defeats the bound."""
        norms = np.linalg.norm(np.atleast_2d(grads), axis=-1)
        worst = float(np.max(norms)) if norms.size else 0.0
        if not math.isfinite(worst) or worst > self.grad_norm_bound * (1.0 + 1e-9):
            raise GradientBoundError(
                f"{self.name}: gradient norm {worst:.6g} exceeds declared bound "
                f"{self.grad_norm_bound:.6g}"
            )

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    def _as_points(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0 or theta.shape[-1] != self.domain.dim:
            raise ValueError(
                f"theta must have last axis {self.domain.dim}, got shape {theta.shape}"
            )
        return theta

    def resolve_batch(self, batch) -> np.ndarray | None:
        """Canonicalize a batch spec to None, an (m,) or an (N, m) int array."""
        if batch is None:
            return None
        if isinstance(batch, MiniBatch):
            arr = np.asarray(batch.indices, dtype=np.intp)
        else:
            arr = np.asarray(batch)
            if arr.dtype.kind not in "iu":
                raise ValueError("batch indices must be integers")
            arr = arr.astype(np.intp, copy=False)
        if arr.ndim not in (1, 2) or arr.shape[-1] == 0:
            raise ValueError(f"batch must be 1-d or 2-d and nonempty, got shape {arr.shape}")
        if arr.min() < 0 or arr.max() >= self.n_samples:
            raise ValueError(
                f"batch indices must lie in [0, {self.n_samples}), got "
                f"[{arr.min()}, {arr.max()}]"
            )
        if arr.shape[-1] > 1:
            ordered = np.sort(arr, axis=-1)
            if np.any(np.diff(ordered, axis=-1) == 0):
                raise ValueError("batch indices must be distinct")
        return arr


class AnalyticObjective(Objective):
    """Dataset-free objective: a single analytic nonnegative loss term (n = 1)."""

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        grad_fn: Callable[[np.ndarray], np.ndarray],
        domain: TorusDomain,
        grad_norm_bound: float,
        name: str,
        metadata: ObjectiveMetadata | None = None,
        global_minimum=None,
        local_minima: Sequence = (),
        extra: dict | None = None,
    ):
        super().__init__(domain, 1, grad_norm_bound, name, metadata)
        self._fn = fn
        self._grad_fn = grad_fn
        self.global_minimum = (
            None if global_minimum is None else np.asarray(global_minimum, dtype=float)
        )
        self.local_minima = tuple(np.asarray(p, dtype=float) for p in local_minima)
        self.extra = dict(extra or {})

    def _mean_loss(self, theta, indices):
        # any valid index set is a subset of {0}: the mean is the bare term
        return np.asarray(self._fn(theta), dtype=float)

    def _mean_grad(self, theta, indices):
        return np.asarray(self._grad_fn(theta), dtype=float)


class QuadraticBowlObjective(Objective):
    """Mean of half squared distances to fixed centers.

    Per-sample loss ``l(z_i; theta) = ||theta - z_i||^2 / 2`` admits closed
    forms for every batch statistic, so per-chain batches cost O(1) per point.
    """

    def __init__(self, centers, domain: TorusDomain | None = None, name: str = "quadratic_bowl"):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if centers.ndim != 2:
            raise ValueError("centers must be an (n, d) array")
        n, d = centers.shape
        if domain is None:
            domain = TorusDomain(d, 10.0)
        if d != domain.dim:
            raise ValueError("centers dimension must match the domain")
        # per-sample gradient is theta - z_i; its norm is maximized at a box corner
        corner_dev = np.maximum(np.abs(centers), np.abs(domain.sides - centers))
        per_sample = np.linalg.norm(corner_dev, axis=1)
        bound = float(np.max(per_sample))
        center_norms = np.linalg.norm(centers, axis=1)
        meta = ObjectiveMetadata(
            lipschitz_c1=1.0,
            grad_at_origin_b=float(np.max(center_norms)),
            loss_at_origin_a=float(np.max(0.5 * center_norms**2)),
        )
        super().__init__(domain, n, bound, name, meta)
        self.centers = centers
        self._sqnorms = np.einsum("nd,nd->n", centers, centers)
        self._zbar_full = centers.mean(axis=0)
        self._sq_full = float(self._sqnorms.mean())

    def _batch_stats(self, indices):
        if indices is None:
            return self._zbar_full, self._sq_full
        if indices.ndim == 1:
            return self.centers[indices].mean(axis=0), float(
                self._sqnorms[indices].mean()
            )
        return self.centers[indices].mean(axis=1), self._sqnorms[indices].mean(axis=1)

    @staticmethod
    def _align(stat: np.ndarray, theta: np.ndarray, trailing: int) -> np.ndarray:
        # broadcast an (N, ...) per-chain statistic against theta (N, ..., d)
        extra = theta.ndim - 1 - stat.ndim + (1 if trailing else 0)
        shape = stat.shape[:1] + (1,) * extra + stat.shape[1:]
        return stat.reshape(shape)

    def _mean_loss(self, theta, indices):
        zbar, sq = self._batch_stats(indices)
        if indices is not None and indices.ndim == 2:
            zbar = self._align(zbar, theta, trailing=True)
            sq = self._align(sq, theta, trailing=False)
        return (
            0.5 * np.einsum("...d,...d->...", theta, theta)
            - np.einsum("...d,...d->...", theta, zbar)
            + 0.5 * sq
        )

    def _mean_grad(self, theta, indices):
        zbar, _ = self._batch_stats(indices)
        if indices is not None and indices.ndim == 2:
            zbar = self._align(zbar, theta, trailing=True)
        return theta - zbar


class LinearRegressionObjective(Objective):
    """Half squared-error linear model over a stored design matrix."""

    def __init__(
        self,
        features,
        targets,
        domain: TorusDomain,
        generator_spec: dict | None = None,
        name: str = "linreg_synthetic",
    ):
        X = np.asarray(features, dtype=float)
        y = np.asarray(targets, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("features must be (n, d) with matching (n,) targets")
        n, d = X.shape
        if d != domain.dim:
            raise ValueError("feature dimension must match the domain")
        sides = domain.sides
        # residual |x.theta - y| over the box is maximized at a box corner
        hi = np.sum(sides * np.maximum(X, 0.0), axis=1)
        lo = np.sum(sides * np.minimum(X, 0.0), axis=1)
        resid_sup = np.maximum(np.abs(hi - y), np.abs(lo - y))
        x_norms = np.linalg.norm(X, axis=1)
        bound = float(np.max(resid_sup * x_norms))
        meta = ObjectiveMetadata(
            lipschitz_c1=float(np.max(x_norms**2)),
            grad_at_origin_b=float(np.max(np.abs(y) * x_norms)),
            loss_at_origin_a=float(np.max(0.5 * y**2)),
        )
        super().__init__(domain, n, bound, name, meta)
        self.features = X
        self.targets = y
        self.generator_spec = dict(generator_spec or {})

    def _residuals(self, theta, indices):
        if indices is None or indices.ndim == 1:
            Xb = self.features if indices is None else self.features[indices]
            yb = self.targets if indices is None else self.targets[indices]
            return np.einsum("...d,md->...m", theta, Xb) - yb, Xb
        # per-chain batches: theta (N, ..., d) row-paired with indices (N, m)
        Xb = self.features[indices]
        yb = self.targets[indices]
        lead = theta.shape[0]
        if lead != indices.shape[0]:
            raise ValueError("theta leading axis must match per-chain batch rows")
        flat = theta.reshape(lead, -1, theta.shape[-1])
        resid = np.matmul(flat, np.swapaxes(Xb, 1, 2)) - yb[:, None, :]
        return resid.reshape(theta.shape[:-1] + (indices.shape[1],)), Xb

    def _mean_loss(self, theta, indices):
        resid, _ = self._residuals(theta, indices)
        return 0.5 * np.mean(resid**2, axis=-1)

    def _mean_grad(self, theta, indices):
        resid, Xb = self._residuals(theta, indices)
        if indices is None or indices.ndim == 1:
            return np.einsum("...m,md->...d", resid, Xb) / Xb.shape[0]
        lead = theta.shape[0]
        flat = resid.reshape(lead, -1, resid.shape[-1])
        grad = np.matmul(flat, Xb) / Xb.shape[1]
        return grad.reshape(theta.shape)

    def to_json(self, path) -> None:
        """Persist the dataset and its generation parameters for replay."""
        spec = dict(self.generator_spec)
        spec.update(
            {
                "n": self.n_samples,
                "d": self.domain.dim,
                "X": self.features.tolist(),
                "y": self.targets.tolist(),
            }
        )
        Path(path).write_text(json.dumps(spec, sort_keys=True, indent=1) + "\n")

    @classmethod
    def from_json(cls, path) -> "LinearRegressionObjective":
        spec = json.loads(Path(path).read_text())
        domain = TorusDomain(int(spec["d"]), spec.get("side", 6.0))
        keys = {k: spec[k] for k in ("seed", "noise", "side") if k in spec}
        return cls(spec["X"], spec["y"], domain, generator_spec=keys)


def check_gradient(obj: Objective, theta, step: float | None = None) -> float:
    """Central-difference check of the full-batch gradient.

    Returns the maximum per-coordinate error, measured relative to the
    analytic component where it exceeds 1 in magnitude and absolutely below
    (so critical points do not inflate the ratio).
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape != (obj.domain.dim,):
        raise ValueError("theta must be a single point")
    analytic = np.asarray(obj.grad(theta), dtype=float)
    worst = 0.0
    for i in range(theta.size):
        h = step if step is not None else 1e-6 * max(1.0, abs(theta[i]))
        probe = np.zeros_like(theta)
        probe[i] = h
        fd = (obj.empirical_risk(theta + probe) - obj.empirical_risk(theta - probe)) / (
            2.0 * h
        )
        err = abs(fd - analytic[i]) / max(1.0, abs(analytic[i]))
        worst = max(worst, float(err))
    return worst


# ----------------------------------------------------------------------
# built-in problems
# ----------------------------------------------------------------------


def _quartic(x: np.ndarray) -> np.ndarray:
    # x^4 - 4 x^3 - 36 x^2 + 864; nonnegative, zero at x = 6
    return ((x - 4.0) * x - 36.0) * x * x + 864.0


def _quartic_grad(x: np.ndarray) -> np.ndarray:
    return ((4.0 * x - 12.0) * x - 72.0) * x


def _quartic_grad_sup(lo: float, hi: float) -> float:
    """sup |4x^3 - 12x^2 - 72x| over [lo, hi]: ends plus inflection points."""
    candidates = [lo, hi]
    for root in (1.0 + math.sqrt(7.0), 1.0 - math.sqrt(7.0)):  # zeros of f'''/12
        if lo < root < hi:
            candidates.append(root)
    return max(abs(float(_quartic_grad(np.asarray(c)))) for c in candidates)


def double_well_1d(side: float = 16.0, offset: float = 6.0) -> AnalyticObjective:
    """Quartic double well on a circle.

    In shifted coordinates ``x = theta - offset`` the loss is
    ``x^4 - 4x^3 - 36x^2 + 864`` with a global minimum 0 at x = 6 (box point
    offset + 6), a local minimum 729 at x = -3, and a barrier 864 at x = 0.
    """
    lo, hi = -float(offset), float(side) - float(offset)
    if not (lo < -3.0 and 6.0 < hi):
        raise ValueError("box must contain both wells: need offset > 3 and side - offset > 6")
    domain = TorusDomain(1, side)
    off = float(offset)

    def fn(theta):
        return _quartic(theta[..., 0] - off)

    def grad(theta):
        return _quartic_grad(theta[..., 0] - off)[..., None]

    bound = _quartic_grad_sup(lo, hi)
    curv = max(abs(12.0 * x * x - 24.0 * x - 72.0) for x in (lo, hi))
    meta = ObjectiveMetadata(
        lipschitz_c1=curv,
        grad_at_origin_b=abs(float(_quartic_grad(np.asarray(lo)))),
        loss_at_origin_a=float(_quartic(np.asarray(lo))),
    )
    return AnalyticObjective(
        fn,
        grad,
        domain,
        bound,
        "double_well_1d",
        metadata=meta,
        global_minimum=[off + 6.0],
        local_minima=[[off - 3.0]],
        extra={"offset": off, "barrier": [off]},
    )


def double_well_2d(
    side_lengths: float | Sequence[float] = (40.0, 40.0),
    offset: Sequence[float] = (19.0, 20.0),
) -> AnalyticObjective:
    """Non-convex benchmark: quartic double well in x plus a parabola in y.

    In shifted coordinates the loss is ``x^4 - 4x^3 - 36x^2 + y^2 + 864``:
    global minimum 0 at (6, 0), local minimum 729 at (-3, 0), saddle between
    them at (0, 0). The default box is wide enough that trajectories at the
    default temperatures never feel the periodic seam.
    """
    domain = TorusDomain(2, side_lengths)
    off = np.asarray(offset, dtype=float)
    if off.shape != (2,):
        raise ValueError("offset must have two coordinates")
    lo, hi = -off[0], domain.side_lengths[0] - off[0]
    if not (lo < -3.0 and 6.0 < hi):
        raise ValueError("box must contain both wells along x")

    def fn(theta):
        x = theta[..., 0] - off[0]
        y = theta[..., 1] - off[1]
        return _quartic(x) + y * y

    def grad(theta):
        x = theta[..., 0] - off[0]
        y = theta[..., 1] - off[1]
        return np.stack([_quartic_grad(x), 2.0 * y], axis=-1)

    y_max = max(off[1], domain.side_lengths[1] - off[1])
    bound = math.hypot(_quartic_grad_sup(lo, hi), 2.0 * y_max)
    curv = max(max(abs(12.0 * x * x - 24.0 * x - 72.0) for x in (lo, hi)), 2.0)
    origin = np.array([0.0, 0.0])
    meta = ObjectiveMetadata(
        lipschitz_c1=curv,
        grad_at_origin_b=float(np.linalg.norm(grad(origin))),
        loss_at_origin_a=float(fn(origin)),
    )
    return AnalyticObjective(
        fn,
        grad,
        domain,
        bound,
        "double_well_2d",
        metadata=meta,
        global_minimum=off + [6.0, 0.0],
        local_minima=[off + [-3.0, 0.0]],
        extra={"offset": off.tolist(), "saddle": off.tolist()},
    )


def quadratic_bowl(
    centers, side_lengths: float | Sequence[float] | None = None
) -> QuadraticBowlObjective:
    """Bowl objective ``mean_i ||theta - z_i||^2 / 2`` over given centers."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    domain = None
    if side_lengths is not None:
        domain = TorusDomain(centers.shape[1], side_lengths)
    return QuadraticBowlObjective(centers, domain)


def linreg_synthetic(
    n: int,
    d: int,
    noise: float,
    seed: int,
    side: float = 6.0,
) -> LinearRegressionObjective:
    """Synthetic least squares: Gaussian design, true weights inside the box,
    Gaussian target noise. Same (n, d, noise, seed, side) -> same bytes."""
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = RngStream(int(seed), spawn_key=(104729,))  # fixed lineage for datasets
    gen = rng.generator
    X = gen.standard_normal((int(n), int(d)))
    theta_true = side * (0.25 + 0.5 * gen.random(int(d)))
    y = X @ theta_true + (noise * gen.standard_normal(int(n)) if noise > 0 else 0.0)
    domain = TorusDomain(int(d), side)
    spec = {
        "seed": int(seed),
        "noise": float(noise),
        "side": float(side),
        "theta_true": theta_true.tolist(),
    }
    return LinearRegressionObjective(X, y, domain, generator_spec=spec)


BUILTIN_OBJECTIVES: dict[str, Callable[..., Objective]] = {
    "double_well_1d": double_well_1d,
    "double_well_2d": double_well_2d,
    "quadratic_bowl": quadratic_bowl,
    "linreg_synthetic": linreg_synthetic,
}


def build_objective(spec: dict) -> Objective:
    """Construct a built-in objective from a config mapping {"name", ...}."""
    spec = dict(spec)
    name = spec.pop("name")
    if name not in BUILTIN_OBJECTIVES:
        raise ValueError(
            f"unknown objective {name!r}; available: {sorted(BUILTIN_OBJECTIVES)}"
        )
    return BUILTIN_OBJECTIVES[name](**spec)
