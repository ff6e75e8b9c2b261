"""Config-driven experiments with persisted, replayable artifacts.

Five experiment kinds map to the questions the algorithms are built to
answer: ``escape`` (does the random learning rate leave a local basin plain
SGD is stuck in), ``stationarity`` (does the step-K law match the closed-form
density), ``beta_sweep`` (does final risk drop as beta grows),
``coupling`` (how far apart are the optimizer's and the sampler's step-K
laws), ``generalization`` (does the train/test gap shrink with dataset
size), plus ``baseline`` for the reference optimizers alone.

Every run writes raw artifacts first (endpoint arrays, records, reference
grids), then derives all summary tables from those artifacts, so ``analyze``
can rebuild every table from disk without rerunning anything. A manifest
guards the directory: rerunning the same config is allowed and reproduces
identical bytes; a different config hash refuses to touch the directory.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bps import BpsConfig, coupled_compare, run_bps, run_bps_ensemble
from .domain import TorusDomain
from .metrics import histogram_tv, ks_statistic, sliced_wasserstein1
from .objectives import LinearRegressionObjective, Objective, build_objective
from .optimizer import PoissonSgdConfig, run_poisson_sgd, run_poisson_sgd_ensemble
from .records import RunRecord, canonical_json
from .sampler import RngStream, uniform_sphere
from .stationary import StationaryDensity, grid_mean_risk

__all__ = [
    "ExperimentConfig",
    "run_experiment",
    "analyze_experiment",
    "EXPERIMENT_KINDS",
    "worker_count",
]

WORKERS_ENV = "POISSON_SGD_WORKERS"


def worker_count() -> int:
    """Worker processes for seed fan-out; 1 (serial) unless the env var says more."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


@dataclass(frozen=True)
class ExperimentConfig:
    """Self-describing experiment spec; the JSON form is the source of truth."""

    kind: str
    objective: dict
    trials: int
    seed: int
    protocol: dict = field(default_factory=dict)
    algorithms: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(
                f"unknown experiment kind {self.kind!r}; known: {sorted(EXPERIMENT_KINDS)}"
            )
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "objective": self.objective,
            "trials": self.trials,
            "seed": self.seed,
            "protocol": self.protocol,
            "algorithms": self.algorithms,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "ExperimentConfig":
        return cls(
            kind=spec["kind"],
            objective=dict(spec["objective"]),
            trials=int(spec["trials"]),
            seed=int(spec["seed"]),
            protocol=dict(spec.get("protocol", {})),
            algorithms=dict(spec.get("algorithms", {})),
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]

    def build_objective(self) -> Objective:
        return build_objective(self.objective)

    def stream(self, *key: int) -> RngStream:
        return RngStream(self.seed, spawn_key=tuple(int(k) for k in key))


# ----------------------------------------------------------------------
# manifest and artifact plumbing
# ----------------------------------------------------------------------


def _write_manifest(out_dir: Path, cfg: ExperimentConfig, seeds: list[int], artifacts: list[str]) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed_list": seeds,
        "version": __version__,
        "artifacts": sorted(artifacts),
    }
    (out_dir / "manifest.json").write_text(canonical_json(manifest) + "\n")


def _check_manifest(out_dir: Path, cfg: ExperimentConfig) -> None:
    path = out_dir / "manifest.json"
    if not path.exists():
        return
    existing = json.loads(path.read_text())
    if existing.get("config_hash") != cfg.config_hash():
        raise RuntimeError(
            f"{out_dir} already holds experiment {existing.get('config_hash')}; "
            f"refusing to overwrite with {cfg.config_hash()} (use a fresh directory)"
        )


def _load_manifest(out_dir: Path) -> dict:
    path = Path(out_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {out_dir}")
    return json.loads(path.read_text())


def _save_cloud(path: Path, arr: np.ndarray) -> None:
    np.save(path, np.ascontiguousarray(np.asarray(arr, dtype=float)))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


_PLOT_STUB = """\
#!/usr/bin/env python3
\"\"\"Render the figures for this run directory (requires matplotlib).\"\"\"
import json, sys
from pathlib import Path

import numpy as np

here = Path(__file__).parent
summary = json.loads((here / "summary.json").read_text())
try:
    import matplotlib.pyplot as plt
except ImportError:
    sys.exit("matplotlib not installed; tables in summary.json / *.csv")

kind = summary["kind"]
if kind == "escape":
    for csv in sorted(here.glob("trajectory_*.csv")):
        data = np.genfromtxt(csv, delimiter=",", names=True)
        plt.plot(data["theta_0"], data["theta_1"], lw=0.7, label=csv.stem)
    plt.legend(fontsize=6); plt.title("trajectories")
elif kind in ("stationarity", "beta_sweep", "coupling", "generalization"):
    table = np.genfromtxt(here / "summary.csv", delimiter=",", names=True)
    names = table.dtype.names
    plt.plot(table[names[0]], table[names[1]], "o-")
    plt.xlabel(names[0]); plt.ylabel(names[1]); plt.title(kind)
plt.savefig(here / "figure.png", dpi=150)
print("wrote", here / "figure.png")
"""


# ----------------------------------------------------------------------
# baseline optimizers (references only; no event-rate machinery)
# ----------------------------------------------------------------------


def _run_sgd_ensemble(
    objective: Objective,
    rate: float,
    n_steps: int,
    initial_points: np.ndarray,
    rng: RngStream,
    noise_scale: float = 0.0,
    batch_size: int = 0,
) -> np.ndarray:
    """Plain SGD (optionally with Gaussian noise: the Langevin baseline).

    ``noise_scale`` is the per-step standard deviation added to every
    coordinate after the gradient step; 0 recovers deterministic SGD.
    """
    domain = objective.domain
    thetas = domain.wrap(np.array(initial_points, dtype=float))
    gen = rng.generator
    n = objective.n_samples
    m = n if batch_size == 0 else batch_size
    for _ in range(n_steps):
        if m < n:
            keys = gen.random((thetas.shape[0], n))
            idx = np.sort(np.argpartition(keys, m - 1, axis=1)[:, :m], axis=1)
            grads = objective.grad_field(idx)(thetas)
        else:
            grads = objective.grad(thetas)
        thetas = thetas - rate * grads
        if noise_scale > 0.0:
            thetas = thetas + noise_scale * gen.standard_normal(thetas.shape)
        thetas = domain.wrap(thetas)
    return thetas


def _classify_endpoints(objective: Objective, thetas: np.ndarray) -> np.ndarray:
    """True where the endpoint is nearer the global minimum than any local one."""
    global_min = getattr(objective, "global_minimum", None)
    local_minima = getattr(objective, "local_minima", ())
    if global_min is None or not local_minima:
        raise ValueError(f"{objective.name} lacks labeled minima for basin classification")
    domain = objective.domain
    d_global = domain.distance(thetas, global_min)
    d_local = np.min(
        np.stack([domain.distance(thetas, p) for p in local_minima]),
        axis=0,
    )
    return d_global < d_local


# ----------------------------------------------------------------------
# escape
# ----------------------------------------------------------------------


def _escape_defaults(objective: Objective) -> dict:
    return {
        "beta": 0.01,
        "epsilon": 0.05,
        "n_steps": 30000,
        "init_center": None,  # objective's first local minimum plus a nudge
        "init_jitter": 0.1,
        "sgd_rate": 0.002,
        "sgld_noise": None,  # default sqrt(2 * rate / beta)
        "n_trajectories": 4,
        "trajectory_stride": 50,
    }


def _escape_init(objective: Objective, params: dict, trials: int, rng: RngStream) -> np.ndarray:
    center = params["init_center"]
    if center is None:
        local_minima = getattr(objective, "local_minima", ())
        if not local_minima:
            raise ValueError("init_center required: objective has no labeled local minimum")
        center = np.asarray(local_minima[0], dtype=float).copy()
        center[0] -= 0.1
        center[1:] += 0.2
    center = np.asarray(center, dtype=float)
    jitter = float(params["init_jitter"])
    offsets = rng.generator.uniform(-jitter, jitter, size=(trials, center.size))
    return objective.domain.wrap(center + offsets)


def _run_escape(cfg: ExperimentConfig, out_dir: Path) -> list[str]:
    objective = cfg.build_objective()
    params = {**_escape_defaults(objective), **cfg.protocol}
    trials = cfg.trials
    inits = _escape_init(objective, params, trials, cfg.stream(0))
    init_vels = uniform_sphere(objective.domain.dim, cfg.stream(1), trials)

    artifacts = ["inits.npy", "params.json"]
    _save_cloud(out_dir / "inits.npy", inits)
    (out_dir / "params.json").write_text(canonical_json(params) + "\n")

    opt_cfg = PoissonSgdConfig(
        beta=float(params["beta"]),
        epsilon=float(params["epsilon"]),
        n_steps=int(params["n_steps"]),
        seed=cfg.seed,
    )
    opt = run_poisson_sgd_ensemble(
        objective,
        opt_cfg,
        trials,
        rng=cfg.stream(2),
        initial_points=inits,
        initial_velocities=init_vels,
    )
    _save_cloud(out_dir / "endpoints_poisson_sgd.npy", opt.thetas)
    artifacts.append("endpoints_poisson_sgd.npy")

    rate = float(params["sgd_rate"])
    sgd = _run_sgd_ensemble(objective, rate, int(params["n_steps"]), inits, cfg.stream(3))
    _save_cloud(out_dir / "endpoints_sgd.npy", sgd)
    artifacts.append("endpoints_sgd.npy")

    noise = params["sgld_noise"]
    noise = float(np.sqrt(2.0 * rate / float(params["beta"]))) if noise is None else float(noise)
    sgld = _run_sgd_ensemble(
        objective, rate, int(params["n_steps"]), inits, cfg.stream(4), noise_scale=noise
    )
    _save_cloud(out_dir / "endpoints_sgld.npy", sgld)
    artifacts.append("endpoints_sgld.npy")

    # a few full trajectories for the figure
    for i in range(min(int(params["n_trajectories"]), trials)):
        traj_cfg = PoissonSgdConfig(
            beta=float(params["beta"]),
            epsilon=float(params["epsilon"]),
            n_steps=int(params["n_steps"]),
            seed=cfg.seed + 1 + i,
            initial_point=tuple(inits[i]),
            record_stride=int(params["trajectory_stride"]),
            record_risk=False,
        )
        rec = run_poisson_sgd(objective, traj_cfg)
        rec.to_csv(out_dir / f"trajectory_{i}.csv")
        rec.to_ndjson(out_dir / f"trajectory_{i}.ndjson")
        artifacts += [f"trajectory_{i}.csv", f"trajectory_{i}.ndjson"]
    return artifacts


def _analyze_escape(cfg: ExperimentConfig, out_dir: Path) -> dict:
    objective = cfg.build_objective()
    rows = []
    for name in ("poisson_sgd", "sgd", "sgld"):
        thetas = np.load(out_dir / f"endpoints_{name}.npy")
        reached = _classify_endpoints(objective, thetas)
        risks = np.asarray(objective.empirical_risk(thetas), dtype=float)
        rows.append(
            {
                "algorithm": name,
                "fraction_global": float(reached.mean()),
                "mean_final_risk": float(risks.mean()),
            }
        )
    _write_csv(
        out_dir / "summary.csv",
        ["algorithm", "fraction_global", "mean_final_risk"],
        [[r["algorithm"], r["fraction_global"], r["mean_final_risk"]] for r in rows],
    )
    return {"table": rows}


# ----------------------------------------------------------------------
# stationarity
# ----------------------------------------------------------------------


def _stationarity_defaults() -> dict:
    return {
        "algorithm": "bps",
        "beta": 1.0,
        "epsilon": 1.0,
        "c_b": 0.0,
        "batch_size": 0,
        "n_steps": 3000,
        "checkpoints": None,  # default: powers of 2 toward n_steps
        "bins": 64,
        "mode": "many-short-chains",
        "burn_in_fraction": 0.2,
        "init": "uniform",  # or "oracle"
        "oracle_samples": 100000,
        "n_proj": 64,
    }


def _geometric_checkpoints(n_steps: int) -> list[int]:
    ks = []
    k = 8
    while k < n_steps:
        ks.append(k)
        k *= 8
    ks.append(n_steps)
    return ks


def _run_stationarity(cfg: ExperimentConfig, out_dir: Path) -> list[str]:
    objective = cfg.build_objective()
    params = {**_stationarity_defaults(), **cfg.protocol}
    n_steps = int(params["n_steps"])
    checkpoints = params["checkpoints"] or _geometric_checkpoints(n_steps)
    checkpoints = sorted({int(k) for k in checkpoints})

    density = StationaryDensity(objective, float(params["beta"]), float(params["epsilon"]))
    grid = density.grid()
    (out_dir / "params.json").write_text(
        canonical_json({**params, "checkpoints": checkpoints}) + "\n"
    )
    grid.coarsen((len(grid.edges[0]) - 1) // int(params["bins"])).to_csv(
        out_dir / "reference_grid.csv"
    )
    artifacts = ["params.json", "reference_grid.csv"]

    oracle = density.sample(int(params["oracle_samples"]), cfg.stream(5))
    _save_cloud(out_dir / "oracle_sample.npy", oracle)
    artifacts.append("oracle_sample.npy")

    init_points = None
    if params["init"] == "oracle":
        init_points = density.sample(cfg.trials, cfg.stream(6))
    elif params["init"] != "uniform":
        raise ValueError(f"unknown init {params['init']!r}")

    if params["mode"] == "many-short-chains":
        if params["algorithm"] == "bps":
            algo_cfg = BpsConfig.coupled(
                beta=float(params["beta"]),
                epsilon=float(params["epsilon"]),
                grad_norm_bound=objective.grad_norm_bound,
                c_b=float(params["c_b"]),
                n_steps=n_steps,
                seed=cfg.seed,
            )
            result = run_bps_ensemble(
                objective,
                algo_cfg,
                cfg.trials,
                rng=cfg.stream(7),
                initial_points=init_points,
                snapshot_steps=checkpoints,
            )
        elif params["algorithm"] == "poisson_sgd":
            algo_cfg = PoissonSgdConfig(
                beta=float(params["beta"]),
                epsilon=float(params["epsilon"]),
                n_steps=n_steps,
                batch_size=int(params["batch_size"]),
                seed=cfg.seed,
            )
            result = run_poisson_sgd_ensemble(
                objective,
                algo_cfg,
                cfg.trials,
                rng=cfg.stream(7),
                initial_points=init_points,
                snapshot_steps=checkpoints,
            )
        else:
            raise ValueError(f"unknown algorithm {params['algorithm']!r}")
        for k, cloud in result.snapshots.items():
            _save_cloud(out_dir / f"cloud_{k:08d}.npy", cloud)
            artifacts.append(f"cloud_{k:08d}.npy")
    elif params["mode"] == "long-chain":
        # one chain; thinned post-burn-in states stand in for the step-K law
        if params["algorithm"] == "bps":
            algo_cfg = BpsConfig.coupled(
                beta=float(params["beta"]),
                epsilon=float(params["epsilon"]),
                grad_norm_bound=objective.grad_norm_bound,
                c_b=float(params["c_b"]),
                n_steps=n_steps,
                seed=cfg.seed,
            )
            rec = run_bps(objective, algo_cfg)
        else:
            algo_cfg = PoissonSgdConfig(
                beta=float(params["beta"]),
                epsilon=float(params["epsilon"]),
                n_steps=n_steps,
                batch_size=int(params["batch_size"]),
                seed=cfg.seed,
            )
            rec = run_poisson_sgd(objective, algo_cfg)
        rec.to_ndjson(out_dir / "chain.ndjson")
        artifacts.append("chain.ndjson")
        thetas = rec.column("theta")
        burn = int(len(thetas) * float(params["burn_in_fraction"]))
        _save_cloud(out_dir / f"cloud_{n_steps:08d}.npy", thetas[burn:])
        artifacts.append(f"cloud_{n_steps:08d}.npy")
    else:
        raise ValueError(f"unknown mode {params['mode']!r}")
    return artifacts


def _analyze_stationarity(cfg: ExperimentConfig, out_dir: Path) -> dict:
    objective = cfg.build_objective()
    params = {**_stationarity_defaults(), **cfg.protocol}
    density = StationaryDensity(objective, float(params["beta"]), float(params["epsilon"]))
    grid = density.grid()
    reference = grid.coarsen((len(grid.edges[0]) - 1) // int(params["bins"]))
    oracle = np.load(out_dir / "oracle_sample.npy")

    rows = []
    for path in sorted(out_dir.glob("cloud_*.npy")):
        k = int(path.stem.split("_")[1])
        cloud = np.load(path)
        if objective.domain.dim == 1:
            tv = histogram_tv(cloud, reference)
        else:
            tv = max(
                histogram_tv(cloud[:, [i]], reference.marginal(i))
                for i in range(objective.domain.dim)
            )
        w1 = sliced_wasserstein1(
            cloud, oracle, n_proj=int(params["n_proj"]), rng=cfg.stream(8)
        )
        ks = [
            float(
                ks_statistic(
                    cloud[:, i],
                    density.grid().marginal(i).cdf_1d(),
                )
            )
            for i in range(objective.domain.dim)
        ]
        rows.append(
            {
                "k": k,
                "tv": float(tv),
                "sliced_w1": float(w1),
                "ks_max": max(ks),
            }
        )
    rows.sort(key=lambda r: r["k"])
    _write_csv(
        out_dir / "summary.csv",
        ["k", "tv", "sliced_w1", "ks_max"],
        [[r["k"], r["tv"], r["sliced_w1"], r["ks_max"]] for r in rows],
    )
    summary = {"table": rows, "mode": params["mode"]}
    if params["mode"] == "long-chain":
        summary["long_chain_caveat"] = (
            "distances computed from thinned states of ONE chain; they estimate "
            "the time-average law, not the step-K law the many-short-chains mode measures"
        )
    return summary


# ----------------------------------------------------------------------
# beta sweep
# ----------------------------------------------------------------------


def _beta_sweep_defaults() -> dict:
    return {
        "betas": [0.0, 0.001, 0.01, 0.1],
        "epsilon": 0.05,
        "n_steps": 20000,
        "batch_size": 0,
        "uniform_resolution": 512,
    }


def _run_beta_sweep(cfg: ExperimentConfig, out_dir: Path) -> list[str]:
    objective = cfg.build_objective()
    params = {**_beta_sweep_defaults(), **cfg.protocol}
    (out_dir / "params.json").write_text(canonical_json(params) + "\n")
    artifacts = ["params.json"]
    for i, beta in enumerate(params["betas"]):
        run_cfg = PoissonSgdConfig(
            beta=float(beta),
            epsilon=float(params["epsilon"]),
            n_steps=int(params["n_steps"]),
            batch_size=int(params["batch_size"]),
            seed=cfg.seed,
        )
        result = run_poisson_sgd_ensemble(
            objective, run_cfg, cfg.trials, rng=cfg.stream(10, i)
        )
        name = f"endpoints_beta_{i}.npy"
        _save_cloud(out_dir / name, result.thetas)
        artifacts.append(name)
    return artifacts


def _analyze_beta_sweep(cfg: ExperimentConfig, out_dir: Path) -> dict:
    objective = cfg.build_objective()
    params = {**_beta_sweep_defaults(), **cfg.protocol}
    rows = []
    for i, beta in enumerate(params["betas"]):
        thetas = np.load(out_dir / f"endpoints_beta_{i}.npy")
        risks = np.asarray(objective.empirical_risk(thetas), dtype=float)
        rows.append(
            {
                "beta": float(beta),
                "mean_final_risk": float(risks.mean()),
                "std_final_risk": float(risks.std(ddof=1)),
                "se_final_risk": float(risks.std(ddof=1) / np.sqrt(risks.size)),
            }
        )
    uniform_mean = grid_mean_risk(objective, int(params["uniform_resolution"]))
    _write_csv(
        out_dir / "summary.csv",
        ["beta", "mean_final_risk", "std_final_risk", "se_final_risk"],
        [
            [r["beta"], r["mean_final_risk"], r["std_final_risk"], r["se_final_risk"]]
            for r in rows
        ],
    )
    return {"table": rows, "uniform_law_mean_risk": float(uniform_mean)}


# ----------------------------------------------------------------------
# coupling
# ----------------------------------------------------------------------


def _coupling_defaults() -> dict:
    return {"beta": 1.0, "epsilons": [0.5, 0.25], "n_steps": 2000, "c_b": 0.0, "n_proj": 64}


def _run_coupling(cfg: ExperimentConfig, out_dir: Path) -> list[str]:
    objective = cfg.build_objective()
    params = {**_coupling_defaults(), **cfg.protocol}
    (out_dir / "params.json").write_text(canonical_json(params) + "\n")
    artifacts = ["params.json"]
    for i, eps in enumerate(params["epsilons"]):
        res = coupled_compare(
            objective,
            beta=float(params["beta"]),
            epsilon=float(eps),
            n_steps=int(params["n_steps"]),
            trials=cfg.trials,
            seed=cfg.seed + i,
            c_b=float(params["c_b"]),
            n_proj=int(params["n_proj"]),
        )
        _save_cloud(out_dir / f"optimizer_cloud_{i}.npy", res.optimizer_thetas)
        _save_cloud(out_dir / f"sampler_cloud_{i}.npy", res.sampler_thetas)
        artifacts += [f"optimizer_cloud_{i}.npy", f"sampler_cloud_{i}.npy"]
    return artifacts


def _analyze_coupling(cfg: ExperimentConfig, out_dir: Path) -> dict:
    params = {**_coupling_defaults(), **cfg.protocol}
    rows = []
    for i, eps in enumerate(params["epsilons"]):
        a = np.load(out_dir / f"optimizer_cloud_{i}.npy")
        b = np.load(out_dir / f"sampler_cloud_{i}.npy")
        w1 = sliced_wasserstein1(a, b, n_proj=int(params["n_proj"]), rng=cfg.stream(11, i))
        rows.append({"epsilon": float(eps), "sliced_w1": float(w1)})
    _write_csv(
        out_dir / "summary.csv",
        ["epsilon", "sliced_w1"],
        [[r["epsilon"], r["sliced_w1"]] for r in rows],
    )
    return {"table": rows}


# ----------------------------------------------------------------------
# generalization
# ----------------------------------------------------------------------


def _generalization_defaults() -> dict:
    return {
        "n_list": [32, 128, 512],
        "d": 2,
        "noise": 0.5,
        "side": 6.0,
        "n_test": 2048,
        "beta": 50.0,
        "epsilon": 0.005,
        "n_steps": 4000,
        "batch_size": 8,
    }


def make_linreg_with_holdout(
    n: int, n_test: int, d: int, noise: float, seed: int, side: float = 6.0
) -> tuple[LinearRegressionObjective, np.ndarray, np.ndarray]:
    """Train objective on n samples plus a held-out test block from the same
    generator (one draw of n + n_test rows, split deterministically)."""
    rng = RngStream(int(seed), spawn_key=(104729,))
    gen = rng.generator
    total = int(n) + int(n_test)
    X = gen.standard_normal((total, int(d)))
    theta_true = side * (0.25 + 0.5 * gen.random(int(d)))
    y = X @ theta_true + (noise * gen.standard_normal(total) if noise > 0 else 0.0)
    domain = TorusDomain(int(d), side)
    spec = {"seed": int(seed), "noise": float(noise), "side": float(side), "n_test": int(n_test)}
    train = LinearRegressionObjective(X[:n], y[:n], domain, generator_spec=spec)
    return train, X[n:], y[n:]


def _generalization_trial(args) -> tuple[int, int, float, float]:
    cfg_dict, n, trial = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    params = {**_generalization_defaults(), **cfg.protocol}
    dataset_seed = cfg.seed * 1000003 + trial
    train, X_test, y_test = make_linreg_with_holdout(
        n,
        int(params["n_test"]),
        int(params["d"]),
        float(params["noise"]),
        dataset_seed,
        float(params["side"]),
    )
    run_cfg = PoissonSgdConfig(
        beta=float(params["beta"]),
        epsilon=float(params["epsilon"]),
        n_steps=int(params["n_steps"]),
        batch_size=min(int(params["batch_size"]), n),
        seed=dataset_seed,
    )
    result = run_poisson_sgd_ensemble(
        train, run_cfg, 1, rng=RngStream(dataset_seed, spawn_key=(12,))
    )
    theta = result.thetas[0]
    train_risk = float(train.empirical_risk(theta))
    test_risk = float(np.mean(0.5 * (X_test @ theta - y_test) ** 2))
    return n, trial, train_risk, test_risk


def _run_generalization(cfg: ExperimentConfig, out_dir: Path) -> list[str]:
    params = {**_generalization_defaults(), **cfg.protocol}
    (out_dir / "params.json").write_text(canonical_json(params) + "\n")
    jobs = [
        (cfg.to_dict(), int(n), trial)
        for n in params["n_list"]
        for trial in range(cfg.trials)
    ]
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generalization_trial, jobs, chunksize=8))
    else:
        results = [_generalization_trial(job) for job in jobs]
    rows = [[n, trial, train, test] for n, trial, train, test in results]
    rows.sort(key=lambda r: (r[0], r[1]))
    _write_csv(out_dir / "risks.csv", ["n", "trial", "train_risk", "test_risk"], rows)
    return ["params.json", "risks.csv"]


def _analyze_generalization(cfg: ExperimentConfig, out_dir: Path) -> dict:
    params = {**_generalization_defaults(), **cfg.protocol}
    data = np.genfromtxt(out_dir / "risks.csv", delimiter=",", names=True)
    rows = []
    for n in params["n_list"]:
        sel = data[data["n"] == n]
        gaps = sel["test_risk"] - sel["train_risk"]
        rows.append(
            {
                "n": int(n),
                "train_risk": float(sel["train_risk"].mean()),
                "test_risk": float(sel["test_risk"].mean()),
                "gap": float(gaps.mean()),
                "gap_se": float(gaps.std(ddof=1) / np.sqrt(gaps.size)),
            }
        )
    _write_csv(
        out_dir / "summary.csv",
        ["n", "train_risk", "test_risk", "gap", "gap_se"],
        [[r["n"], r["train_risk"], r["test_risk"], r["gap"], r["gap_se"]] for r in rows],
    )
    return {"table": rows}


# ----------------------------------------------------------------------
# baseline
# ----------------------------------------------------------------------


def _baseline_defaults() -> dict:
    return {"algorithm": "sgd", "rate": 0.002, "noise_scale": 0.0, "n_steps": 10000, "batch_size": 0}


def _run_baseline(cfg: ExperimentConfig, out_dir: Path) -> list[str]:
    objective = cfg.build_objective()
    params = {**_baseline_defaults(), **cfg.protocol}
    (out_dir / "params.json").write_text(canonical_json(params) + "\n")
    inits = objective.domain.sample_uniform(cfg.stream(13).generator, cfg.trials)
    _save_cloud(out_dir / "inits.npy", inits)
    noise = float(params["noise_scale"]) if params["algorithm"] == "sgld" else 0.0
    endpoints = _run_sgd_ensemble(
        objective,
        float(params["rate"]),
        int(params["n_steps"]),
        inits,
        cfg.stream(14),
        noise_scale=noise,
        batch_size=int(params["batch_size"]),
    )
    _save_cloud(out_dir / "endpoints.npy", endpoints)
    return ["params.json", "inits.npy", "endpoints.npy"]


def _analyze_baseline(cfg: ExperimentConfig, out_dir: Path) -> dict:
    objective = cfg.build_objective()
    params = {**_baseline_defaults(), **cfg.protocol}
    endpoints = np.load(out_dir / "endpoints.npy")
    risks = np.asarray(objective.empirical_risk(endpoints), dtype=float)
    row = {
        "algorithm": params["algorithm"],
        "mean_final_risk": float(risks.mean()),
        "std_final_risk": float(risks.std(ddof=1)),
    }
    _write_csv(
        out_dir / "summary.csv",
        ["algorithm", "mean_final_risk", "std_final_risk"],
        [[row["algorithm"], row["mean_final_risk"], row["std_final_risk"]]],
    )
    return {"table": [row]}


# ----------------------------------------------------------------------
# dispatch
# ----------------------------------------------------------------------

EXPERIMENT_KINDS = {
    "escape": (_run_escape, _analyze_escape),
    "stationarity": (_run_stationarity, _analyze_stationarity),
    "beta_sweep": (_run_beta_sweep, _analyze_beta_sweep),
    "coupling": (_run_coupling, _analyze_coupling),
    "generalization": (_run_generalization, _analyze_generalization),
    "baseline": (_run_baseline, _analyze_baseline),
}


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Simulate, persist artifacts, then derive the summary from the artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check_manifest(out_dir, cfg)
    runner, _ = EXPERIMENT_KINDS[cfg.kind]
    artifacts = runner(cfg, out_dir)
    seeds = [cfg.seed]
    _write_manifest(out_dir, cfg, seeds, artifacts + ["summary.csv", "summary.json", "plot.py"])
    summary = analyze_experiment(out_dir)
    return summary


def analyze_experiment(out_dir) -> dict:
    """Rebuild every summary table from the persisted artifacts alone."""
    out_dir = Path(out_dir)
    manifest = _load_manifest(out_dir)
    cfg = ExperimentConfig.from_dict(manifest["config"])
    _, analyzer = EXPERIMENT_KINDS[cfg.kind]
    summary = analyzer(cfg, out_dir)
    summary = {"kind": cfg.kind, "config_hash": manifest["config_hash"], **summary}
    (out_dir / "summary.json").write_text(canonical_json(summary) + "\n")
    (out_dir / "plot.py").write_text(_PLOT_STUB)
    return summary
