"""Seeded trials, aggregation across trials and CSV persistence."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from cbmp.cbmp import build_round_state
from cbmp.cme import CMERoundState, Kernels, MatchedDataset
from cbmp.environments import (
    EnvironmentSpec,
    get_setting,
    sample_context,
    sample_intermediate,
    sample_ultimate,
    sample_unmatched_prior,
)
from cbmp.gp_regression import UnmatchedDataset
from cbmp.kernels import KernelSpec, SingularMatrixError
from cbmp.policies import BetaSchedule, ConstantBeta, LogarithmicBeta, PosteriorStats, beta_at, random_select, ucb_select

logger = logging.getLogger(__name__)

ALGORITHMS = ("CBMP-UCB", "CME-UCB", "Random")

TRIAL_COLUMNS = ["setting", "algorithm", "trial", "round", "context", "action",
                 "intermediate", "ultimate", "cumulative"]
AGGREGATE_COLUMNS = ["setting", "algorithm", "round", "mean_cumulative", "q05", "q95", "n_trials"]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


class TrialError(RuntimeError):
    pass


@dataclass(frozen=True)
class MedianHeuristic:
    every: int = 10


@dataclass(frozen=True)
class FixedLengthscales:
    context: float = 1.0
    action: float = 1.0
    reward: float = 1.0


LengthscalePolicy = MedianHeuristic | FixedLengthscales


@dataclass(frozen=True)
class ExperimentConfig:
    setting: str = "A"
    algorithm: str = "CBMP-UCB"
    rounds: int = 100
    trials: int = 100
    unmatched_size: int = 0
    lam: float = 0.1
    lam_f: float = 0.1
    jitter: float = 1e-6
    # prior variance rk(u, u) of the nuclear kernel; None keeps the plain
    # self-convolution of the unit-amplitude reward kernel
    nuclear_variance: float | None = 1.0
    beta: BetaSchedule = field(default_factory=ConstantBeta)
    lengthscale: LengthscalePolicy = field(default_factory=MedianHeuristic)
    seed: int = 0

    def __post_init__(self):
        try:
            get_setting(self.setting)
        except ValueError as exc:
            raise ConfigError(f"setting: {exc}") from None
        object.__setattr__(self, "setting", self.setting.upper())
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name, lo in (("rounds", 1), ("trials", 1), ("unmatched_size", 0)):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                raise ConfigError(f"{name}: must be an integer >= {lo}, got {v!r}")
        for name in ("lam", "lam_f"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive")
        if not self.jitter >= 0:
            raise ConfigError("jitter: must be non-negative")
        if self.nuclear_variance is not None and not self.nuclear_variance > 0:
            raise ConfigError("nuclear_variance: must be positive or null")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed: must be an integer")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["beta"] = _tagged(self.beta)
        d["lengthscale"] = _tagged(self.lengthscale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
        d = dict(d)
        if "beta" in d:
            d["beta"] = _untag("beta", d["beta"], {"constant": ConstantBeta, "logarithmic": LogarithmicBeta})
        if "lengthscale" in d:
            d["lengthscale"] = _untag("lengthscale", d["lengthscale"],
                                      {"median": MedianHeuristic, "fixed": FixedLengthscales})
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be an object")
        return cls.from_dict(d)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_KINDS = {ConstantBeta: "constant", LogarithmicBeta: "logarithmic",
          MedianHeuristic: "median", FixedLengthscales: "fixed"}


def _tagged(obj) -> dict:
    return {"kind": _KINDS[type(obj)], **dataclasses.asdict(obj)}


def _untag(name: str, value, classes: dict):
    if not isinstance(value, dict) or value.get("kind") not in classes:
        raise ConfigError(f"{name}: expected an object with kind in {sorted(classes)}")
    params = {k: v for k, v in value.items() if k != "kind"}
    try:
        return classes[value["kind"]](**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def median_heuristic(points) -> float:
    """Median of the strictly positive pairwise Euclidean distances."""
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    iu = np.triu_indices(p.shape[0], k=1)
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))[iu]
    dist = dist[dist > 0]
    return float(np.median(dist)) if dist.size else 1.0


@dataclass(frozen=True, eq=False)
class TrialRecord:
    setting: str
    algorithm: str
    trial: int
    seed: int
    contexts: np.ndarray
    actions: np.ndarray
    intermediate: np.ndarray  # (T, d_r)
    ultimate: np.ndarray
    cumulative: np.ndarray
    wall_time: np.ndarray = field(compare=False, repr=False)
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return self.ultimate.shape[0]

    def __eq__(self, other) -> bool:
        # bit-level equality of the logged data; timings and diagnostics excluded
        if not isinstance(other, TrialRecord):
            return NotImplemented
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name))
                   for f in dataclasses.fields(self) if f.compare)

    __hash__ = None

    def rows(self):
        for t in range(len(self)):
            yield {
                "setting": self.setting,
                "algorithm": self.algorithm,
                "trial": self.trial,
                "round": t + 1,
                "context": repr(float(self.contexts[t])),
                "action": repr(float(self.actions[t])),
                "intermediate": ";".join(repr(float(v)) for v in self.intermediate[t]),
                "ultimate": repr(float(self.ultimate[t])),
                "cumulative": repr(float(self.cumulative[t])),
            }


def make_kernels(config: ExperimentConfig, ls: FixedLengthscales, dim: int) -> Kernels:
    if config.algorithm == "CME-UCB":
        return Kernels(KernelSpec.matern52(ls.context), KernelSpec.matern52(ls.action), KernelSpec.se(ls.reward))
    nuclear = None
    if config.nuclear_variance is not None:
        # base amplitude giving rk(u, u) = nuclear_variance
        amp = np.sqrt(config.nuclear_variance / (np.sqrt(np.pi) * ls.reward) ** dim)
        nuclear = KernelSpec.se(ls.reward, amp).nuclear()
    return Kernels(KernelSpec.se(ls.context), KernelSpec.se(ls.action), KernelSpec.se(ls.reward), nuclear)


def _update_lengthscales(current: FixedLengthscales, d1: MatchedDataset, d2: UnmatchedDataset) -> FixedLengthscales:
    def pick(points, old):
        return median_heuristic(points) if len(points) >= 2 else old
    rewards = np.vstack([d1.intermediate, d2.intermediate])
    return FixedLengthscales(pick(d1.contexts, current.context), pick(d1.actions, current.action),
                             pick(rewards, current.reward))


def posterior_stats(config: ExperimentConfig, d1: MatchedDataset, d2: UnmatchedDataset,
                    kernels: Kernels, s_t: float, grid: np.ndarray) -> PosteriorStats:
    if config.algorithm == "CBMP-UCB":
        state = build_round_state(d1, d2, kernels, config.lam, config.lam_f, config.jitter, [s_t])
    else:
        state = CMERoundState.build(d1, d2, kernels, config.lam, config.lam_f, [s_t])
    mean, std = state.stats(grid)
    return PosteriorStats(mean, std)


def run_trial(config: ExperimentConfig, trial_index: int, env: EnvironmentSpec | None = None) -> TrialRecord:
    env = env or get_setting(config.setting)
    seed = config.seed + trial_index
    rng = np.random.default_rng(seed)
    grid = env.action_grid

    d2 = UnmatchedDataset.empty(env.dim)
    for _ in range(config.unmatched_size):
        r = sample_unmatched_prior(env, rng)
        d2 = d2.append(r, sample_ultimate(env, r, rng))
    d1 = MatchedDataset.empty(1, 1, env.dim)

    ls = config.lengthscale if isinstance(config.lengthscale, FixedLengthscales) else FixedLengthscales()
    every = config.lengthscale.every if isinstance(config.lengthscale, MedianHeuristic) else None

    T = config.rounds
    contexts, actions, ys, times = np.empty(T), np.empty(T), np.empty(T), np.empty(T)
    inter = np.empty((T, env.dim))
    fallbacks = 0
    for t in range(1, T + 1):
        start = time.perf_counter()
        s_t = sample_context(env, rng)
        if config.algorithm == "Random" or len(d1) == 0 or len(d2) == 0:
            idx = random_select(grid.size, rng)
            fallbacks += config.algorithm != "Random"
        else:
            if every is not None and (t - 1) % every == 0:
                ls = _update_lengthscales(ls, d1, d2)
            try:
                stats = posterior_stats(config, d1, d2, make_kernels(config, ls, env.dim), s_t, grid)
                idx = ucb_select(stats, beta_at(config.beta, t, grid.size))
            except (SingularMatrixError, ValueError) as exc:
                raise TrialError(f"trial {trial_index} round {t}: {exc}") from exc
        a_t = float(grid[idx])
        r_t = sample_intermediate(env, s_t, a_t, rng)
        y_t = sample_ultimate(env, r_t, rng)
        d1 = d1.append(s_t, a_t, r_t)
        d2 = d2.append(r_t, y_t)
        contexts[t - 1], actions[t - 1], inter[t - 1], ys[t - 1] = s_t, a_t, r_t, y_t
        times[t - 1] = time.perf_counter() - start
    return TrialRecord(env.setting, config.algorithm, trial_index, seed, contexts, actions,
                       inter, ys, np.cumsum(ys), times,
                       {"fallbacks": fallbacks, "final_d1": len(d1), "final_d2": len(d2)})


@dataclass(frozen=True)
class AggregateResult:
    setting: str
    algorithm: str
    mean: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    terminal: np.ndarray  # per-trial cumulative reward at the last round
    failed: tuple = ()

    @property
    def n_trials(self) -> int:
        return self.terminal.shape[0]

    def rows(self):
        for t in range(self.mean.shape[0]):
            yield {"setting": self.setting, "algorithm": self.algorithm, "round": t + 1,
                   "mean_cumulative": repr(float(self.mean[t])), "q05": repr(float(self.q05[t])),
                   "q95": repr(float(self.q95[t])), "n_trials": self.n_trials}


def aggregate(records: list[TrialRecord], failed=()) -> AggregateResult:
    if not records:
        raise ValueError("no completed trials to aggregate")
    cum = np.vstack([r.cumulative for r in records])
    return AggregateResult(records[0].setting, records[0].algorithm, cum.mean(axis=0),
                           np.percentile(cum, 5, axis=0), np.percentile(cum, 95, axis=0),
                           cum[:, -1].copy(), tuple(failed))


def _run_one(args):
    config, index = args
    try:
        return index, run_trial(config, index), None
    except TrialError as exc:
        return index, None, str(exc)


def run_trials(config: ExperimentConfig, workers: int = 1) -> tuple[list[TrialRecord], list[tuple[int, str]]]:
    jobs = [(config, i) for i in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    records = [rec for _, rec, _ in results if rec is not None]
    failed = [(i, msg) for i, rec, msg in results if rec is None]
    for i, msg in failed:
        logger.error("trial %d failed: %s", i, msg)
    return records, failed


def write_csv(path: Path, columns: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def trial_csv_name(config: ExperimentConfig, trial: int) -> str:
    return f"trial_{config.setting}_{config.algorithm}_m{config.unmatched_size}_{trial:03d}.csv"


def aggregate_csv_name(config: ExperimentConfig) -> str:
    return f"aggregate_{config.setting}_{config.algorithm}_m{config.unmatched_size}.csv"


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None,
                   workers: int = 1) -> AggregateResult:
    """Run every trial of ``config``; write per-trial and aggregate CSVs to ``out_dir``."""
    records, failed = run_trials(config, workers)
    if failed:
        warnings.warn(f"{len(failed)} of {config.trials} trials failed; aggregating the rest",
                      RuntimeWarning, stacklevel=2)
    result = aggregate(records, failed)
    if out_dir is not None:
        out = Path(out_dir)
        for rec in records:
            write_csv(out / trial_csv_name(config, rec.trial), TRIAL_COLUMNS, rec.rows())
        write_csv(out / aggregate_csv_name(config), AGGREGATE_COLUMNS, result.rows())
    return result


def read_aggregate_csv(path: str | Path) -> AggregateResult:
    """Load an aggregate CSV; per-trial terminal values are not stored there."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != AGGREGATE_COLUMNS:
            raise ValueError(f"{path}: expected columns {AGGREGATE_COLUMNS}, got {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    n = int(rows[0]["n_trials"])
    return AggregateResult(rows[0]["setting"], rows[0]["algorithm"], col("mean_cumulative"),
                           col("q05"), col("q95"), np.full(n, np.nan))


@dataclass(frozen=True)
class Comparison:
    mean_difference: float
    welch_t: float
    dof: float
    p_greater: float  # one-sided p-value for mean(A) > mean(B)


def aggregate_compare(result_a: AggregateResult, result_b: AggregateResult) -> Comparison:
    if result_a.mean.shape != result_b.mean.shape:
        raise ValueError("results cover different numbers of rounds")
    x, y = result_a.terminal, result_b.terminal
    diff = float(x.mean() - y.mean())
    if x.size < 2 or y.size < 2:
        raise ValueError("Welch test needs at least two trials per result")
    vx, vy = x.var(ddof=1) / x.size, y.var(ddof=1) / y.size
    if vx + vy == 0:
        t = 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
        return Comparison(diff, t, float(x.size + y.size - 2), 0.5 if diff == 0 else float(diff < 0))
    res = sps.ttest_ind(x, y, equal_var=False, alternative="greater")
    dof = (vx + vy) ** 2 / (vx**2 / (x.size - 1) + vy**2 / (y.size - 1))
    return Comparison(diff, float(res.statistic), float(dof), float(res.pvalue))
