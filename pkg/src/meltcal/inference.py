"""Bayesian inverse UQ: posterior density, adaptive Metropolis sampling,
and chain post-processing.

The likelihood stacks residuals between measured pool sizes and the GP
surrogate mean over (conditions x selected outputs), with a diagonal
covariance of experimental noise plus the GP predictive variance (the
code-uncertainty term).  Model discrepancy is taken as zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .domain import (
    ExperimentalDataset,
    PARAM_NAMES,
    PARAM_SYMBOLS,
    PriorSpec,
    RandomStream,
)
from .surrogate import GpSurrogate

__all__ = [
    "LikelihoodConfig",
    "PosteriorChain",
    "PosteriorSummary",
    "experimental_sigmas",
    "log_posterior",
    "make_log_posterior",
    "adaptive_metropolis",
    "burn_thin",
    "autocorrelation",
    "effective_sample_size",
    "summarize",
    "potential_scale_reduction",
    "save_chain",
    "load_chain",
]

AM_SCALE = 2.38**2  # canonical adaptive-Metropolis proposal scaling / d
AM_REGULARIZER = 1e-10


@dataclass(frozen=True)
class LikelihoodConfig:
    """Noise rule and output selection for the calibration likelihood."""

    relative_fraction: float = 0.05
    absolute_floor: float = 1e-5  # m
    include_code_uncertainty: bool = True
    outputs: str = "both"  # "length" | "depth" | "both"

    def __post_init__(self):
        if not (0 < self.relative_fraction <= 0.5):
            raise ValueError("relative_fraction must be in (0, 0.5]")
        if self.absolute_floor <= 0:
            raise ValueError("absolute_floor must be positive")
        if self.outputs not in ("length", "depth", "both"):
            raise ValueError("outputs must be 'length', 'depth', or 'both'")


def experimental_sigmas(dataset: ExperimentalDataset,
                        cfg: LikelihoodConfig) -> np.ndarray:
    """(n, 2) measurement standard deviations; explicit per-row sigmas win
    over the relative-fraction rule."""
    sig = np.empty((len(dataset), 2))
    for i, row in enumerate(dataset):
        sig[i, 0] = (row.length_sigma if row.length_sigma is not None
                     else max(cfg.relative_fraction * row.length, cfg.absolute_floor))
        sig[i, 1] = (row.depth_sigma if row.depth_sigma is not None
                     else max(cfg.relative_fraction * row.depth, cfg.absolute_floor))
    return sig


def _output_columns(cfg: LikelihoodConfig) -> list[int]:
    return {"length": [0], "depth": [1], "both": [0, 1]}[cfg.outputs]


def log_posterior(theta: np.ndarray, dataset: ExperimentalDataset,
                  gp_length: GpSurrogate, gp_depth: GpSurrogate,
                  cfg: LikelihoodConfig, prior: PriorSpec) -> float:
    """Unnormalized log posterior at an 8-vector (raw units).

    -inf outside the prior box; inside, a diagonal Gaussian over the
    stacked residuals with variance sigma_exp^2 + var_GP.
    """
    theta = np.asarray(theta, float)
    if np.any(theta < prior.lower()) or np.any(theta > prior.upper()):
        return -np.inf
    designs = dataset.design_matrix()
    rows = np.concatenate([designs, np.tile(theta, (designs.shape[0], 1))], axis=1)
    meas = dataset.measurements()
    sig = experimental_sigmas(dataset, cfg)
    cols = _output_columns(cfg)
    gps = [gp_length, gp_depth]
    total = 0.0
    for c in cols:
        mean, var = gps[c].predict(rows)
        variance = sig[:, c] ** 2
        if cfg.include_code_uncertainty:
            variance = variance + var
        r = meas[:, c] - mean
        total += -0.5 * float(np.log(variance).sum() + (r**2 / variance).sum())
    return total


def make_log_posterior(dataset: ExperimentalDataset, gp_length: GpSurrogate,
                       gp_depth: GpSurrogate, cfg: LikelihoodConfig,
                       prior: PriorSpec) -> Callable[[np.ndarray], float]:
    def target(theta: np.ndarray) -> float:
        return log_posterior(theta, dataset, gp_length, gp_depth, cfg, prior)

    return target


@dataclass(frozen=True)
class PosteriorChain:
    """Every visited state (repeats on rejection included)."""

    samples: np.ndarray      # (steps, d) raw units
    log_post: np.ndarray     # (steps,)
    accepted: np.ndarray     # (steps,) bool, True where the proposal was taken
    adapt_start: int
    seed: int
    stream_id: int
    burn: int = 0
    thin: int = 1

    @property
    def steps(self) -> int:
        return self.samples.shape[0]

    @property
    def acceptance_count(self) -> int:
        return int(self.accepted.sum())

    def acceptance_rate(self, after: int = 0) -> float:
        return float(self.accepted[after:].mean())


def adaptive_metropolis(target: Callable[[np.ndarray], float], init: np.ndarray,
                        steps: int, adapt_start: int, stream: RandomStream,
                        initial_step: np.ndarray | None = None) -> PosteriorChain:
    """Random-walk Metropolis with recursive empirical-covariance adaptation.

    Before ``adapt_start`` the proposal covariance is diagonal
    (initial_step^2 per dimension, defaulting to 1/100 of unit scale
    squared); afterwards it is (2.38^2/d) * running covariance + 1e-10 I,
    updated each step.
    """
    init = np.asarray(init, float)
    d = init.size
    if not (steps > adapt_start >= 100):
        raise ValueError("need steps > adapt_start >= 100")
    lp0 = target(init)
    if not np.isfinite(lp0):
        raise ValueError("target is not finite at the initial state")
    if initial_step is None:
        initial_step = np.full(d, 0.1)
    diag0 = np.asarray(initial_step, float) ** 2

    rng = stream.generator()
    samples = np.empty((steps, d))
    log_post = np.empty(steps)
    accepted = np.zeros(steps, dtype=bool)
    current, lp = init.copy(), lp0

    mean = current.copy()
    cov = np.zeros((d, d))
    chol = None
    for step in range(steps):
        if step < adapt_start or chol is None:
            proposal = current + rng.standard_normal(d) * np.sqrt(diag0)
        else:
            proposal = current + chol @ rng.standard_normal(d)
        lp_prop = target(proposal)
        if np.log(rng.random()) < lp_prop - lp:
            current, lp = proposal, lp_prop
            accepted[step] = True
        samples[step] = current
        log_post[step] = lp
        # recursive mean/covariance over the history including this state
        n = step + 2  # init counts as the first observation
        delta = current - mean
        mean = mean + delta / n
        cov = cov * ((n - 2) / (n - 1) if n > 2 else 0.0) + np.outer(delta, current - mean) / (n - 1)
        if step + 1 >= adapt_start:
            prop_cov = (AM_SCALE / d) * cov + AM_REGULARIZER * np.eye(d)
            try:
                chol = np.linalg.cholesky(prop_cov)
            except np.linalg.LinAlgError:
                chol = None
    return PosteriorChain(samples=samples, log_post=log_post, accepted=accepted,
                          adapt_start=adapt_start, seed=stream.seed,
                          stream_id=stream.stream_id)


def burn_thin(chain: PosteriorChain, burn: int, thin: int) -> PosteriorChain:
    """Drop the first ``burn`` states, then keep every ``thin``-th one."""
    if burn >= chain.steps:
        raise ValueError(f"burn {burn} >= chain length {chain.steps}")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    sel = slice(burn, None, thin)
    return PosteriorChain(samples=chain.samples[sel], log_post=chain.log_post[sel],
                          accepted=chain.accepted[sel],
                          adapt_start=chain.adapt_start, seed=chain.seed,
                          stream_id=chain.stream_id, burn=burn, thin=thin)


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized autocovariance, biased (divide-by-n) convention.

    Returns acf[0..max_lag] with acf[0] = 1.
    """
    series = np.asarray(series, float)
    n = series.size
    if not (n > max_lag >= 1):
        raise ValueError("need series length > max_lag >= 1")
    x = series - series.mean()
    c0 = (x**2).sum() / n
    if c0 == 0.0:
        raise ValueError("autocorrelation undefined for constant series")
    acf = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        acf[k] = (x[: n - k] * x[k:]).sum() / n / c0
    return acf


def effective_sample_size(series: np.ndarray) -> float:
    """ESS via the initial positive sequence on paired autocorrelations."""
    n = series.size
    if np.all(series == series[0]):
        return float(n)
    acf = autocorrelation(series, min(n - 1, 2 * int(np.sqrt(n)) + 50))
    total = 0.0
    t = 1
    while t + 1 < acf.size:
        pair = acf[t] + acf[t + 1]
        if pair <= 0.0:
            break
        total += pair
        t += 2
    ess = n / (1.0 + 2.0 * total)
    return float(min(max(ess, 1.0), n))


@dataclass(frozen=True)
class PosteriorSummary:
    parameters: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    ci_lower: np.ndarray   # 2.5% quantile
    ci_upper: np.ndarray   # 97.5% quantile
    ess: np.ndarray
    correlation: np.ndarray
    retained: int

    def to_dict(self) -> dict:
        return {
            "parameters": list(self.parameters),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "ci_lower": self.ci_lower.tolist(),
            "ci_upper": self.ci_upper.tolist(),
            "ess": self.ess.tolist(),
            "correlation": self.correlation.tolist(),
            "retained": self.retained,
        }


def summarize(chain: PosteriorChain) -> PosteriorSummary:
    """Moments, equal-tailed 95% intervals, ESS, and cross-correlations."""
    x = chain.samples
    n, d = x.shape
    if n < 50:
        raise ValueError(f"need at least 50 retained samples, got {n}")
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    ci_lo = np.quantile(x, 0.025, axis=0)
    ci_hi = np.quantile(x, 0.975, axis=0)
    ess = np.array([effective_sample_size(x[:, j]) for j in range(d)])
    corr = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            if std[i] > 0 and std[j] > 0:
                c = np.cov(x[:, i], x[:, j], ddof=1)[0, 1] / (std[i] * std[j])
            else:
                c = 0.0
            corr[i, j] = corr[j, i] = c
    names = PARAM_NAMES if d == len(PARAM_NAMES) else tuple(f"x{j}" for j in range(d))
    return PosteriorSummary(parameters=names, mean=mean, std=std,
                            ci_lower=ci_lo, ci_upper=ci_hi, ess=ess,
                            correlation=corr, retained=n)


def potential_scale_reduction(chains: list[PosteriorChain]) -> np.ndarray:
    """Gelman-Rubin R-hat per parameter over independent same-length chains.

    Values near 1 indicate between-chain agreement; > 1.1 is the usual
    convergence warning threshold.
    """
    if len(chains) < 2:
        raise ValueError("need at least 2 chains")
    n = chains[0].steps
    if n < 2 or any(c.steps != n for c in chains):
        raise ValueError("chains must share a common length >= 2")
    x = np.stack([c.samples for c in chains])     # (m, n, d)
    means = x.mean(axis=1)                        # (m, d)
    w = x.var(axis=1, ddof=1).mean(axis=0)        # within-chain variance
    b = n * means.var(axis=0, ddof=1)             # between-chain variance
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / w)
    return np.where(w > 0, rhat, 1.0)


_CHAIN_COLUMNS = ["step"] + list(PARAM_SYMBOLS) + ["log_post", "accepted"]


def save_chain(chain: PosteriorChain, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CHAIN_COLUMNS)
        for i in range(chain.steps):
            row = [str(i)] + [format(v, ".12g") for v in chain.samples[i]]
            row += [format(chain.log_post[i], ".12g"), str(int(chain.accepted[i]))]
            writer.writerow(row)
    meta = {"adapt_start": chain.adapt_start, "seed": chain.seed,
            "stream_id": chain.stream_id, "burn": chain.burn, "thin": chain.thin}
    Path(path).with_suffix(".json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_chain(path: str | Path) -> PosteriorChain:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    samples, log_post, accepted = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            samples.append([float(rec[s]) for s in PARAM_SYMBOLS])
            log_post.append(float(rec["log_post"]))
            accepted.append(bool(int(rec["accepted"])))
    return PosteriorChain(samples=np.array(samples), log_post=np.array(log_post),
                          accepted=np.array(accepted, dtype=bool),
                          adapt_start=int(meta["adapt_start"]),
                          seed=int(meta["seed"]), stream_id=int(meta["stream_id"]),
                          burn=int(meta["burn"]), thin=int(meta["thin"]))
