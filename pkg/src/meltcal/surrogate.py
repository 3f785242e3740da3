"""Gaussian-process surrogate per output (length, depth).

Anisotropic squared-exponential kernel, zero mean on standardized targets,
hyperparameters by multi-start maximization of the log marginal likelihood
with analytic gradients.  The predictive variance is the code-uncertainty
term of the calibration likelihood.  Leave-one-out predictions come from
the closed-form identity on the factorized kernel matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .doe import AffineMap, TrainingSet, latin_hypercube
from .domain import RandomStream

__all__ = [
    "IllConditionedError",
    "GpSurrogate",
    "fit_gp",
    "loocv_q2",
    "save_gp",
    "load_gp",
]

JITTER_FLOOR = 1e-10
JITTER_CEILING = 1e-4
LENGTHSCALE_BOUNDS = (1e-3, 1e3)
N_STARTS = 8
GP_FORMAT = 1


class IllConditionedError(np.linalg.LinAlgError):
    """Kernel factorization failed even after jitter escalation."""


def _se_kernel(x1: np.ndarray, x2: np.ndarray, sf2: float,
               ell: np.ndarray) -> np.ndarray:
    d = (x1[:, None, :] - x2[None, :, :]) / ell
    return sf2 * np.exp(-0.5 * np.einsum("ijk,ijk->ij", d, d))


@dataclass(frozen=True)
class GpSurrogate:
    """Trained single-output GP in standardized coordinates."""

    x: np.ndarray            # (N, d) standardized inputs
    y_std: np.ndarray        # (N,) standardized targets
    sf2: float               # signal variance
    ell: np.ndarray          # (d,) length scales
    sn2: float               # noise variance (>= jitter floor)
    chol: np.ndarray         # lower-triangular factor of K + sn2 I
    weights: np.ndarray      # (K + sn2 I)^{-1} y_std
    input_map: AffineMap     # raw 11-vector -> [0, 1]
    y_mean: float            # target destandardization (meters)
    y_scale: float
    output: str              # "length" or "depth"

    def predict(self, x_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean (m) and variance (m^2) at raw-unit 11-vectors.

        Accepts a single vector or an (n, 11) matrix.
        """
        x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
        if not np.all(np.isfinite(x_raw)):
            raise ValueError("prediction inputs must be finite")
        xs = self.input_map.forward(x_raw)
        k_star = _se_kernel(xs, self.x, self.sf2, self.ell)
        mean_std = k_star @ self.weights
        v = solve_triangular(self.chol, k_star.T, lower=True)
        var_std = np.maximum(self.sf2 - np.einsum("ij,ij->j", v, v), 0.0)
        mean = self.y_mean + self.y_scale * mean_std
        var = self.y_scale**2 * var_std
        return mean, var


def _chol_with_escalation(k: np.ndarray, sn2: float) -> tuple[np.ndarray, float]:
    jitter = max(sn2, JITTER_FLOOR)
    while True:
        try:
            return cholesky(k + jitter * np.eye(k.shape[0]), lower=True), jitter
        except np.linalg.LinAlgError:
            if jitter >= JITTER_CEILING:
                raise IllConditionedError(
                    f"kernel matrix not positive definite at jitter {jitter:g}")
            jitter = min(jitter * 10.0, JITTER_CEILING)


def _nlml_and_grad(log_params: np.ndarray, x: np.ndarray, y: np.ndarray,
                   sqdists: np.ndarray) -> tuple[float, np.ndarray]:
    d = x.shape[1]
    log_ell, log_sf2, log_sn2 = log_params[:d], log_params[d], log_params[d + 1]
    ell2 = np.exp(2.0 * log_ell)
    sf2, sn2 = np.exp(log_sf2), np.exp(log_sn2)
    scaled = sqdists / ell2  # (N, N, d)
    k_se = sf2 * np.exp(-0.5 * scaled.sum(axis=2))
    k = k_se + sn2 * np.eye(x.shape[0])
    try:
        low = cholesky(k, lower=True)
    except np.linalg.LinAlgError:
        return 1e12, np.zeros_like(log_params)
    alpha = cho_solve((low, True), y)
    n = y.size
    nlml = (0.5 * y @ alpha + np.log(np.diag(low)).sum()
            + 0.5 * n * np.log(2.0 * np.pi))
    # dNLML/dh = 0.5 tr((K^-1 - aa^T) dK/dh)
    kinv = cho_solve((low, True), np.eye(n))
    m = kinv - np.outer(alpha, alpha)
    grad = np.empty_like(log_params)
    mk = m * k_se
    grad[:d] = 0.5 * np.einsum("ij,ijk->k", mk, scaled)  # d/dlog ell_j
    grad[d] = 0.5 * mk.sum()                              # d/dlog sf2
    grad[d + 1] = 0.5 * sn2 * np.trace(m)                 # d/dlog sn2
    return float(nlml), grad


def nlml(gp_like: tuple, x: np.ndarray, y: np.ndarray) -> float:
    """Negative log marginal likelihood at (log ell..., log sf2, log sn2)."""
    sq = (x[:, None, :] - x[None, :, :]) ** 2
    return _nlml_and_grad(np.asarray(gp_like, float), x, y, sq)[0]


def fit_gp(ts: TrainingSet, output: str, stream: RandomStream) -> GpSurrogate:
    """Train a GP on one output with 8 multi-started local optimizations."""
    if output not in ("length", "depth"):
        raise ValueError("output must be 'length' or 'depth'")
    if ts.n < 10:
        raise ValueError(f"need at least 10 training rows, got {ts.n}")
    x = ts.inputs_std()
    rounded = np.round(x, 12)
    if len({tuple(row) for row in rounded}) != ts.n:
        raise ValueError("duplicate input rows in training set")
    y_raw = ts.outputs[:, 0 if output == "length" else 1]
    y_mean = float(y_raw.mean())
    y_scale = float(y_raw.std(ddof=0))
    if y_scale == 0.0:
        y_scale = 1.0  # constant targets: GP collapses to the constant
    y = (y_raw - y_mean) / y_scale

    d = x.shape[1]
    sqdists = (x[:, None, :] - x[None, :, :]) ** 2
    log_bounds = ([(np.log(LENGTHSCALE_BOUNDS[0]), np.log(LENGTHSCALE_BOUNDS[1]))] * d
                  + [(-10.0, 10.0), (np.log(JITTER_FLOOR), 0.0)])
    starts = latin_hypercube(N_STARTS, d + 2, stream).values * 6.0 - 3.0
    starts[:, d + 1] = -3.0 - 6.0 * ((starts[:, d + 1] + 3.0) / 6.0)  # noise in [-9, -3]

    best = None
    for start in starts:
        start = np.clip(start, [b[0] for b in log_bounds], [b[1] for b in log_bounds])
        res = minimize(_nlml_and_grad, start, args=(x, y, sqdists), jac=True,
                       method="L-BFGS-B", bounds=log_bounds)
        cand_sn2 = np.exp(res.x[d + 1])
        if (best is None or res.fun < best[0] - 1e-9
                or (abs(res.fun - best[0]) <= 1e-9 and cand_sn2 < best[2])):
            best = (res.fun, res.x, cand_sn2)
    log_opt = best[1]
    ell = np.exp(log_opt[:d])
    sf2 = float(np.exp(log_opt[d]))
    sn2 = float(np.exp(log_opt[d + 1]))
    k = _se_kernel(x, x, sf2, ell)
    low, jitter = _chol_with_escalation(k, sn2)
    weights = cho_solve((low, True), y)
    return GpSurrogate(x=x, y_std=y, sf2=sf2, ell=ell, sn2=float(jitter),
                       chol=low, weights=weights, input_map=ts.input_map,
                       y_mean=y_mean, y_scale=y_scale, output=output)


def loocv_q2(gp: GpSurrogate) -> tuple[float, np.ndarray]:
    """Leave-one-out Q2 and per-point residuals (standardized units).

    Uses the closed-form identity mu_{-i} = y_i - [K^-1 y]_i / [K^-1]_ii
    with hyperparameters frozen.
    """
    n = gp.y_std.size
    if n < 3:
        raise ValueError("need at least 3 training points for LOOCV")
    var_y = ((gp.y_std - gp.y_std.mean()) ** 2).sum()
    if var_y == 0.0:
        raise ValueError("Q2 undefined: zero target variance")
    kinv = cho_solve((gp.chol, True), np.eye(n))
    residuals = kinv @ gp.y_std / np.diag(kinv)
    q2 = 1.0 - (residuals**2).sum() / var_y
    return float(q2), residuals


def save_gp(gp: GpSurrogate, path: str | Path) -> None:
    doc = {
        "gp_format": GP_FORMAT,
        "output": gp.output,
        "x": gp.x.tolist(),
        "y_std": gp.y_std.tolist(),
        "sf2": gp.sf2,
        "ell": gp.ell.tolist(),
        "sn2": gp.sn2,
        "input_map": {"lo": gp.input_map.lo.tolist(), "hi": gp.input_map.hi.tolist()},
        "y_mean": gp.y_mean,
        "y_scale": gp.y_scale,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_gp(path: str | Path) -> GpSurrogate:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("gp_format") != GP_FORMAT:
        raise ValueError(f"unsupported gp_format {doc.get('gp_format')!r}")
    x = np.array(doc["x"])
    y = np.array(doc["y_std"])
    ell = np.array(doc["ell"])
    k = _se_kernel(x, x, doc["sf2"], ell)
    low, jitter = _chol_with_escalation(k, doc["sn2"])
    weights = cho_solve((low, True), y)
    return GpSurrogate(x=x, y_std=y, sf2=doc["sf2"], ell=ell, sn2=float(jitter),
                       chol=low, weights=weights,
                       input_map=AffineMap(lo=np.array(doc["input_map"]["lo"]),
                                           hi=np.array(doc["input_map"]["hi"])),
                       y_mean=doc["y_mean"], y_scale=doc["y_scale"],
                       output=doc["output"])
