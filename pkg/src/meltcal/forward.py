"""Forward melt-pool models.

Three interchangeable evaluators map (DesignVars, CalibrationParams) to a
MeltPoolSize:

* a reduced-order transient-conduction model (Gaussian surface source on a
  semi-infinite half-space, superposed in time via the Green's function),
* an external-process adapter for a full simulator, and
* a cached run table replaying stored evaluations.

The reduced model folds melt-pool convection into an effective-conductivity
enhancement driven by the Marangoni number, and folds convective/radiative
surface losses into a scalar absorbed-power correction, so that all eight
calibration parameters influence the predicted pool size.
"""

from __future__ import annotations

import csv
import math
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .domain import (
    CalibrationParams,
    DesignVars,
    MeltPoolSize,
    PARAM_SYMBOLS,
    PhysicalConstants,
)

__all__ = [
    "NumericsError",
    "AdapterError",
    "ReducedModelConfig",
    "ExternalModelSpec",
    "RunTable",
    "ForwardModel",
    "temperature_rise",
    "evaluate_reduced",
    "evaluate_external",
    "lookup_or_evaluate",
    "effective_conductivity",
    "melting_threshold",
]


class NumericsError(ArithmeticError):
    """Non-finite intermediate inside the reduced model."""


class AdapterError(RuntimeError):
    """External simulator invocation or output parsing failed."""


class ForwardModel(Protocol):
    def __call__(self, design: DesignVars, theta: CalibrationParams) -> MeltPoolSize: ...


@dataclass(frozen=True)
class ReducedModelConfig:
    """Closure choices for the reduced conduction model.

    Two closure factors absorb the fluid-flow physics that a pure
    conduction model lacks:

    * ``solid_conductivity_fraction`` scales the calibration conductivity
      (a liquid-enhanced value) down to a solid-phase transport
      coefficient.  Without it the low-power conditions never reach
      melting anywhere in the prior.  Nominal 209.3 * 0.1 ~ 21 W/(m K),
      the handbook solid value for 304 stainless steel near the solidus.
    * ``thermal_mass_fraction`` scales the volumetric heat capacity in the
      transient solve, standing in for advective heat transport into the
      pool.  It leaves the steady-state temperature untouched but speeds
      the transient and deepens the reachable isotherms; without it the
      millisecond pulses are diffusion-limited to pools far shallower than
      the measurements.
    """

    quad_points: int = 64
    search_tolerance: float = 1e-6  # m, bisection tolerance for isotherms
    chi: float = 0.2                # Marangoni enhancement coefficient
    ma_ref: float = 100.0           # Marangoni reference number
    loss_correction: bool = True
    solid_conductivity_fraction: float = 0.1
    thermal_mass_fraction: float = 0.25
    time_samples: int = 33          # extent scan points over [t_p, 2 t_p]

    def __post_init__(self):
        if self.quad_points < 16:
            raise ValueError("quad_points must be >= 16")
        if not (1e-7 <= self.search_tolerance <= 1e-4):
            raise ValueError("search_tolerance must be in [1e-7, 1e-4] m")
        if self.chi < 0:
            raise ValueError("chi must be >= 0")
        if self.ma_ref <= 0:
            raise ValueError("ma_ref must be > 0")
        if not (0 < self.solid_conductivity_fraction <= 1):
            raise ValueError("solid_conductivity_fraction must be in (0, 1]")
        if not (0 < self.thermal_mass_fraction <= 1):
            raise ValueError("thermal_mass_fraction must be in (0, 1]")
        if self.time_samples < 3:
            raise ValueError("time_samples must be >= 3")


def marangoni_number(design: DesignVars, theta: CalibrationParams,
                     constants: PhysicalConstants) -> float:
    a0 = theta.k_l / (constants.density * theta.c_l)
    dT = constants.melt_temperature - constants.ambient_temperature
    return abs(theta.gamma_t) * dT * design.beam_radius / (theta.mu_l * a0)


def effective_conductivity(design: DesignVars, theta: CalibrationParams,
                           constants: PhysicalConstants,
                           cfg: ReducedModelConfig) -> float:
    """Conduction coefficient with the Marangoni convection enhancement."""
    ma = marangoni_number(design, theta, constants)
    enhancement = 1.0 + cfg.chi * math.log1p(ma / cfg.ma_ref)
    return cfg.solid_conductivity_fraction * theta.k_l * enhancement


def loss_fraction(design: DesignVars, theta: CalibrationParams,
                  constants: PhysicalConstants) -> float:
    """Fraction of absorbed power lost to surface convection and radiation."""
    tm, t0 = constants.melt_temperature, constants.ambient_temperature
    flux = (theta.a_h * (tm - t0)
            + constants.stefan_boltzmann * theta.emissivity * (tm**4 - t0**4))
    f = flux * math.pi * design.beam_radius**2 / (theta.alpha * design.power)
    return min(max(f, 0.0), 0.5)


def melting_threshold(theta: CalibrationParams, constants: PhysicalConstants) -> float:
    """Effective melting temperature: liquidus plus the latent-heat penalty."""
    return constants.melt_temperature + theta.latent_heat / theta.c_l


_leggauss_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _leggauss_cache:
        _leggauss_cache[n] = np.polynomial.legendre.leggauss(n)
    return _leggauss_cache[n]


def _absorbed_power(design: DesignVars, theta: CalibrationParams,
                    constants: PhysicalConstants, cfg: ReducedModelConfig) -> float:
    q = theta.alpha * design.power
    if cfg.loss_correction:
        q *= 1.0 - loss_fraction(design, theta, constants)
    return q


def _rise_grid(design: DesignVars, theta: CalibrationParams,
               constants: PhysicalConstants, cfg: ReducedModelConfig,
               r: np.ndarray, z: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Temperature rise above ambient at broadcastable (r, z, t) arrays.

    Superposition of the half-space Gaussian-source Green's function over
    source time.  With elapsed time tau and u = sqrt(tau) the integrand is
    smooth (the 1/sqrt(tau) endpoint singularity cancels), so fixed-order
    Gauss-Legendre in u converges spectrally:

        dT = (4 q / (rho c pi^{3/2} sqrt(a))) *
             int exp(-z^2/(4 a u^2) - 2 r^2/(Rb^2 + 8 a u^2)) / (Rb^2 + 8 a u^2) du
    """
    r, z, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(z, float),
                                  np.asarray(t, float))
    k_eff = effective_conductivity(design, theta, constants, cfg)
    rho_c = cfg.thermal_mass_fraction * constants.density * theta.c_l
    a = k_eff / rho_c
    rb2 = design.beam_radius**2
    q = _absorbed_power(design, theta, constants, cfg)
    c0 = 4.0 * q / (rho_c * math.pi**1.5 * math.sqrt(a))

    # elapsed-time window is [t - t_p, t] clipped at 0
    tau_lo = np.maximum(t - design.pulse_duration, 0.0)
    u_lo = np.sqrt(tau_lo)
    u_hi = np.sqrt(np.maximum(t, 0.0))

    nodes, weights = _leggauss(cfg.quad_points)
    # map [-1, 1] -> [u_lo, u_hi] per evaluation point
    half = 0.5 * (u_hi - u_lo)
    mid = 0.5 * (u_hi + u_lo)
    u = mid[..., None] + half[..., None] * nodes  # (..., n)
    u2 = u * u
    denom = rb2 + 8.0 * a * u2
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = -2.0 * r[..., None] ** 2 / denom
        zz = z[..., None] ** 2
        expo = expo - np.where(u2 > 0, zz / (4.0 * a * np.maximum(u2, 1e-300)), np.inf)
        integrand = np.exp(expo) / denom
    integrand = np.where(u2 > 0, integrand, 0.0)
    if not np.all(np.isfinite(integrand)):
        bad = np.argwhere(~np.isfinite(integrand))[0]
        raise NumericsError(f"non-finite integrand at quadrature node {bad.tolist()}")
    rise = c0 * half * (integrand * weights).sum(axis=-1)
    return np.where(u_hi > u_lo, rise, 0.0)


def temperature_rise(design: DesignVars, theta: CalibrationParams,
                     constants: PhysicalConstants, cfg: ReducedModelConfig,
                     r: float, z: float, t: float) -> float:
    """Temperature (K) at radius r, depth z, time t for one spot weld."""
    if r < 0 or z < 0 or t < 0:
        raise ValueError("r, z, t must be non-negative")
    rise = _rise_grid(design, theta, constants, cfg,
                      np.array(r), np.array(z), np.array(t))
    return float(constants.ambient_temperature + rise)


def _max_extent(design: DesignVars, theta: CalibrationParams,
                constants: PhysicalConstants, cfg: ReducedModelConfig,
                times: np.ndarray, threshold_rise: float, axis: str) -> float:
    """Largest coordinate with rise >= threshold at any scanned time.

    axis='r' probes the surface (z=0); axis='z' probes the centerline (r=0).
    The rise is monotone decreasing along each axis, so bisection is exact.
    Bisections for all scan times run in lockstep.
    """
    def rise_at(x: np.ndarray) -> np.ndarray:
        if axis == "r":
            return _rise_grid(design, theta, constants, cfg, x, np.zeros_like(x), times)
        return _rise_grid(design, theta, constants, cfg, np.zeros_like(x), x, times)

    # exponential bracket growth from the beam radius
    hi = np.full_like(times, design.beam_radius)
    for _ in range(24):
        hot = rise_at(hi) >= threshold_rise
        if not hot.any():
            break
        hi = np.where(hot, hi * 2.0, hi)
    lo = np.zeros_like(times)
    above = rise_at(lo) >= threshold_rise  # melted at origin for these times
    n_iter = int(math.ceil(math.log2(float(hi.max()) / cfg.search_tolerance))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        hot = rise_at(mid) >= threshold_rise
        lo = np.where(hot, mid, lo)
        hi = np.where(hot, hi, mid)
    extents = np.where(above, 0.5 * (lo + hi), 0.0)
    return float(extents.max())


def evaluate_reduced(design: DesignVars, theta: CalibrationParams,
                     constants: PhysicalConstants | None = None,
                     cfg: ReducedModelConfig | None = None) -> MeltPoolSize:
    """Melt-pool length (surface diameter) and depth from the reduced model.

    The melting criterion is the effective threshold T_m + L/c_l; extents
    are the maxima over t in [t_p, 2 t_p] (during the pulse every point
    only heats up, so earlier times never set the maximum).
    """
    constants = constants or PhysicalConstants()
    cfg = cfg or ReducedModelConfig()
    threshold_rise = melting_threshold(theta, constants) - constants.ambient_temperature
    t_p = design.pulse_duration
    peak = _rise_grid(design, theta, constants, cfg,
                      np.array(0.0), np.array(0.0), np.array(t_p))
    if peak < threshold_rise:
        return MeltPoolSize(length=0.0, depth=0.0, melted=False)
    times = np.linspace(t_p, 2.0 * t_p, cfg.time_samples)
    max_r = _max_extent(design, theta, constants, cfg, times, threshold_rise, "r")
    max_z = _max_extent(design, theta, constants, cfg, times, threshold_rise, "z")
    return MeltPoolSize(length=2.0 * max_r, depth=max_z, melted=True)


def reduced_model(constants: PhysicalConstants | None = None,
                  cfg: ReducedModelConfig | None = None) -> ForwardModel:
    """Bind constants/config into the common evaluation contract."""
    constants = constants or PhysicalConstants()
    cfg = cfg or ReducedModelConfig()

    def model(design: DesignVars, theta: CalibrationParams) -> MeltPoolSize:
        return evaluate_reduced(design, theta, constants, cfg)

    return model


@dataclass(frozen=True)
class ExternalModelSpec:
    """How to invoke an out-of-process melt-pool simulator."""

    command_template: str  # must contain {input} and {output} exactly once
    working_dir: Path = field(default_factory=Path.cwd)
    timeout: float = 600.0

    def __post_init__(self):
        for ph in ("{input}", "{output}"):
            if self.command_template.count(ph) != 1:
                raise ValueError(f"command template must contain {ph} exactly once")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def _write_input_file(path: Path, design: DesignVars, theta: CalibrationParams) -> None:
    lines = [f"power_W={design.power:.12g}",
             f"beam_radius_mm={design.beam_radius * 1e3:.12g}",
             f"pulse_ms={design.pulse_duration * 1e3:.12g}"]
    values = theta.as_array()
    lines += [f"{sym}={val:.12g}" for sym, val in zip(PARAM_SYMBOLS, values)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_output_file(path: Path) -> MeltPoolSize:
    kv = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise AdapterError(f"malformed output line {line!r}")
        key, _, val = line.partition("=")
        kv[key.strip()] = val.strip()
    dims = {}
    for key in ("length_mm", "depth_mm"):
        if key not in kv:
            raise AdapterError(f"output file missing key {key!r}")
        try:
            dims[key] = float(kv[key])
        except ValueError:
            raise AdapterError(f"output key {key!r} has non-numeric value {kv[key]!r}") from None
    melted = dims["length_mm"] > 0 and dims["depth_mm"] > 0
    if not melted:
        return MeltPoolSize(length=0.0, depth=0.0, melted=False)
    return MeltPoolSize(length=dims["length_mm"] * 1e-3,
                        depth=dims["depth_mm"] * 1e-3, melted=True)


def evaluate_external(spec: ExternalModelSpec, design: DesignVars,
                      theta: CalibrationParams) -> MeltPoolSize:
    """Run the external simulator once through its key=value file protocol."""
    with tempfile.TemporaryDirectory(dir=spec.working_dir) as tmp:
        tmp = Path(tmp)
        in_path, out_path = tmp / "input.txt", tmp / "output.txt"
        _write_input_file(in_path, design, theta)
        cmd = spec.command_template.format(input=in_path, output=out_path)
        try:
            proc = subprocess.run(shlex.split(cmd), cwd=spec.working_dir,
                                  capture_output=True, text=True,
                                  timeout=spec.timeout)
        except subprocess.TimeoutExpired as exc:
            raise AdapterError(f"external model timed out after {spec.timeout}s: "
                               f"{exc.stdout or ''}{exc.stderr or ''}") from None
        if proc.returncode != 0:
            raise AdapterError(
                f"external model exited with status {proc.returncode}: "
                f"{proc.stdout}{proc.stderr}")
        if not out_path.exists():
            raise AdapterError(f"external model wrote no output file: {proc.stdout}{proc.stderr}")
        return _parse_output_file(out_path)


def external_model(spec: ExternalModelSpec) -> ForwardModel:
    def model(design: DesignVars, theta: CalibrationParams) -> MeltPoolSize:
        return evaluate_external(spec, design, theta)

    return model


def _run_key(design: DesignVars, theta: CalibrationParams) -> tuple:
    vals = np.concatenate([design.as_array(), theta.as_array()])
    return tuple(float(format(v, ".12g")) for v in vals)


class RunTable:
    """CSV-backed cache of forward-model evaluations, keyed to 12 digits."""

    COLUMNS = (["power_W", "beam_radius_mm", "pulse_ms"] + list(PARAM_SYMBOLS)
               + ["length_mm", "depth_mm"])

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._rows: dict[tuple, MeltPoolSize] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != self.COLUMNS:
                raise AdapterError(f"{self.path}: bad run-table header {reader.fieldnames!r}")
            for rec in reader:
                design = DesignVars(power=float(rec["power_W"]),
                                    beam_radius=float(rec["beam_radius_mm"]) * 1e-3,
                                    pulse_duration=float(rec["pulse_ms"]) * 1e-3)
                theta = CalibrationParams.from_array(
                    [float(rec[s]) for s in PARAM_SYMBOLS])
                length = float(rec["length_mm"]) * 1e-3
                depth = float(rec["depth_mm"]) * 1e-3
                melted = length > 0 and depth > 0
                self._rows[_run_key(design, theta)] = MeltPoolSize(
                    length=length if melted else 0.0,
                    depth=depth if melted else 0.0, melted=melted)

    def __len__(self) -> int:
        return len(self._rows)

    def lookup(self, design: DesignVars, theta: CalibrationParams) -> MeltPoolSize | None:
        return self._rows.get(_run_key(design, theta))

    def store(self, design: DesignVars, theta: CalibrationParams,
              size: MeltPoolSize) -> None:
        with self._lock:
            self._rows[_run_key(design, theta)] = size
            if self.path is not None:
                self._persist(design, theta, size)

    def _persist(self, design: DesignVars, theta: CalibrationParams,
                 size: MeltPoolSize) -> None:
        new = not self.path.exists()
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(self.COLUMNS)
            row = [format(design.power, ".12g"),
                   format(design.beam_radius * 1e3, ".12g"),
                   format(design.pulse_duration * 1e3, ".12g")]
            row += [format(v, ".12g") for v in theta.as_array()]
            row += [format(size.length * 1e3, ".12g"), format(size.depth * 1e3, ".12g")]
            writer.writerow(row)


def lookup_or_evaluate(table: RunTable, fallback: ForwardModel,
                       design: DesignVars, theta: CalibrationParams) -> MeltPoolSize:
    """Replay a stored run if present, otherwise evaluate and cache."""
    hit = table.lookup(design, theta)
    if hit is not None:
        return hit
    size = fallback(design, theta)
    table.store(design, theta, size)
    return size


def table_model(table: RunTable, fallback: ForwardModel) -> ForwardModel:
    def model(design: DesignVars, theta: CalibrationParams) -> MeltPoolSize:
        return lookup_or_evaluate(table, fallback, design, theta)

    return model
