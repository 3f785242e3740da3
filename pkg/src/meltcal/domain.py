"""Core data types: design variables, calibration parameters, priors,
experimental dataset I/O, and deterministic random streams.

Internal units are SI (m, s, K).  The dataset CSV keeps mm/ms because that
is how the measurements are tabulated.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DatasetFormatError",
    "DesignVars",
    "CalibrationParams",
    "PriorEntry",
    "PriorSpec",
    "PhysicalConstants",
    "ExperimentRow",
    "ExperimentalDataset",
    "MeltPoolSize",
    "RandomStream",
    "PARAM_NAMES",
    "PARAM_SYMBOLS",
    "load_dataset",
    "write_dataset",
    "bundled_dataset_path",
    "prior_from_table2",
    "in_support",
]

# Calibration parameter order, shared by every array representation.
PARAM_NAMES = (
    "alpha", "a_h", "emissivity", "c_l", "k_l", "latent_heat", "mu_l", "gamma_t",
)
# Symbols used in on-disk key=value / CSV formats.
PARAM_SYMBOLS = ("alpha", "A_h", "epsilon", "c_l", "k_l", "L", "mu_l", "gamma_T")

STEFAN_BOLTZMANN = 5.670374419e-8

CSV_HEADER = ["index", "power_W", "beam_radius_mm", "pulse_ms", "length_mm", "depth_mm"]
CSV_SIGMA_COLS = ["length_sigma_mm", "depth_sigma_mm"]


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files (bad header, bad cell, bad value)."""


@dataclass(frozen=True)
class DesignVars:
    """Controlled experimental settings for one spot weld."""

    power: float           # W
    beam_radius: float     # m
    pulse_duration: float  # s

    def __post_init__(self):
        if not (self.power > 0 and self.beam_radius > 0 and self.pulse_duration > 0):
            raise ValueError("design variables must be strictly positive")
        if self.beam_radius >= 0.01:
            raise ValueError(f"beam_radius {self.beam_radius} m outside spot-weld regime")
        if self.pulse_duration >= 1.0:
            raise ValueError(f"pulse_duration {self.pulse_duration} s outside spot-weld regime")

    def as_array(self) -> np.ndarray:
        return np.array([self.power, self.beam_radius, self.pulse_duration])


@dataclass(frozen=True)
class CalibrationParams:
    """The eight uncertain physical inputs."""

    alpha: float        # laser energy absorption coefficient, dimensionless
    a_h: float          # heat transfer coefficient, W/(m^2 K)
    emissivity: float   # dimensionless
    c_l: float          # specific heat, J/(kg K)
    k_l: float          # effective thermal conductivity, W/(m K)
    latent_heat: float  # J/kg
    mu_l: float         # effective viscosity, kg/(m s)
    gamma_t: float      # thermal capillary coefficient, N/(m K)

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not (0 < self.emissivity <= 1):
            raise ValueError(f"emissivity must be in (0, 1], got {self.emissivity}")
        for name in ("a_h", "c_l", "k_l", "latent_heat", "mu_l"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gamma_t >= 0:
            raise ValueError(f"gamma_t must be negative for this material, got {self.gamma_t}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "CalibrationParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(PARAM_NAMES),):
            raise ValueError(f"expected {len(PARAM_NAMES)} values, got shape {values.shape}")
        return cls(**dict(zip(PARAM_NAMES, values.tolist())))


@dataclass(frozen=True)
class PriorEntry:
    name: str
    nominal: float
    lower_mult: float
    upper_mult: float
    distribution: str = "uniform"

    def __post_init__(self):
        if not (0 < self.lower_mult < self.upper_mult):
            raise ValueError("multipliers must satisfy 0 < lower < upper")

    @property
    def interval(self) -> tuple[float, float]:
        """Realized support, endpoints sorted so negative nominals work."""
        a = self.nominal * self.lower_mult
        b = self.nominal * self.upper_mult
        return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class PriorSpec:
    entries: tuple[PriorEntry, ...]

    def __post_init__(self):
        if len(self.entries) != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} prior entries")
        if tuple(e.name for e in self.entries) != PARAM_NAMES:
            raise ValueError("prior entries must match calibration parameter order")

    def lower(self) -> np.ndarray:
        return np.array([e.interval[0] for e in self.entries])

    def upper(self) -> np.ndarray:
        return np.array([e.interval[1] for e in self.entries])

    def nominal(self) -> np.ndarray:
        return np.array([e.nominal for e in self.entries])

    def nominal_params(self) -> CalibrationParams:
        return CalibrationParams.from_array(self.nominal())

    def std(self) -> np.ndarray:
        """Standard deviation of each uniform marginal."""
        return (self.upper() - self.lower()) / np.sqrt(12.0)


@dataclass(frozen=True)
class PhysicalConstants:
    """Material/ambient constants for 304 stainless steel (configurable)."""

    density: float = 7200.0        # kg/m^3
    melt_temperature: float = 1727.0  # liquidus, K
    ambient_temperature: float = 300.0  # K
    stefan_boltzmann: float = STEFAN_BOLTZMANN

    def __post_init__(self):
        if min(self.density, self.melt_temperature, self.ambient_temperature) <= 0:
            raise ValueError("constants must be positive")
        if self.melt_temperature <= self.ambient_temperature:
            raise ValueError("melt temperature must exceed ambient")
        if self.stefan_boltzmann != STEFAN_BOLTZMANN:
            raise ValueError("Stefan-Boltzmann constant is fixed")


@dataclass(frozen=True)
class ExperimentRow:
    index: int
    design: DesignVars
    length: float  # m
    depth: float   # m
    length_sigma: float | None = None  # m
    depth_sigma: float | None = None   # m


@dataclass(frozen=True)
class ExperimentalDataset:
    rows: tuple[ExperimentRow, ...]

    def __post_init__(self):
        indices = [r.index for r in self.rows]
        if indices != list(range(1, len(self.rows) + 1)):
            raise ValueError("row indices must be unique and contiguous from 1")

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def measurements(self) -> np.ndarray:
        """(n, 2) array of [length, depth] in meters."""
        return np.array([[r.length, r.depth] for r in self.rows])

    def design_matrix(self) -> np.ndarray:
        """(n, 3) array of [power, beam_radius, pulse_duration] in SI."""
        return np.array([r.design.as_array() for r in self.rows])


@dataclass(frozen=True)
class MeltPoolSize:
    length: float  # m (surface pool diameter for a stationary spot weld)
    depth: float   # m
    melted: bool

    def __post_init__(self):
        if not self.melted:
            if self.length != 0.0 or self.depth != 0.0:
                raise ValueError("unmelted pool must have zero dimensions")
        else:
            if not (np.isfinite(self.length) and np.isfinite(self.depth)):
                raise ValueError("melted pool dimensions must be finite")
            if self.length <= 0 or self.depth <= 0:
                raise ValueError("melted pool dimensions must be positive")


def _mix64(x: int) -> int:
    """splitmix64 finalizer; deterministic 64-bit avalanche."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RandomStream:
    """Counter-based (Philox) random stream keyed by (seed, stream id).

    Substreams derive their id by hashing, so parallel work partitions
    deterministically without coordination.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF,
                        self.stream_id & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def split(self, index: int) -> "RandomStream":
        child = _mix64(self.stream_id ^ _mix64(index + 1))
        return RandomStream(self.seed, child)


def bundled_dataset_path() -> Path:
    """Path of the packaged 13-condition spot-weld dataset."""
    return Path(__file__).parent / "data" / "table3.csv"


def _parse_cell(text: str, row_num: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DatasetFormatError(
            f"row {row_num}, column {col!r}: non-numeric value {text!r}") from None


def load_dataset(path: str | Path) -> ExperimentalDataset:
    """Read a measurement CSV (mm/ms units on disk, SI in memory)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        has_sigma = header == CSV_HEADER + CSV_SIGMA_COLS
        if not has_sigma and header != CSV_HEADER:
            raise DatasetFormatError(
                f"{path}: bad header {header!r}; expected {CSV_HEADER} "
                f"optionally followed by {CSV_SIGMA_COLS}")
        cols = CSV_HEADER + CSV_SIGMA_COLS if has_sigma else CSV_HEADER
        rows = []
        for row_num, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(cols):
                raise DatasetFormatError(
                    f"{path}: row {row_num} has {len(cells)} cells, expected {len(cols)}")
            vals = {c: _parse_cell(v, row_num, c) for c, v in zip(cols, cells)}
            for meas in ("length_mm", "depth_mm"):
                if vals[meas] <= 0:
                    raise DatasetFormatError(
                        f"{path}: row {row_num}, column {meas!r}: "
                        f"non-positive measurement {vals[meas]}")
            design = DesignVars(power=vals["power_W"],
                                beam_radius=vals["beam_radius_mm"] * 1e-3,
                                pulse_duration=vals["pulse_ms"] * 1e-3)
            rows.append(ExperimentRow(
                index=int(vals["index"]),
                design=design,
                length=vals["length_mm"] * 1e-3,
                depth=vals["depth_mm"] * 1e-3,
                length_sigma=vals["length_sigma_mm"] * 1e-3 if has_sigma else None,
                depth_sigma=vals["depth_sigma_mm"] * 1e-3 if has_sigma else None,
            ))
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    return ExperimentalDataset(rows=tuple(rows))


def _fmt(x: float) -> str:
    return format(x, ".12g")


def write_dataset(dataset: ExperimentalDataset, path: str | Path) -> None:
    has_sigma = all(r.length_sigma is not None and r.depth_sigma is not None
                    for r in dataset.rows)
    cols = CSV_HEADER + CSV_SIGMA_COLS if has_sigma else CSV_HEADER
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in dataset.rows:
        cells = [str(r.index), _fmt(r.design.power), _fmt(r.design.beam_radius * 1e3),
                 _fmt(r.design.pulse_duration * 1e3), _fmt(r.length * 1e3),
                 _fmt(r.depth * 1e3)]
        if has_sigma:
            cells += [_fmt(r.length_sigma * 1e3), _fmt(r.depth_sigma * 1e3)]
        writer.writerow(cells)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# Nominal values and multiplicative bounds for the 8 calibration parameters.
_PRIOR_TABLE = (
    ("alpha", 0.27, 0.5, 1.5),
    ("a_h", 100.0, 0.8, 1.2),
    ("emissivity", 0.59, 0.5, 1.5),
    ("c_l", 837.4, 0.9, 1.1),
    ("k_l", 209.3, 0.9, 1.1),
    ("latent_heat", 2.5e5, 0.9, 1.1),
    ("mu_l", 0.1, 0.5, 2.0),
    ("gamma_t", -4.3e-4, 0.9, 1.1),
)


def prior_from_table2() -> PriorSpec:
    """Uniform prior over the 8 parameters: nominal times [lo, hi] multipliers."""
    return PriorSpec(entries=tuple(
        PriorEntry(name=n, nominal=v, lower_mult=lo, upper_mult=hi)
        for n, v, lo, hi in _PRIOR_TABLE))


def in_support(theta: CalibrationParams | np.ndarray, prior: PriorSpec) -> bool:
    """True iff every component lies in its realized closed interval."""
    vec = theta.as_array() if isinstance(theta, CalibrationParams) else np.asarray(theta)
    return bool(np.all(vec >= prior.lower()) and np.all(vec <= prior.upper()))
