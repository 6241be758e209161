"""File formats: binary container, column and observation text files, experiment config.

The binary container is little-endian throughout::

    magic      8 bytes   b"LVARBIN\\0"
    version    uint32
    kind       8 bytes   ASCII, NUL padded ("grid", "bcov", "cvt", ...)
    n_arrays   uint32
    per array:
      name     16 bytes  ASCII, NUL padded
      ndim     uint32
      dims     ndim x uint64
      data     prod(dims) x float64, row-major
"""

import configparser
import csv
import dataclasses
import struct
from dataclasses import dataclass
from io import StringIO
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .covariance import CvtSpec, VerticalCovariance, factor_vertical_sqrt
from .errors import ConfigError, FileFormatError
from .obs_operator import LightningOperatorParams
from .osse import OsseSpec
from .thermo import AtmosColumn
from .toy_model import GridState
from .var1d import LightningObservation, PseudoObservation, RetrievalConfig
from .var_nd import SCHEMES, AnalysisConfig, CycleSettings

MAGIC = b"LVARBIN\0"
VERSION = 1

COLUMN_HEADER = ["pressure_pa", "temperature_k", "mixing_ratio_kgkg", "height_m"]
OBS_HEADER = ["i", "j", "time_min", "flash_rate"]


# ------------------------------------------------------------------ container


def _pad(text: str, width: int) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{text!r} longer than {width} bytes")
    return raw.ljust(width, b"\0")


def write_container(path, kind: str, arrays: Dict[str, np.ndarray]):
    """Write named float arrays under a kind tag."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(_pad(kind, 8))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(_pad(name, 16))
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes(order="C"))


def read_container(path, expect_kind: Optional[str] = None) -> Tuple[str, Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise FileFormatError(f"{path}: not a lightvar container")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FileFormatError(f"{path}: truncated container")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported container version {version}")
    kind = take(8).rstrip(b"\0").decode("ascii")
    if expect_kind is not None and kind != expect_kind:
        raise FileFormatError(f"{path}: holds {kind!r}, expected {expect_kind!r}")
    (n_arrays,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(n_arrays):
        name = take(16).rstrip(b"\0").decode("ascii")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(float)
    if pos != len(data):
        raise FileFormatError(f"{path}: trailing bytes after last array")
    return kind, arrays


def _need(arrays, names, path):
    missing = [n for n in names if n not in arrays]
    if missing:
        raise FileFormatError(f"{path}: missing arrays {missing}")


def write_grid_state(path, state: GridState):
    write_container(path, "grid", {
        "pressure": state.pressure, "height": state.height,
        "temperature": state.temperature, "mixing_ratio": state.mixing_ratio})


def read_grid_state(path) -> GridState:
    _, a = read_container(path, "grid")
    _need(a, ("pressure", "height", "temperature", "mixing_ratio"), path)
    return GridState(a["pressure"], a["height"], a["temperature"], a["mixing_ratio"])


def write_covariance(path, cov: VerticalCovariance):
    write_container(path, "bcov", {"matrix": cov.matrix})


def read_covariance(path) -> VerticalCovariance:
    _, a = read_container(path, "bcov")
    _need(a, ("matrix",), path)
    return VerticalCovariance.from_matrix(a["matrix"])


def write_cvt(path, cvt: CvtSpec):
    write_container(path, "cvt", {
        "vertical_sqrt": cvt.vertical_sqrt,
        "variance_scale": cvt.variance_scale,
        "filter": np.array([cvt.horizontal_lengthscale, cvt.filter_passes], dtype=float)})


def read_cvt(path) -> CvtSpec:
    _, a = read_container(path, "cvt")
    _need(a, ("vertical_sqrt", "variance_scale", "filter"), path)
    length, passes = a["filter"]
    return CvtSpec(a["vertical_sqrt"], float(length), int(passes), a["variance_scale"])


# ------------------------------------------------------------------ text files


def _read_rows(path, header: List[str]):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows or [c.strip() for c in rows[0]] != header:
        raise FileFormatError(f"{path}: header must be {', '.join(header)}")
    try:
        return [[float(c) for c in r] for r in rows[1:]]
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from None


def write_column(path, column: AtmosColumn):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMN_HEADER)
        for row in zip(column.pressure, column.temperature,
                       column.vapor_mixing_ratio, column.geopotential_height):
            w.writerow([repr(float(v)) for v in row])


def read_column(path) -> AtmosColumn:
    rows = _read_rows(path, COLUMN_HEADER)
    if any(len(r) != 4 for r in rows):
        raise FileFormatError(f"{path}: every row needs four values")
    if len(rows) < 2:
        raise FileFormatError(f"{path}: a column needs at least two levels")
    p, t, q, z = (np.array(c) for c in zip(*rows))
    return AtmosColumn(p, t, q, z)


def write_observations(path, obs: Sequence[LightningObservation]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OBS_HEADER)
        for o in obs:
            w.writerow([o.cell[0], o.cell[1], repr(float(o.time)), repr(float(o.flash_rate))])


def read_observations(path, sigma0: float = 1.0) -> List[LightningObservation]:
    rows = _read_rows(path, OBS_HEADER)
    out = []
    for r in rows:
        if len(r) != 4:
            raise FileFormatError(f"{path}: every row needs four values")
        i, j, t, y = r
        if i != int(i) or j != int(j):
            raise FileFormatError(f"{path}: cell indices must be integers")
        out.append(LightningObservation((int(i), int(j)), y, t, sigma0))
    return out


def write_pseudo_observations(directory, pseudo: Sequence[PseudoObservation],
                              reference: GridState):
    """One column file per retrieved cell, named ``col_i_j_tMMM.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for po in pseudo:
        i, j = po.cell
        col = reference.column(i, j).with_temperature(po.temperature)
        path = directory / f"col_{i}_{j}_t{int(round(po.time)):04d}.csv"
        write_column(path, col)
        paths.append(path)
    return paths


# ------------------------------------------------------------------ experiment config


def _osse_field_defaults():
    return {f.name: f.default for f in dataclasses.fields(OsseSpec)}


_OSSE = _osse_field_defaults()
_OPERATOR = dataclasses.asdict(LightningOperatorParams())
_RETRIEVAL = dataclasses.asdict(RetrievalConfig())
_ANALYSIS = dataclasses.asdict(AnalysisConfig())

# keys of OsseSpec that live in the grid and model sections
_GRID_KEYS = ("nx", "ny", "n_levels", "z_top")
_MODEL_KEYS = ("wind_u", "wind_v", "steps_per_hour")

DEFAULTS: Dict[str, Dict[str, object]] = {
    "grid": {k: _OSSE[k] for k in _GRID_KEYS},
    "model": {k: _OSSE[k] for k in _MODEL_KEYS},
    "covariance": {"mode_fraction": 0.99, "horizontal_lengthscale": 2.0,
                   "filter_passes": 4},
    "operator": dict(_OPERATOR, sigma0=1.0),
    "scheme": {"name": "1d4dvar", "n_cycles": 2, "cycle_hours": 1, "forecast_hours": 0},
    "window": {"slots": 2, "outer_loops": _ANALYSIS["outer_loops"],
               "max_iterations": _ANALYSIS["max_iterations"],
               "gradient_norm_reduction_target": _ANALYSIS["gradient_norm_reduction_target"]},
    "qc": {"min_improvement": _RETRIEVAL["min_improvement"], "innovation_cap": 10.0,
           "pseudo_obs_std": _RETRIEVAL["pseudo_obs_std"],
           "max_iterations": _RETRIEVAL["max_iterations"],
           "gradient_norm_reduction_target": _RETRIEVAL["gradient_norm_reduction_target"]},
    "osse": {k: v for k, v in _OSSE.items()
             if k not in _GRID_KEYS + _MODEL_KEYS + ("seed",)},
}

_POSITIVE = {
    ("operator", "coefficient"), ("operator", "slope"), ("operator", "offset"),
    ("operator", "exponent"), ("operator", "cape_min"), ("operator", "sigma0"),
    ("qc", "min_improvement"), ("qc", "innovation_cap"), ("qc", "pseudo_obs_std"),
    ("qc", "max_iterations"), ("qc", "gradient_norm_reduction_target"),
    ("covariance", "mode_fraction"), ("covariance", "horizontal_lengthscale"),
    ("window", "slots"), ("window", "outer_loops"), ("window", "max_iterations"),
    ("window", "gradient_norm_reduction_target"),
    ("scheme", "n_cycles"), ("scheme", "cycle_hours"),
}


def _parse(raw: str, like, where: str):
    try:
        if isinstance(like, tuple):
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != len(like):
                raise ValueError(f"expected {len(like)} comma-separated values")
            return tuple(_parse(p, e, where) for p, e in zip(parts, like))
        if isinstance(like, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        return raw
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings; every threshold in effect is a key."""

    values: Dict[str, Dict[str, object]]

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({s: dict(kv) for s, kv in DEFAULTS.items()})

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        values = {s: dict(kv) for s, kv in DEFAULTS.items()}
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"{source}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                values[section][key] = _parse(raw, DEFAULTS[section][key],
                                              f"{source} [{section}] {key}")
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_text(path.read_text(), str(path))

    def validate(self):
        for section, key in _POSITIVE:
            if not self.values[section][key] > 0:
                raise ConfigError(f"[{section}] {key} must be positive")
        if self.values["scheme"]["name"] not in SCHEMES:
            raise ConfigError(f"[scheme] name must be one of {', '.join(SCHEMES)}")
        if self.values["covariance"]["mode_fraction"] > 1:
            raise ConfigError("[covariance] mode_fraction must not exceed 1")
        if self.values["window"]["slots"] < 1:
            raise ConfigError("[window] slots must be at least 1")
        try:
            self.osse_spec(0)
            self.model()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, kv in self.values.items():
            parser[section] = {k: _format(v) for k, v in kv.items()}
        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()

    def as_dict(self) -> Dict[str, Dict[str, object]]:
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()}
                for s, kv in self.values.items()}

    def __getitem__(self, section):
        return self.values[section]

    # builders for the library objects

    def osse_spec(self, seed: int) -> OsseSpec:
        kw = dict(self.values["osse"])
        kw.update({k: self.values["grid"][k] for k in _GRID_KEYS})
        kw.update({k: self.values["model"][k] for k in _MODEL_KEYS})
        return OsseSpec(seed=seed, **kw)

    def model(self):
        return self.osse_spec(0).model_config()

    def operator_params(self) -> LightningOperatorParams:
        op = self.values["operator"]
        return LightningOperatorParams(**{k: op[k] for k in _OPERATOR})

    @property
    def sigma0(self) -> float:
        return float(self.values["operator"]["sigma0"])

    def retrieval_config(self) -> RetrievalConfig:
        qc = self.values["qc"]
        return RetrievalConfig(max_iterations=qc["max_iterations"],
                               gradient_norm_reduction_target=qc["gradient_norm_reduction_target"],
                               min_improvement=qc["min_improvement"],
                               pseudo_obs_std=qc["pseudo_obs_std"])

    def analysis_config(self) -> AnalysisConfig:
        w = self.values["window"]
        return AnalysisConfig(w["max_iterations"], w["gradient_norm_reduction_target"],
                              w["outer_loops"])

    def cycle_settings(self, threads: int = 1) -> CycleSettings:
        return CycleSettings(cycle_hours=self.values["scheme"]["cycle_hours"],
                             window_slots=self.values["window"]["slots"],
                             innovation_cap=self.values["qc"]["innovation_cap"],
                             pseudo_obs_std=self.values["qc"]["pseudo_obs_std"],
                             retrieval=self.retrieval_config(),
                             analysis=self.analysis_config(),
                             threads=threads)

    def cvt(self, bcov: VerticalCovariance) -> CvtSpec:
        c = self.values["covariance"]
        return CvtSpec(factor_vertical_sqrt(bcov, c["mode_fraction"]),
                       horizontal_lengthscale=c["horizontal_lengthscale"],
                       filter_passes=c["filter_passes"])
