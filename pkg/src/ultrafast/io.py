"""Binary array files, JSON experiment configs and grayscale heatmaps.

Array file layout::

    b"UFARRAY1\\n"                magic
    uint64 little-endian          header length in bytes
    header                        UTF-8 JSON, keys sorted
    payload                       little-endian float64 values, row-major;
                                  complex values as (real, imag) pairs

The header records ``dtype``, ``shape``, ``axes``, ``units``, free-form
``provenance`` and the SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .params import AcquisitionParams

__all__ = [
    "ArrayFormatError",
    "ChecksumError",
    "ShapeError",
    "ConfigError",
    "ArrayFile",
    "write_array",
    "read_array",
    "MediumSpec",
    "FlowSpec",
    "SimulationSpec",
    "ReconSpec",
    "ExperimentConfig",
    "load_config",
    "save_config",
    "write_heatmap",
]

MAGIC = b"UFARRAY1\n"
SCHEMA_VERSION = 1
_DTYPES = {"complex128": np.dtype("<c16"), "float64": np.dtype("<f8")}


class ArrayFormatError(ValueError):
    """Malformed array file."""


class ChecksumError(ArrayFormatError):
    """The payload does not match the checksum in the header."""


class ShapeError(ArrayFormatError):
    """The payload size does not match the declared shape and dtype."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ArrayFile:
    data: np.ndarray
    axes: tuple = ()
    units: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        self.data = data.astype(complex if np.iscomplexobj(data) else float)
        self.axes = tuple(self.axes)

    @property
    def dtype_name(self):
        return "complex128" if np.iscomplexobj(self.data) else "float64"


def _payload(data, dtype_name):
    return np.ascontiguousarray(data, dtype=_DTYPES[dtype_name]).tobytes()


def write_array(path, array_file):
    """Write ``array_file`` to ``path``; the parent directory must exist."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"directory {path.parent} does not exist")
    af = array_file if isinstance(array_file, ArrayFile) else ArrayFile(array_file)
    payload = _payload(af.data, af.dtype_name)
    header = {
        "dtype": af.dtype_name,
        "shape": list(af.data.shape),
        "axes": list(af.axes),
        "units": af.units,
        "provenance": af.provenance,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "schema_version": SCHEMA_VERSION,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload)


def read_array(path):
    """Read and validate an array file.

    Raises
    ------
    ChecksumError
        If the payload hash differs from the header's.
    ShapeError
        If the payload length disagrees with ``shape`` and ``dtype``.
    """
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC) or len(raw) < len(MAGIC) + 8:
        raise ArrayFormatError("not an array file")
    (n,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArrayFormatError(f"unreadable header: {exc}") from exc
    payload = raw[start + n:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ChecksumError("payload checksum mismatch")
    if header.get("dtype") not in _DTYPES:
        raise ArrayFormatError(f"unsupported dtype {header.get('dtype')!r}")
    dtype = _DTYPES[header["dtype"]]
    shape = tuple(int(s) for s in header["shape"])
    if len(payload) != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
        raise ShapeError(f"payload of {len(payload)} bytes does not fit shape {list(shape)} of {header['dtype']}")
    data = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return ArrayFile(data, tuple(header.get("axes", ())), header.get("units", {}), header.get("provenance", {}))


@dataclass
class MediumSpec:
    """Particle media.  Vessels are dicts with ``start``, ``end``, ``radius``."""

    box: list = field(default_factory=lambda: [-2.5e-3, 17.5e-3, 5e-3, 5e-3])
    density_per_mm2: float = 200.0
    C_b: float = 1.0
    C_c: float = 5.0
    sigma: float = 2.5e-5
    v_max: float = 1e-2
    vessels: list = field(default_factory=lambda: [
        {"start": [0.0, 17.5e-3], "end": [0.0, 22.5e-3], "radius": 5e-4}])


@dataclass
class FlowSpec:
    """Tissue motion: either a mean speed for the default drift, or explicit ``w`` terms."""

    mean_speed: float = 1e-2
    w: dict | None = None


@dataclass
class SimulationSpec:
    n_frames: int = 128
    prf: float = 1000.0
    seed: int = 0
    noise_levels: list = field(default_factory=lambda: [0.0, 0.025, 0.05, 0.075])
    grid_n: int = 64
    kernel: str = "sinc"


@dataclass
class ReconSpec:
    K: int = 20
    sweep: list = field(default_factory=lambda: [0, 5, 10, 15, 20, 25, 30, 40])


def _acquisition_dict(params):
    # frame rate and count live in the simulation section
    skip = ("grid", "prf", "n_frames")
    data = {f.name: getattr(params, f.name) for f in fields(params) if f.name not in skip}
    data["theta_list"] = list(data["theta_list"])
    return data


@dataclass
class ExperimentConfig:
    acquisition: dict = field(default_factory=lambda: _acquisition_dict(AcquisitionParams()))
    medium: MediumSpec = field(default_factory=MediumSpec)
    flow: FlowSpec = field(default_factory=FlowSpec)
    simulation: SimulationSpec = field(default_factory=SimulationSpec)
    recon: ReconSpec = field(default_factory=ReconSpec)
    psf: dict = field(default_factory=lambda: {
        "half_width": 1e-3, "depth": 0.02, "F_sweep": [0.2, 0.3, 0.4, 0.5],
        "theta_sweep": [0.0, 0.1, 0.25], "audit_depths": [0.01, 0.02, 0.03, 0.05],
        "compounded_exact": True})
    inputs: dict = field(default_factory=dict)
    output_dir: str = "out"
    schema_version: int = SCHEMA_VERSION

    def params(self):
        acq = dict(self.acquisition)
        acq["theta_list"] = tuple(acq.get("theta_list", (0.0,)))
        acq["prf"] = self.simulation.prf
        acq["n_frames"] = self.simulation.n_frames
        return AcquisitionParams(**acq)

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema_version}")
        if self.medium.density_per_mm2 <= 0:
            raise ConfigError("particle density must be positive")
        if any(p < 0 for p in self.simulation.noise_levels):
            raise ConfigError("noise levels must be nonnegative")
        if self.recon.K < 0:
            raise ConfigError("K must be nonnegative")
        for name, path in self.inputs.items():
            if not Path(path).exists():
                raise ConfigError(f"input {name!r} not found: {path}")
        try:
            self.params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        parts = {"medium": MediumSpec, "flow": FlowSpec, "simulation": SimulationSpec, "recon": ReconSpec}
        kwargs = {}
        for key, value in data.items():
            if key in parts:
                try:
                    kwargs[key] = parts[key](**value)
                except TypeError as exc:
                    raise ConfigError(f"bad {key} section: {exc}") from exc
            elif key == "acquisition":
                base = _acquisition_dict(AcquisitionParams())
                extra = set(value) - set(base)
                if extra:
                    raise ConfigError(f"unknown acquisition keys: {sorted(extra)}")
                kwargs[key] = {**base, **value}
            elif key == "psf":
                kwargs[key] = {**cls().psf, **value}
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)


def load_config(path):
    return ExperimentConfig.from_json(Path(path).read_text()).validate()


def save_config(config, path):
    Path(path).write_text(config.to_json())


def write_heatmap(path, image, vmin=None, vmax=None, units="", title=""):
    """Write a binary 8-bit PGM and a ``.json`` sidecar with the gray scale.

    Values are mapped linearly from ``[vmin, vmax]`` to ``[0, 255]``;
    non-finite values map to 0.
    """
    path = Path(path)
    image = np.asarray(image, dtype=float)
    finite = image[np.isfinite(image)]
    vmin = float(finite.min()) if vmin is None and finite.size else (0.0 if vmin is None else float(vmin))
    vmax = float(finite.max()) if vmax is None and finite.size else (1.0 if vmax is None else float(vmax))
    span = vmax - vmin if vmax > vmin else 1.0
    scaled = np.where(np.isfinite(image), (image - vmin) / span, 0.0)
    pixels = np.clip(np.round(255 * scaled), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    sidecar = {"colormap": "gray", "vmin": vmin, "vmax": vmax, "units": units, "title": title,
               "shape": list(pixels.shape), "row_axis": "z", "col_axis": "x"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
