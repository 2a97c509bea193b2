"""Run configuration: TOML loading, validation, hashing.

A RunConfig pins every numeric knob of a pipeline run; its hash (over
the canonical JSON form) keys binary caches and is embedded in every
output file so reruns are attributable and byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                       # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .families import FAMILY_BUILDERS

__all__ = ["RunConfig", "load_config", "config_from_dict"]

#: families backed by an explicit model kernel (gamma/solve support)
KERNEL_FAMILIES = {
    "heisenberg_nonsmooth": "heisenberg",
    "heisenberg_model": "heisenberg",
    "kolmogorov_nonsmooth": "kolmogorov",
    "kolmogorov_model": "kolmogorov",
}


@dataclass(frozen=True)
class RunConfig:
    family: str
    family_params: dict = field(default_factory=dict)
    patch_center: tuple = (0.0, 0.0, 0.0)
    patch_radius: float = 0.5
    grid_shape: tuple = (8, 8, 8)
    fine_shape: tuple = (24, 24, 24)
    rho_excl: float = None          # None -> grid default (2 cells)
    phi_R: float = None             # None -> 4 * patch_radius
    mc_samples: int = 4096
    seed: int = 0
    series_tol: float = 1e-3
    j_max: int = 14
    rel_step: float = 1e-3
    ode_step: float = 0.125
    newton_tol: float = 1e-12
    output_dir: str = "runs"

    def __post_init__(self):
        if self.family not in FAMILY_BUILDERS:
            raise ConfigError(
                f"unknown family {self.family!r}; available: "
                + ", ".join(sorted(FAMILY_BUILDERS)))
        if not (0.0 < self.patch_radius):
            raise ConfigError("patch_radius must be positive")
        if self.phi_R is not None and self.phi_R < 4.0 * self.patch_radius:
            raise ConfigError(
                f"phi_R = {self.phi_R} violates phi_R >= 4 * patch_radius "
                f"= {4.0 * self.patch_radius}")
        for name in ("grid_shape", "fine_shape"):
            if any(int(n) <= 0 for n in getattr(self, name)):
                raise ConfigError(f"{name} entries must be positive")
        if any(int(n) % 2 for n in self.grid_shape):
            # odd midpoint lattices place nodes on the coefficient kink
            # planes, where kernel flow-differences are unstable
            raise ConfigError("grid_shape entries must be even")
        if self.mc_samples <= 0 or self.j_max < 2:
            raise ConfigError("mc_samples must be > 0 and j_max >= 2")
        if not (0.0 < self.rel_step < 0.1):
            raise ConfigError("rel_step out of range (0, 0.1)")

    @property
    def phi_R_effective(self) -> float:
        return (4.0 * self.patch_radius if self.phi_R is None
                else float(self.phi_R))

    @property
    def kernel_name(self):
        return KERNEL_FAMILIES.get(self.family)

    def canonical_json(self) -> str:
        d = asdict(self)
        d["patch_center"] = list(self.patch_center)
        d["grid_shape"] = [int(n) for n in self.grid_shape]
        d["fine_shape"] = [int(n) for n in self.fine_shape]
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


_TUPLE_KEYS = {"patch_center", "grid_shape", "fine_shape"}


def config_from_dict(data: dict) -> RunConfig:
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_KEYS:
            value = tuple(value)
        kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return config_from_dict(data)
