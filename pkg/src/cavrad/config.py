"""INI run configuration.

Example::

    [mesh]
    source = fibonacci        ; plates | fibonacci | file
    level = 1

    [cavity]
    mode = closed             ; closed | open
    emissivity = 0.8
    eps_rel = 1e-3
    solver = lowrank          ; lowrank | direct

    [time]
    dt = 25
    t_final = 1000

    [initial]
    temperature = 300
    regions = 0:1000          ; per-region overrides

Material properties ``cp`` and ``k`` accept a constant or a table
``T1:v1, T2:v2, ...`` interpolated linearly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .cavity import CLOSED, DIRECT, LOWRANK, OPEN, STEFAN_BOLTZMANN
from .fem import Material
from .solver import NewtonConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    # mesh
    mesh_source: str = "fibonacci"
    mesh_path: str | None = None
    mesh_format: str | None = None
    plates_m: int = 40
    plates_L: float = 1.0
    plates_separation: float = 1.0
    plates_layers: int = 1
    fib_level: int = 1
    fib_body: str = "sphere_like"
    fib_radius: float = 0.55
    fib_scale: float = 1.0
    cavity_tags: tuple = (1,)
    # cavity
    cavity_enabled: bool = True
    mode: str = CLOSED
    t_ambient: float = 300.0
    emissivity: float = 0.8
    eps_rel: float = 1e-3
    n_min: int = 100
    adm_const: float = 2.0
    solver: str = LOWRANK
    memory_budget_gb: float = 2.0
    sigma: float = STEFAN_BOLTZMANN
    # material
    material: Material = field(default_factory=Material)
    # time
    dt: float = 25.0
    t_final: float = 1000.0
    # initial state
    t_initial: float = 300.0
    region_temperatures: tuple = ()
    # Newton-Krylov
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    # output
    output_dir: str = "out"
    vtk_every: int = 10

    def __post_init__(self):
        if self.mesh_source not in ("plates", "fibonacci", "file"):
            raise ConfigError(f"mesh source must be plates, fibonacci or file, not {self.mesh_source!r}")
        if self.mesh_source == "file" and not self.mesh_path:
            raise ConfigError("mesh source 'file' needs a path")
        if self.mode not in (CLOSED, OPEN):
            raise ConfigError(f"cavity mode must be closed or open, not {self.mode!r}")
        if self.solver not in (LOWRANK, DIRECT):
            raise ConfigError(f"solver must be lowrank or direct, not {self.solver!r}")
        if not 0.0 < self.eps_rel < 1.0:
            raise ConfigError("eps_rel must lie in (0, 1)")
        if not 0.0 < self.emissivity <= 1.0:
            raise ConfigError("emissivity must lie in (0, 1]")
        for name in ("dt", "t_final", "t_ambient", "t_initial", "adm_const", "memory_budget_gb", "sigma",
                     "plates_L", "plates_separation", "fib_radius", "fib_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_min < 1 or self.vtk_every < 0:
            raise ConfigError("n_min must be >= 1 and vtk_every >= 0")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("dt must divide t_final")
        if any(t <= 0 for _, t in self.region_temperatures):
            raise ConfigError("temperatures must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def memory_budget(self) -> float:
        return self.memory_budget_gb * 2**30

    def with_(self, **kw) -> "SimulationConfig":
        return replace(self, **kw)


def _property(text: str):
    text = text.strip()
    if ":" not in text:
        return float(text)
    temps, vals = [], []
    for item in text.split(","):
        t, v = item.split(":")
        temps.append(float(t))
        vals.append(float(v))
    return (tuple(temps), tuple(vals))


def _pairs(text: str) -> tuple:
    out = []
    for item in text.split(","):
        if item.strip():
            r, t = item.split(":")
            out.append((int(r), float(t)))
    return tuple(out)


_KEYS = {
    "mesh": {"source": ("mesh_source", str), "path": ("mesh_path", str), "format": ("mesh_format", str),
             "m": ("plates_m", int), "L": ("plates_L", float), "separation": ("plates_separation", float),
             "layers": ("plates_layers", int), "level": ("fib_level", int), "body": ("fib_body", str),
             "radius": ("fib_radius", float), "scale": ("fib_scale", float),
             "cavity_tags": ("cavity_tags", lambda s: tuple(int(v) for v in s.replace(",", " ").split()))},
    "cavity": {"enabled": ("cavity_enabled", "bool"), "mode": ("mode", str), "t_ambient": ("t_ambient", float),
               "emissivity": ("emissivity", float), "eps_rel": ("eps_rel", float), "n_min": ("n_min", int),
               "adm_const": ("adm_const", float), "solver": ("solver", str),
               "memory_budget_gb": ("memory_budget_gb", float), "sigma": ("sigma", float)},
    "time": {"dt": ("dt", float), "t_final": ("t_final", float)},
    "initial": {"temperature": ("t_initial", float), "regions": ("region_temperatures", _pairs)},
    "output": {"directory": ("output_dir", str), "vtk_every": ("vtk_every", int)},
}
_NEWTON = {"abs_tol": float, "rel_tol": float, "max_iters": int, "krylov_rtol": float,
           "krylov_restart": int, "krylov_max_iters": int}


def parse_config(text: str, base_dir: Path | None = None) -> SimulationConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    kw = {}
    try:
        for section in cp.sections():
            sec = cp[section]
            if section in _KEYS:
                for key in sec:
                    if key not in _KEYS[section]:
                        raise ConfigError(f"unknown key [{section}] {key}")
                    name, conv = _KEYS[section][key]
                    kw[name] = sec.getboolean(key) if conv == "bool" else conv(sec[key])
            elif section == "material":
                mat = {}
                for key in sec:
                    if key not in ("rho", "cp", "k"):
                        raise ConfigError(f"unknown key [material] {key}")
                    mat[key] = float(sec[key]) if key == "rho" else _property(sec[key])
                kw["material"] = Material(**mat)
            elif section == "newton":
                nk = {}
                for key in sec:
                    if key not in _NEWTON:
                        raise ConfigError(f"unknown key [newton] {key}")
                    nk[key] = _NEWTON[key](sec[key])
                kw["newton"] = NewtonConfig(**nk)
            else:
                raise ConfigError(f"unknown section [{section}]")
        if base_dir is not None and kw.get("mesh_path") and not Path(kw["mesh_path"]).is_absolute():
            kw["mesh_path"] = str(base_dir / kw["mesh_path"])
        return SimulationConfig(**kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> SimulationConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    return parse_config(path.read_text(), path.parent)
