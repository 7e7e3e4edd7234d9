"""Robot configuration: geometry, material, fluid, and drag parameters."""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass


class ConfigError(ValueError):
    """Raised when a configuration is invalid or cannot be parsed."""


@dataclass
class RobotConfig:
    """All physical and numerical parameters of one robot instance (SI units).

    Shear modulus defaults to E/3 (near-incompressible tail material) when
    not given explicitly.
    """

    N: int = 2                      # number of tails
    l: float = 0.11                 # tail length [m]
    r0: float = 3.2e-3              # tail cross-section radius [m]
    R: float = 0.016                # head radius [m]
    L_head: float = 0.06            # head length [m]
    E: float = 1.2e6                # Young's modulus [Pa]
    G: float = None                 # shear modulus [Pa]; None -> E/3
    mu0: float = 1.49               # bulk fluid viscosity [Pa s]
    C_t: float = 4.0                # translation drag prefactor
    C_r: float = 2.06               # rotation drag prefactor
    C_yr: float = 6.0               # interface lateral-force prefactor
    nodes_per_tail: int = 11
    dt: float = None                # time step [s]; None -> 1e-3 * time scale
    rigid_multiplier: float = 1.0e4
    rho_line: float = None          # tail mass per length [kg/m]; None -> glycerin-matched
    head_mass: float = None         # lumped head mass [kg]; None -> displaced glycerin
    interface_h: float = None       # interface offset h [m]; None -> 0.7 R
    interface_k: float = 20.0       # interface sharpness (dimensionless)
    spoke_length: float = None      # disc spoke length [m]; None -> R

    _FLUID_DENSITY = 1260.0         # glycerin [kg/m^3], used only for default masses

    def __post_init__(self):
        if self.G is None:
            self.G = self.E / 3.0
        if self.interface_h is None:
            self.interface_h = 0.7 * self.R
        if self.spoke_length is None:
            self.spoke_length = self.R
        if self.rho_line is None:
            self.rho_line = self._FLUID_DENSITY * math.pi * self.r0 ** 2
        if self.head_mass is None:
            self.head_mass = self._FLUID_DENSITY * math.pi * self.R ** 2 * self.L_head
        if self.dt is None:
            self.dt = 1.0e-3 * self.time_scale()
        self.validate()

    def validate(self):
        if self.N < 2:
            raise ConfigError(f"N must be >= 2, got {self.N}")
        if self.nodes_per_tail < 3:
            raise ConfigError(f"nodes_per_tail must be >= 3, got {self.nodes_per_tail}")
        for name in ("l", "r0", "R", "L_head", "E", "G", "mu0", "dt",
                     "rho_line", "head_mass", "spoke_length"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l / self.r0 <= 1.0:
            raise ConfigError("l/r0 must exceed 1 for the RFT log terms to be positive")
        if self.rigid_multiplier < 1.0e3:
            raise ConfigError("rigid_multiplier must be >= 1e3")

    # Cross-section stiffnesses of a soft tail segment.
    def EA(self):
        return self.E * math.pi * self.r0 ** 2

    def EI(self):
        return math.pi * self.E * self.r0 ** 4 / 4.0

    def GJ(self):
        return math.pi * self.G * self.r0 ** 4 / 2.0

    def time_scale(self):
        """Intrinsic elasto-viscous time scale mu0 l^4 / EI [s]."""
        return self.mu0 * self.l ** 4 / self.EI()

    def replace(self, **kwargs) -> "RobotConfig":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Key names used in config files carry unit suffixes to prevent unit bugs.
_FIELD_KEYS = {
    "N": ("robot", "n_tails"),
    "l": ("robot", "tail_length_m"),
    "r0": ("robot", "tail_radius_m"),
    "R": ("robot", "head_radius_m"),
    "L_head": ("robot", "head_length_m"),
    "E": ("robot", "youngs_modulus_pa"),
    "G": ("robot", "shear_modulus_pa"),
    "mu0": ("fluid", "viscosity_pa_s"),
    "C_t": ("drag", "c_t"),
    "C_r": ("drag", "c_r"),
    "C_yr": ("drag", "c_yr"),
    "interface_h": ("fluid", "interface_offset_m"),
    "interface_k": ("fluid", "interface_sharpness"),
    "nodes_per_tail": ("numerics", "nodes_per_tail"),
    "dt": ("numerics", "dt_s"),
    "rigid_multiplier": ("numerics", "rigid_multiplier"),
    "rho_line": ("robot", "tail_mass_per_length_kg_m"),
    "head_mass": ("robot", "head_mass_kg"),
    "spoke_length": ("robot", "spoke_length_m"),
}
_INT_FIELDS = {"N", "nodes_per_tail"}


def config_to_text(config: RobotConfig) -> str:
    parser = configparser.ConfigParser()
    for field, (section, key) in _FIELD_KEYS.items():
        if not parser.has_section(section):
            parser.add_section(section)
        value = getattr(config, field)
        parser.set(section, key, repr(int(value)) if field in _INT_FIELDS else repr(float(value)))
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def config_from_text(text: str) -> RobotConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    kwargs = {}
    for field, (section, key) in _FIELD_KEYS.items():
        if not parser.has_option(section, key):
            raise ConfigError(f"missing config field [{section}] {key}")
        raw = parser.get(section, key)
        try:
            kwargs[field] = int(raw) if field in _INT_FIELDS else float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
    return RobotConfig(**kwargs)


def save_config(config: RobotConfig, path):
    with open(path, "w") as fh:
        fh.write(config_to_text(config))


def load_config(path) -> RobotConfig:
    with open(path) as fh:
        return config_from_text(fh.read())


def preset(name: str) -> RobotConfig:
    """Named parameter presets for the two published drag-coefficient triples."""
    if name == "fitted_sec2":
        return RobotConfig(N=4, l=0.11, C_t=4.0, C_r=2.06, C_yr=6.0)
    if name == "control_sec4":
        return RobotConfig(N=2, l=0.11, C_t=3.0, C_r=2.8, C_yr=2.0)
    raise ConfigError(f"unknown preset {name!r} (expected 'fitted_sec2' or 'control_sec4')")
