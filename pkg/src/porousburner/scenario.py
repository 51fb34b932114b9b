"""Scenario configuration: file format, presets, and setup construction.

Configs are sectioned key=value text (INI syntax) with units spelled out in
the key names.  Any omitted physical constant falls back to the built-in
burner defaults, and the loader logs every default it applies.  Three
presets reproduce the published burner cases: `paper-a` (low-porosity
preheat region against a high-porosity combustion region), `paper-b`
(uniformly low porosity) and `paper-c` (uniformly high porosity).
"""
from __future__ import annotations

import configparser
import io
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import meshing
from .physics import (GasProperties, MaterialField, ReactionModel,
                      SolidProperties, TemperatureCoefficient)
from .timeloop import (IgnitionSource, Ramp, Schedule, SimulationSetup,
                       TimeControls)

log = logging.getLogger(__name__)

PRESET_NAMES = ("paper-a", "paper-b", "paper-c")


class ConfigError(Exception):
    """Malformed or physically invalid scenario configuration."""


@dataclass
class GeometryConfig:
    width_m: float = 0.15
    height_m: float = 0.10
    interface_x1_m: float | None = 0.08
    wall_split_x1_m: float = 0.08


@dataclass
class MeshConfig:
    nx: int = 60
    ny: int = 40
    levels: int = 2
    quality_margin_deg: float = 1.0
    file: str | None = None


@dataclass
class GasConfig:
    viscosity_pa_s: float = 3.18e-5
    molecular_weight_kg_per_mol: float = 0.028
    heat_capacity_j_per_kg_k: tuple[float, ...] = (1005.0,)
    conductivity_w_per_k_m: float = 0.049
    diffusion_kg_per_m_s: float = 8.2e-5


@dataclass
class SolidConfig:
    density_kg_per_m3: tuple[float, ...] = (3970.0,)
    heat_capacity_j_per_kg_k: tuple[float, ...] = (765.0,)
    conductivity_w_per_k_m: float = 36.0


@dataclass
class ReactionConfig:
    frequency_factor_per_s: float = 1.8e8
    activation_energy_j_per_mol: float = 125600.0
    heat_of_reaction_j_per_kg: float = 5.0e7
    enabled: bool = True


@dataclass
class MaterialConfig:
    porosity: float
    permeability_m2: float
    ergun_constant: float = 0.55


@dataclass
class InitialConfig:
    pressure_squared_pa2: float = 10266755625.0
    temperature_k: float = 298.0
    mass_fraction: float = 0.0


@dataclass
class ScheduleConfig:
    inflow_ramp_start_s: float = 50.0
    inflow_ramp_end_s: float = 60.0
    inflow_flux_kg_per_m2_s: float = -0.2
    inflow_fraction: float = 0.05
    ignition_off_time_s: float = 150.0
    wall_cooling_on_time_s: float = 150.0
    wall_h_preheat_w_per_m2_k: float = 1500.0
    wall_h_combustion_w_per_m2_k: float = 100.0
    ambient_temperature_k: float = 298.0


@dataclass
class IgnitionConfig:
    enabled: bool = True
    x1_m: float = 0.1
    x2_m: float = 0.07
    radius_m: float = 0.005
    strength_w: float = 1.0e5
    mode: str = "point"


@dataclass
class TimeConfig:
    t_end_s: float = 5000.0
    dt_initial_s: float = 0.5
    dt_min_s: float = 1e-3
    dt_max_s: float = 10.0
    dt_growth: float = 1.2
    tol_picard: float = 1e-6
    max_picard: int = 12
    steady_temp_rate_k_per_s: float = 1e-3
    steady_fraction_rate_per_s: float = 1e-6
    steady_consecutive: int = 5


@dataclass
class OutputConfig:
    directory: str = "out"
    csv_name: str = "timeseries.csv"
    vtk_interval_s: float = 500.0
    figures: bool = True
    fields: tuple[str, ...] = ("T", "y", "S", "p", "rho", "u", "rate")


@dataclass
class Scenario:
    """Complete, validated description of one simulation run."""

    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    gas: GasConfig = field(default_factory=GasConfig)
    solid: SolidConfig = field(default_factory=SolidConfig)
    reaction: ReactionConfig = field(default_factory=ReactionConfig)
    materials: dict[str, MaterialConfig] = field(default_factory=lambda: {
        "preheat": MaterialConfig(0.3, 1e-8),
        "combustion": MaterialConfig(0.8, 1e-7)})
    initial: InitialConfig = field(default_factory=InitialConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    ignition: IgnitionConfig = field(default_factory=IgnitionConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self):
        g = self.geometry
        if g.width_m <= 0 or g.height_m <= 0:
            raise ConfigError("[geometry] width_m/height_m must be positive")
        names = set(self.materials)
        if names not in ({"all"}, {"preheat", "combustion"}):
            raise ConfigError(
                "[materials.*] needs either a single 'all' section or both "
                f"'preheat' and 'combustion'; got {sorted(names)}")
        if names == {"preheat", "combustion"} and g.interface_x1_m is None:
            raise ConfigError("two material regions need [geometry] interface_x1_m")
        for name, m in self.materials.items():
            if not 0.0 < m.porosity < 1.0:
                raise ConfigError(f"[materials.{name}] porosity must lie in (0, 1)")
            if m.permeability_m2 <= 0:
                raise ConfigError(f"[materials.{name}] permeability_m2 must be positive")
        if self.initial.pressure_squared_pa2 <= 0:
            raise ConfigError("[initial] pressure_squared_pa2 must be positive")
        if self.initial.temperature_k <= 0:
            raise ConfigError("[initial] temperature_k must be positive")
        if self.schedule.inflow_flux_kg_per_m2_s > 0:
            raise ConfigError("[schedule] inflow_flux_kg_per_m2_s must be <= 0 "
                              "(flux is outward-normal at the inflow boundary)")
        if self.schedule.inflow_ramp_end_s < self.schedule.inflow_ramp_start_s:
            raise ConfigError("[schedule] inflow ramp times must be ordered")
        if self.time.dt_min_s <= 0 or self.time.dt_max_s < self.time.dt_min_s:
            raise ConfigError("[time] dt bounds must satisfy 0 < dt_min_s <= dt_max_s")
        if self.ignition.mode not in ("point", "volumetric"):
            raise ConfigError("[ignition] mode must be 'point' or 'volumetric'")
        return self


_SECTION_TYPES = {
    "geometry": GeometryConfig,
    "mesh": MeshConfig,
    "gas": GasConfig,
    "solid": SolidConfig,
    "reaction": ReactionConfig,
    "initial": InitialConfig,
    "schedule": ScheduleConfig,
    "ignition": IgnitionConfig,
    "time": TimeConfig,
    "output": OutputConfig,
}


def _parse_value(section, key, raw, like):
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(like, int) and not isinstance(like, bool):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple) and all(isinstance(v, float) for v in like):
            vals = tuple(float(v) for v in raw.split())
            if not vals:
                raise ValueError(raw)
            return vals
        if isinstance(like, tuple):
            return tuple(raw.split())
        if like is None or isinstance(like, str):
            return raw.strip()
    except ValueError:
        pass
    kindname = type(like).__name__ if like is not None else "str"
    raise ConfigError(f"[{section}] {key}: expected {kindname} "
                      f"(units are part of the key name), got {raw!r}")


def load_config(source) -> Scenario:
    """Load a Scenario from a config file path, config text, or `preset:<name>`.

    Unknown keys and sections are rejected; missing values fall back to the
    burner defaults and each applied default is logged.
    """
    if isinstance(source, str) and source.startswith("preset:"):
        return preset(source.split(":", 1)[1])
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if isinstance(source, str) and "\n" not in source and "=" not in source:
            with open(source, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        elif isinstance(source, str):
            parser.read_string(source)
        else:
            parser.read_file(source)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc

    scenario = Scenario(materials={})
    seen_material = False
    for section in parser.sections():
        if section.startswith("materials."):
            name = section.split(".", 1)[1]
            if name not in ("all", "preheat", "combustion"):
                raise ConfigError(f"unknown material region {name!r} "
                                  "(expected all, preheat or combustion)")
            fields = {}
            for key, raw in parser.items(section):
                if key not in MaterialConfig.__dataclass_fields__:
                    raise ConfigError(f"[{section}] unknown key {key!r}")
                fields[key] = _parse_value(section, key, raw, 0.0)
            if "porosity" not in fields or "permeability_m2" not in fields:
                raise ConfigError(f"[{section}] needs porosity and permeability_m2")
            scenario.materials[name] = MaterialConfig(**fields)
            seen_material = True
            continue
        cls = _SECTION_TYPES.get(section)
        if cls is None:
            raise ConfigError(f"unknown config section [{section}]")
        target = getattr(scenario, section)
        for key, raw in parser.items(section):
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            like = getattr(target, key)
            if key in ("file",) and like is None:
                like = ""
            if key == "interface_x1_m":
                like = 0.0
            setattr(target, key, _parse_value(section, key, raw, like))
    if not seen_material:
        scenario.materials = {"preheat": MaterialConfig(0.3, 1e-8),
                              "combustion": MaterialConfig(0.8, 1e-7)}
        log.info("config: [materials.*] missing, using burner defaults")
    defaults = Scenario()
    for name in _SECTION_TYPES:
        if not parser.has_section(name):
            log.info("config: [%s] missing, using defaults %s", name,
                     asdict(getattr(defaults, name)))
    return scenario.validate()


def save_config(scenario: Scenario) -> str:
    """Serialize a Scenario back to config text (round-trips load_config)."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, _ in _SECTION_TYPES.items():
        obj = getattr(scenario, section)
        parser[section] = {}
        for key, value in asdict(obj).items():
            if value is None:
                continue
            if isinstance(value, tuple):
                parser[section][key] = " ".join(repr(v) if isinstance(v, float)
                                                else str(v) for v in value)
            elif isinstance(value, float):
                parser[section][key] = repr(value)
            else:
                parser[section][key] = str(value)
    for name, mat in scenario.materials.items():
        sec = f"materials.{name}"
        parser[sec] = {k: repr(v) for k, v in asdict(mat).items()}
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def preset(name: str) -> Scenario:
    """Built-in burner cases: interface stabilization (a), uniform low
    porosity / extinction (b), uniform high porosity / flashback (c)."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; available: {PRESET_NAMES}")
    scenario = Scenario()
    if name == "paper-a":
        scenario.materials = {"preheat": MaterialConfig(0.3, 1e-8),
                              "combustion": MaterialConfig(0.8, 1e-7)}
        scenario.time.t_end_s = 5000.0
    elif name == "paper-b":
        scenario.materials = {"all": MaterialConfig(0.3, 1e-8)}
        scenario.time.t_end_s = 1000.0
    else:
        scenario.materials = {"all": MaterialConfig(0.8, 1e-7)}
        scenario.time.t_end_s = 1000.0
    return scenario.validate()


def build_setup(scenario: Scenario, use_multigrid=True) -> SimulationSetup:
    """Materialize meshes, physics and schedules from a validated Scenario."""
    geo = scenario.geometry
    if scenario.mesh.file:
        meshes = [meshing.load_mesh_text(
            scenario.mesh.file, quality_margin_deg=scenario.mesh.quality_margin_deg)]
        for _ in range(scenario.mesh.levels):
            meshes.append(meshing.refine_uniform(meshes[-1]))
    else:
        levels = scenario.mesh.levels
        base_nx = max(3, scenario.mesh.nx // (2 ** levels))
        base_ny = max(2, scenario.mesh.ny // (2 ** levels))
        interfaces = []
        if geo.interface_x1_m is not None:
            interfaces.append(geo.interface_x1_m)
        if geo.wall_split_x1_m not in interfaces and 0 < geo.wall_split_x1_m < geo.width_m:
            interfaces.append(geo.wall_split_x1_m)
        region_fn = None
        if "all" not in scenario.materials:
            xi = geo.interface_x1_m
            region_fn = lambda c: 0 if c[0] < xi else 1
        meshes = meshing.build_hierarchy(
            geo.width_m, geo.height_m, base_nx, base_ny, levels,
            region_fn=region_fn, interfaces=interfaces,
            quality_margin_deg=scenario.mesh.quality_margin_deg)

    if "all" in scenario.materials:
        mat = scenario.materials["all"]
        region_ids = sorted(set(int(r) for m in meshes for r in np.unique(m.regions)))
        materials = MaterialField(
            porosity={r: mat.porosity for r in region_ids},
            permeability={r: mat.permeability_m2 for r in region_ids},
            ergun_constant={r: mat.ergun_constant for r in region_ids})
    else:
        pre = scenario.materials["preheat"]
        com = scenario.materials["combustion"]
        materials = MaterialField(
            porosity={0: pre.porosity, 1: com.porosity},
            permeability={0: pre.permeability_m2, 1: com.permeability_m2},
            ergun_constant={0: pre.ergun_constant, 1: com.ergun_constant})

    gas = GasProperties(
        viscosity=scenario.gas.viscosity_pa_s,
        mol_weight=scenario.gas.molecular_weight_kg_per_mol,
        heat_capacity=TemperatureCoefficient(scenario.gas.heat_capacity_j_per_kg_k),
        conductivity=scenario.gas.conductivity_w_per_k_m,
        diffusion=scenario.gas.diffusion_kg_per_m_s)
    solid = SolidProperties(
        density=TemperatureCoefficient(scenario.solid.density_kg_per_m3),
        heat_capacity=TemperatureCoefficient(scenario.solid.heat_capacity_j_per_kg_k),
        conductivity=scenario.solid.conductivity_w_per_k_m)
    reaction = None
    if scenario.reaction.enabled:
        reaction = ReactionModel(
            frequency_factor=scenario.reaction.frequency_factor_per_s,
            activation_energy=scenario.reaction.activation_energy_j_per_mol,
            heat_of_reaction=scenario.reaction.heat_of_reaction_j_per_kg)

    sch = scenario.schedule
    t0, t1 = sch.inflow_ramp_start_s, sch.inflow_ramp_end_s
    if t1 > t0:
        flux_ramp = Ramp((t0, t1), (0.0, sch.inflow_flux_kg_per_m2_s))
        frac_ramp = Ramp((t0, t1), (0.0, sch.inflow_fraction))
    else:
        flux_ramp = Ramp.constant(sch.inflow_flux_kg_per_m2_s)
        frac_ramp = Ramp.constant(sch.inflow_fraction)
    schedule = Schedule(
        inflow_flux=flux_ramp, inflow_fraction=frac_ramp,
        outflow_psq=scenario.initial.pressure_squared_pa2,
        ambient_temperature=sch.ambient_temperature_k,
        ignition_off_time=sch.ignition_off_time_s,
        wall_cooling_on_time=sch.wall_cooling_on_time_s,
        wall_h_preheat=sch.wall_h_preheat_w_per_m2_k,
        wall_h_combustion=sch.wall_h_combustion_w_per_m2_k,
        wall_split_x=geo.wall_split_x1_m)

    ignition = None
    if scenario.ignition.enabled:
        ignition = IgnitionSource(
            center=(scenario.ignition.x1_m, scenario.ignition.x2_m),
            radius=scenario.ignition.radius_m,
            strength=scenario.ignition.strength_w,
            mode=scenario.ignition.mode)

    controls = TimeControls(
        t_end=scenario.time.t_end_s,
        dt_initial=scenario.time.dt_initial_s,
        dt_min=scenario.time.dt_min_s,
        dt_max=scenario.time.dt_max_s,
        dt_growth=scenario.time.dt_growth,
        tol_picard=scenario.time.tol_picard,
        max_picard=scenario.time.max_picard,
        steady_temp_rate=scenario.time.steady_temp_rate_k_per_s,
        steady_fraction_rate=scenario.time.steady_fraction_rate_per_s,
        steady_consecutive=scenario.time.steady_consecutive)

    return SimulationSetup(
        meshes=meshes, gas=gas, solid=solid, reaction=reaction,
        materials=materials, schedule=schedule, ignition=ignition,
        initial_psq=scenario.initial.pressure_squared_pa2,
        initial_temperature=scenario.initial.temperature_k,
        initial_fraction=scenario.initial.mass_fraction,
        controls=controls, use_multigrid=use_multigrid)
