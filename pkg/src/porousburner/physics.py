"""Constitutive laws and material data for the porous-burner model.

Everything here is a pure function of state: the signed-square-pressure
equation of state, the drag coefficients of the nonlinear porous-flow law
(with the Ergun closure for the inertial term), one-step Arrhenius kinetics,
and the porosity-weighted effective heat conductivity.  Heat-capacity style
coefficients may be plain floats or polynomials in temperature.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIVERSAL_GAS_CONSTANT = 8.314  # J/(mol K)

# Regularization floor for |psq| inside the equation of state.  Operating
# pressures keep psq near 1e10 Pa^2, so the floor is never active in a
# valid run; it only protects Newton from a division by zero at psq = 0.
PSQ_FLOOR = 1.0  # Pa^2


class TemperatureCoefficient:
    """Scalar coefficient that may depend polynomially on temperature.

    Wraps either a constant or polynomial coefficients a0 + a1*T + a2*T^2 ...
    so storage terms can expose both the value and its temperature
    derivative to the Newton linearization.
    """

    def __init__(self, coeffs):
        arr = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("coefficient must be a scalar or 1D polynomial")
        self.coeffs = arr

    @property
    def is_constant(self) -> bool:
        return self.coeffs.size == 1

    def __call__(self, temperature):
        val = np.zeros_like(np.asarray(temperature, dtype=float))
        for a in self.coeffs[::-1]:
            val = val * temperature + a
        return val if val.ndim else float(val)

    def derivative(self, temperature):
        t = np.asarray(temperature, dtype=float)
        val = np.zeros_like(t)
        n = self.coeffs.size
        for k in range(n - 1, 0, -1):
            val = val * t + k * self.coeffs[k]
        return val if val.ndim else float(val)

    def __eq__(self, other):
        return isinstance(other, TemperatureCoefficient) and np.array_equal(
            self.coeffs, other.coeffs
        )

    def __repr__(self):
        return f"TemperatureCoefficient({self.coeffs.tolist()})"


def _as_coeff(value) -> TemperatureCoefficient:
    if isinstance(value, TemperatureCoefficient):
        return value
    return TemperatureCoefficient(value)


@dataclass
class GasProperties:
    """Transport and thermodynamic constants of the gas mixture."""

    viscosity: float = 3.18e-5          # Pa s
    mol_weight: float = 0.028           # kg/mol
    heat_capacity: TemperatureCoefficient = field(
        default_factory=lambda: TemperatureCoefficient(1005.0))   # J/(kg K)
    conductivity: float = 0.049         # W/(K m)
    diffusion: float = 8.2e-5           # kg/(m s), flux coefficient of phi*D*grad(y)

    def __post_init__(self):
        self.heat_capacity = _as_coeff(self.heat_capacity)
        if self.viscosity <= 0 or self.mol_weight <= 0 or self.conductivity <= 0:
            raise ValueError("gas properties must be strictly positive")
        if self.diffusion <= 0 or self.heat_capacity(298.0) <= 0:
            raise ValueError("gas properties must be strictly positive")


@dataclass
class SolidProperties:
    """Solid-matrix density, heat capacity and conductivity."""

    density: TemperatureCoefficient = field(
        default_factory=lambda: TemperatureCoefficient(3970.0))   # kg/m^3
    heat_capacity: TemperatureCoefficient = field(
        default_factory=lambda: TemperatureCoefficient(765.0))    # J/(kg K)
    conductivity: float = 36.0          # W/(K m)

    def __post_init__(self):
        self.density = _as_coeff(self.density)
        self.heat_capacity = _as_coeff(self.heat_capacity)
        if self.conductivity <= 0 or self.density(298.0) <= 0 or self.heat_capacity(298.0) <= 0:
            raise ValueError("solid properties must be strictly positive")


@dataclass
class ReactionModel:
    """One-step irreversible Arrhenius kinetics."""

    frequency_factor: float = 1.8e8     # 1/s
    activation_energy: float = 125600.0  # J/mol
    heat_of_reaction: float = 5.0e7     # J/kg

    def __post_init__(self):
        if min(self.frequency_factor, self.activation_energy, self.heat_of_reaction) <= 0:
            raise ValueError("reaction constants must be strictly positive")


@dataclass
class MaterialField:
    """Piecewise-constant porous-matrix data, one entry per mesh region."""

    porosity: dict[int, float]
    permeability: dict[int, float]      # m^2
    ergun_constant: dict[int, float]    # dimensionless c_F

    def __post_init__(self):
        for rid, phi in self.porosity.items():
            if not 0.0 < phi < 1.0:
                raise ValueError(f"porosity of region {rid} must lie in (0, 1), got {phi}")
        for rid, k in self.permeability.items():
            if k <= 0:
                raise ValueError(f"permeability of region {rid} must be positive, got {k}")
        for rid, cf in self.ergun_constant.items():
            if cf < 0:
                raise ValueError(f"Ergun constant of region {rid} must be nonnegative")

    def porosity_of(self, regions: np.ndarray) -> np.ndarray:
        return _lookup(self.porosity, regions)

    def permeability_of(self, regions: np.ndarray) -> np.ndarray:
        return _lookup(self.permeability, regions)

    def ergun_of(self, regions: np.ndarray) -> np.ndarray:
        return _lookup(self.ergun_constant, regions)


def _lookup(table: dict[int, float], regions: np.ndarray) -> np.ndarray:
    out = np.empty(len(regions), dtype=float)
    for rid, value in table.items():
        out[regions == rid] = value
    missing = set(np.unique(regions)) - set(table)
    if missing:
        raise KeyError(f"mesh regions {sorted(missing)} have no material data")
    return out


def ideal_gas_factor(mol_weight, temperature):
    """Density-to-pressure ratio W/(R0*T) of an ideal gas, in s^2/m^2."""
    t = np.asarray(temperature, dtype=float)
    if np.any(t <= 0):
        raise ValueError("temperature must be positive")
    out = mol_weight / (UNIVERSAL_GAS_CONSTANT * t)
    return out if out.ndim else float(out)


def density_from_psq(psq, gas_factor):
    """Equation of state rho = gas_factor * psq / sqrt(|psq|).

    `psq` is the signed squared pressure |p|*p; the result is odd and
    strictly increasing in psq.  Near psq = 0 the square root is floored
    at PSQ_FLOOR so the derivative stays finite.
    """
    s = np.asarray(psq, dtype=float)
    out = gas_factor * s / np.sqrt(np.maximum(np.abs(s), PSQ_FLOOR))
    return out if out.ndim else float(out)


def density_from_psq_derivative(psq, gas_factor):
    """d rho / d psq with the same floor as density_from_psq."""
    s = np.asarray(psq, dtype=float)
    a = np.abs(s)
    out = np.where(a > PSQ_FLOOR,
                   gas_factor / (2.0 * np.sqrt(np.maximum(a, PSQ_FLOOR))),
                   gas_factor / np.sqrt(PSQ_FLOOR))
    return out if out.ndim else float(out)


def drag_coefficients(viscosity, permeability, ergun_constant, gas_factor):
    """Linear and quadratic drag of the transformed porous-flow law.

    Returns (linear, quadratic) = (2*mu/(gf*k), 2*c_F/(gf*sqrt(k))); the
    quadratic part uses the Ergun closure beta_Fo = c_F/sqrt(k).
    """
    linear = 2.0 * viscosity / (gas_factor * permeability)
    quadratic = 2.0 * ergun_constant / (gas_factor * np.sqrt(permeability))
    return linear, quadratic


def arrhenius_rate(frequency_factor, activation_energy, density, mass_fraction,
                   temperature):
    """Volumetric consumption rate B*rho*y*exp(-E/(R0*T)) in kg/(m^3 s)."""
    t = np.asarray(temperature, dtype=float)
    out = (frequency_factor * density * mass_fraction
           * np.exp(-activation_energy / (UNIVERSAL_GAS_CONSTANT * t)))
    return out if out.ndim else float(out)


def effective_conductivity(porosity, gas_conductivity, solid_conductivity):
    """Porosity-weighted conductivity phi*lam_g + (1-phi)*lam_s."""
    p = np.asarray(porosity, dtype=float)
    out = p * gas_conductivity + (1.0 - p) * solid_conductivity
    return out if out.ndim else float(out)
