"""Physical constants, device material stack and bulk carrier statistics.

Energies are carried in eV, temperatures in K, lengths in um and densities
in cm^-3 at the API surface; conversion to SI happens once, inside the
numerical routines.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "PhysicalConstants",
    "CONSTANTS",
    "ContactStripe",
    "MaterialStack",
    "ChargeLevelDiagram",
    "Layer",
    "BulkState",
    "thermal_voltage",
    "richardson_constant",
    "equilibrium_bulk_density",
]


@dataclass(frozen=True)
class PhysicalConstants:
    """Fundamental constants (CODATA 2018)."""

    elementary_charge: float = 1.602176634e-19  # C
    boltzmann: float = 8.617333262e-5  # eV/K
    planck: float = 4.135667696e-15  # eV s
    speed_of_light: float = 299792458.0  # m/s
    vacuum_permittivity: float = 8.8541878128e-12  # F/m
    fine_structure_alpha: float = 7.2973525693e-3

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0.0:
                raise ValueError(f"constant {name} must be positive, got {value}")

    @property
    def boltzmann_si(self) -> float:
        """Boltzmann constant in J/K."""
        return self.boltzmann * self.elementary_charge

    @property
    def planck_si(self) -> float:
        """Planck constant in J s."""
        return self.planck * self.elementary_charge


CONSTANTS = PhysicalConstants()


class Layer(enum.Enum):
    EPI = "epi"
    SUBSTRATE = "substrate"


@dataclass(frozen=True)
class ContactStripe:
    """Top-surface Schottky stripe in the 2-D cross-section.

    The stripe spans ``x_min_um <= x <= x_max_um`` on the surface; the
    cross-section is translationally invariant along the stripe, and
    ``length_um`` only sets the absolute contact area for diode currents.
    """

    x_min_um: float = -30.0
    x_max_um: float = 0.0
    length_um: float = 1000.0

    def __post_init__(self):
        if not self.x_max_um > self.x_min_um:
            raise ValueError("contact stripe must have positive width")
        if not self.length_um > 0:
            raise ValueError("contact stripe length must be positive")

    @property
    def width_um(self) -> float:
        return self.x_max_um - self.x_min_um

    @property
    def area_m2(self) -> float:
        return self.width_um * self.length_um * 1e-12


@dataclass(frozen=True)
class MaterialStack:
    """Layered device: metal stripe / n- epilayer / n+ substrate / ohmic back.

    Defaults are the cryogenic 4H-SiC device values. ``Nc``/``Nv`` are
    effective densities of states at ``reference_temperature_K`` and are
    rescaled as T^(3/2) when evaluated at other temperatures. The static
    permittivity and the donor level are not part of the device datasheet
    and are exposed as overridable fields.
    """

    metal_workfunction: float = 5.1  # eV (Au)
    band_gap: float = 3.23  # eV
    electron_affinity: float = 3.24  # eV
    refractive_index: float = 2.588
    static_relative_permittivity: float = 9.66
    Nc: float = 1.8881e23  # m^-3 at reference temperature
    Nv: float = 2.7885e23  # m^-3 at reference temperature
    doping_epi: float = 7e13  # cm^-3
    doping_substrate: float = 1e17  # cm^-3
    mobility_epi: float = 237.02  # m^2/(V s)
    mobility_substrate: float = 29.556  # m^2/(V s)
    m_eff_e: float = 3.6578e-31  # kg
    m_eff_h: float = 2.4083e-30  # kg
    donor_ionization_energy: float = 0.061  # eV, 0 means merged with the band
    epi_thickness: float = 10.0  # um
    reference_temperature_K: float = 15.0
    donor_degeneracy: float = 2.0
    contact: ContactStripe = field(default_factory=ContactStripe)

    def __post_init__(self):
        positive = [
            "band_gap",
            "Nc",
            "Nv",
            "doping_epi",
            "doping_substrate",
            "mobility_epi",
            "mobility_substrate",
            "m_eff_e",
            "m_eff_h",
            "epi_thickness",
            "static_relative_permittivity",
            "reference_temperature_K",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.donor_ionization_energy < 0:
            raise ValueError("donor_ionization_energy must be >= 0")
        if not self.electron_affinity < self.metal_workfunction:
            raise ValueError(
                "metal workfunction must exceed the electron affinity "
                "(rectifying top contact)"
            )

    def with_overrides(self, **kwargs) -> "MaterialStack":
        return replace(self, **kwargs)

    @property
    def barrier_height(self) -> float:
        """Schottky barrier in eV."""
        return self.metal_workfunction - self.electron_affinity

    def doping(self, layer: Layer) -> float:
        """Donor density of a layer in cm^-3."""
        return self.doping_epi if layer is Layer.EPI else self.doping_substrate

    def conduction_dos(self, temperature: float) -> float:
        """Effective conduction-band density of states (m^-3) at T."""
        return self.Nc * (temperature / self.reference_temperature_K) ** 1.5

    def valence_dos(self, temperature: float) -> float:
        """Effective valence-band density of states (m^-3) at T."""
        return self.Nv * (temperature / self.reference_temperature_K) ** 1.5


@dataclass(frozen=True)
class ChargeLevelDiagram:
    """In-gap level positions used by the photoionization model (eV)."""

    gap: float = 3.26
    v2_zpl: float = 1.352
    ionization_threshold_minus_to_2minus: float = 1.31

    def __post_init__(self):
        if not 0 < self.v2_zpl < self.gap:
            raise ValueError("optical transition energy must lie inside the gap")
        if not 0 < self.ionization_threshold_minus_to_2minus < self.gap:
            raise ValueError("ionization threshold must lie inside the gap")


def thermal_voltage(temperature: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """kB*T in eV.

    Raises ValueError for non-positive temperatures.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0 K, got {temperature}")
    return constants.boltzmann * temperature


def richardson_constant(m_eff: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """Effective Richardson constant A* = 4 pi q m k^2 / h^3 in A m^-2 K^-2."""
    if not m_eff > 0:
        raise ValueError("effective mass must be positive")
    q = constants.elementary_charge
    k = constants.boltzmann_si
    h = constants.planck_si
    return 4.0 * math.pi * q * m_eff * k * k / (h * h * h)


@dataclass(frozen=True)
class BulkState:
    """Neutral-bulk solution: free electrons and the Fermi level."""

    electron_density_cm3: float
    fermi_level_eV: float  # relative to the conduction band edge (<= 0 typically)


def _log_ionized_fraction(ef: float, level: float, g: float, kt: float) -> float:
    """log of N_D+/N_D for Fermi level ``ef`` and donor level ``level`` (both
    relative to the conduction band edge, eV)."""
    # N_D+/N_D = 1 / (1 + g exp((ef - level)/kt)), evaluated in log domain
    return -np.logaddexp(0.0, math.log(g) + (ef - level) / kt)


def equilibrium_bulk_density(
    stack: MaterialStack,
    layer: Layer,
    temperature: float,
    constants: PhysicalConstants = CONSTANTS,
) -> BulkState:
    """Solve charge neutrality n = N_D+(E_F) for a neutral bulk layer.

    Donor ionization follows N_D+ = N_D / (1 + g exp((E_F - E_D)/kT)) with
    the donor level E_D = -donor_ionization_energy below the band edge.
    A zero ionization energy means the level has merged with the band and
    the donors are taken as fully ionized.

    Returns the free-electron density (cm^-3) and the Fermi level relative
    to the conduction band edge (eV).
    """
    kt = thermal_voltage(temperature, constants)
    nd_cm3 = stack.doping(layer)
    nc_m3 = stack.conduction_dos(temperature)
    nc_cm3 = nc_m3 * 1e-6
    g = stack.donor_degeneracy
    level = -stack.donor_ionization_energy

    if stack.donor_ionization_energy == 0.0:
        ef = kt * math.log(nd_cm3 / nc_cm3)
        return BulkState(electron_density_cm3=nd_cm3, fermi_level_eV=ef)

    def balance(ef: float) -> float:
        # log n - log N_D+, both in cm^-3; strictly increasing in ef
        log_n = math.log(nc_cm3) + ef / kt
        log_ndp = math.log(nd_cm3) + _log_ionized_fraction(ef, level, g, kt)
        return log_n - log_ndp

    lo, hi = -stack.band_gap, 0.5
    f_lo, f_hi = balance(lo), balance(hi)
    if not (f_lo < 0 < f_hi):
        raise ArithmeticError(
            "charge-neutrality root not bracketed: "
            f"f({lo:.3f} eV) = {f_lo:.3e}, f({hi:.3f} eV) = {f_hi:.3e}"
        )
    try:
        ef = brentq(balance, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200)
    except RuntimeError as exc:
        raise ArithmeticError(
            f"charge-neutrality solve did not converge in [{lo}, {hi}] eV: {exc}"
        ) from exc
    n_cm3 = nc_cm3 * math.exp(ef / kt)
    return BulkState(electron_density_cm3=n_cm3, fermi_level_eV=ef)
