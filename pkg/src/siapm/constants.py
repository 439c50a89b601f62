"""Physical constants (CODATA 2018) and species definitions."""

from dataclasses import dataclass

ELEMENTARY_CHARGE = 1.602176634e-19  # C, exact
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m
HBAR = 1.054571817e-34  # J s
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
ELECTRON_MASS_AMU = 5.48579909065e-4


@dataclass(frozen=True)
class IonSpecies:
    """An ion species: mass in kg and charge number Z."""

    mass: float
    charge_number: int = 1
    name: str = ""

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"ion mass must be positive, got {self.mass}")
        if self.charge_number < 1:
            raise ValueError(f"charge number must be >= 1, got {self.charge_number}")

    @classmethod
    def from_amu(cls, mass_amu, charge_number=1, name=""):
        return cls(mass_amu * ATOMIC_MASS_UNIT, charge_number, name)

    @property
    def charge(self):
        return self.charge_number * ELEMENTARY_CHARGE


# singly ionised calcium-40: neutral atomic mass less one electron
CA40 = IonSpecies.from_amu(39.962590863 - ELECTRON_MASS_AMU, 1, "40Ca+")
