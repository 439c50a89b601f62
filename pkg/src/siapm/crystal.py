"""Linear-crystal equilibrium geometry and the optical phase imparted by a
change of axial confinement.

Ion indices are zero-based throughout the Python API.  A confinement change
is expressed as the fractional change ``x = Δω/ω₀`` of the single-ion axial
frequency; every length in the crystal scales as ``(1 + x)**(-2/3)``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .constants import CA40, ELEMENTARY_CHARGE, VACUUM_PERMITTIVITY, IonSpecies

PHASE_TOLERANCE = 1e-9


class DomainError(ValueError):
    pass


class UnsupportedChainError(ValueError):
    pass


class NoSolutionError(ValueError):
    def __init__(self, message, max_phase):
        super().__init__(message)
        self.max_phase = max_phase


@dataclass(frozen=True)
class TrapContext:
    """Axial trap frequency and gate-laser geometry.

    Parameters
    ----------
    omega0 : float
        Single-ion axial secular angular frequency (rad/s).
    laser_wavelength : float
        Gate laser wavelength (m).
    beam_axis_angle : float
        Angle between the laser wavevector and the crystal axis (rad).
    species : IonSpecies
    """

    omega0: float
    laser_wavelength: float = 729e-9
    beam_axis_angle: float = math.pi / 4
    species: IonSpecies = CA40

    def __post_init__(self):
        if not self.omega0 > 0:
            raise DomainError(f"omega0 must be positive, got {self.omega0}")
        if not self.laser_wavelength > 0:
            raise DomainError("laser wavelength must be positive")
        if not 0 <= self.beam_axis_angle < math.pi / 2:
            raise DomainError("beam/axis angle must lie in [0, pi/2)")

    @property
    def k_z(self):
        """Projection of the laser wavevector on the crystal axis (rad/m)."""
        return 2 * math.pi / self.laser_wavelength * math.cos(self.beam_axis_angle)


@dataclass(frozen=True)
class CrystalGeometry:
    n_ions: int
    positions: tuple

    @property
    def spacings(self):
        """Adjacent separations followed by the edge-to-edge separation."""
        z = self.positions
        adjacent = tuple(z[i + 1] - z[i] for i in range(len(z) - 1))
        return adjacent + ((z[-1] - z[0],) if len(z) > 2 else ())

    def separation(self, pair):
        i, j = pair
        return self.positions[j] - self.positions[i]


def _check_frequency(species, omega0):
    if not omega0 > 0:
        raise DomainError(f"axial frequency must be positive, got {omega0}")
    if not species.mass > 0:
        raise DomainError("ion mass must be positive")


def equilibrium_separation(species, omega0):
    """Two-ion equilibrium separation d₀ (m)."""
    _check_frequency(species, omega0)
    z2e2 = species.charge_number**2 * ELEMENTARY_CHARGE**2
    return (z2e2 / (2 * math.pi * VACUUM_PERMITTIVITY * species.mass * omega0**2)) ** (1 / 3)


def length_scale(species, omega0):
    """Natural crystal length ℓ = [Z²e²/(4πε₀ m ω₀²)]^(1/3)."""
    _check_frequency(species, omega0)
    z2e2 = species.charge_number**2 * ELEMENTARY_CHARGE**2
    return (z2e2 / (4 * math.pi * VACUUM_PERMITTIVITY * species.mass * omega0**2)) ** (1 / 3)


def scale_factor(x):
    """Length scale factor (1 + x)^(-2/3) for a fractional frequency change x."""
    if not x > -1:
        raise DomainError(f"fractional frequency change must exceed -1, got {x}")
    return (1.0 + x) ** (-2.0 / 3.0)


def separation_under_scaling(d0, x):
    """Separation after the axial frequency changes by a fraction ``x``.

    Lengths scale as ω^(-2/3), so ``d = d0 * (1 + x)**(-2/3)``.
    """
    return d0 * scale_factor(x)


_UNIT_POSITIONS = {
    2: (-(0.5 ** (2 / 3)), 0.5 ** (2 / 3)),
    3: (-(1.25 ** (1 / 3)), 0.0, 1.25 ** (1 / 3)),
}


def chain_positions(n, species=CA40, omega0=2 * math.pi * 2e6):
    """Closed-form equilibrium positions for two- or three-ion chains."""
    if n not in _UNIT_POSITIONS:
        raise UnsupportedChainError(f"only 2- and 3-ion chains are supported, got {n}")
    ell = length_scale(species, omega0)
    return CrystalGeometry(n, tuple(ell * u for u in _UNIT_POSITIONS[n]))


def _check_pair(pair, n):
    i, j = pair
    if not (0 <= i < n and 0 <= j < n and i != j):
        raise DomainError(f"invalid ion pair {pair} for a {n}-ion chain")


def _positions(ctx, n):
    return np.array(chain_positions(n, ctx.species, ctx.omega0).positions)


def position_phases(ctx, n, x_from, x_to):
    """Per-ion optical phase change k_z·(z_k(x_to) − z_k(x_from)) (rad)."""
    z = _positions(ctx, n)
    return tuple(ctx.k_z * z * (scale_factor(x_to) - scale_factor(x_from)))


def differential_phase(ctx, pair, x, n=2):
    """Differential phase between the ions of ``pair`` after a confinement
    change ``x``: k_z·(d_pair(x) − d_pair(0))."""
    _check_pair(pair, n)
    i, j = pair
    z = _positions(ctx, n)
    d_pair = z[j] - z[i]
    return ctx.k_z * d_pair * (scale_factor(x) - 1.0)


def _wrap_for_branch(target, branch):
    # An increase in confinement shrinks the crystal, giving a phase of the
    # opposite sign to the pair separation; only wrap when the sign conflicts.
    two_pi = 2 * math.pi
    if branch == "increase" and target > 0:
        return target - two_pi * math.ceil(target / two_pi)
    if branch == "decrease" and target < 0:
        return target - two_pi * math.floor(target / two_pi)
    return target


def solve_scaling_for_phase(ctx, pair, n, target_phase, branch=None, tol=PHASE_TOLERANCE):
    """Find the confinement change x giving a differential phase ``target_phase``.

    ``branch`` selects an increase (x > 0) or decrease (x < 0) of confinement.
    When omitted it follows the sign of the target.  A target whose sign does
    not match the requested branch is replaced by its 2π-equivalent of the
    matching sign, since only the phase modulo 2π matters for a laser pulse.
    """
    _check_pair(pair, n)
    sign = 1.0 if pair[1] > pair[0] else -1.0
    if branch is None:
        if target_phase == 0:
            return 0.0
        # for i < j a positive phase needs a larger separation
        branch = "decrease" if sign * target_phase > 0 else "increase"
    if branch not in ("increase", "decrease"):
        raise ValueError(f"branch must be 'increase' or 'decrease', got {branch!r}")
    target = sign * _wrap_for_branch(sign * target_phase, branch)
    if target == 0:
        return 0.0

    f = lambda x: differential_phase(ctx, pair, x, n) - target  # noqa: E731
    if branch == "increase":
        z = _positions(ctx, n)
        max_phase = ctx.k_z * abs(z[pair[1]] - z[pair[0]])
        if sign * target >= 0 or abs(target) >= max_phase:
            raise NoSolutionError(
                f"phase {target_phase:.6g} rad unreachable by increasing confinement "
                f"(limit {max_phase:.6g} rad)",
                max_phase,
            )
        lo, hi = 0.0, 1.0
        while f(hi) * f(lo) > 0:
            hi *= 2
    else:
        if sign * target <= 0:
            raise NoSolutionError("phase unreachable by decreasing confinement", math.inf)
        lo, hi = -0.5, 0.0
        while f(lo) * f(hi) > 0:
            lo = -1.0 + (lo + 1.0) / 2

    f_lo = f(lo)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if abs(f_mid) < tol:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    if abs(f(mid)) < tol:
        return mid
    raise NoSolutionError(f"bisection failed to reach {tol} rad", math.nan)


PAIRS = {"adjacent": (0, 1), "edge": (0, 2)}


def resolve_pair(pair, n):
    if isinstance(pair, str):
        if pair not in PAIRS:
            raise ValueError(f"unknown pair name {pair!r}")
        pair = PAIRS[pair]
    pair = tuple(int(p) for p in pair)
    _check_pair(pair, n)
    return pair
