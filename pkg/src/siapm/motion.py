"""Motional modes, thermal occupation, heating and the motional excitation
produced by confinement-modulation waveforms.

Mode-coordinate convention
--------------------------
A normal mode with unit eigenvector ``b`` is described by the coordinate
``q``: the displacement of the ion(s) that move the most, so ion ``k`` moves
by ``q * b[k] / max|b|``.  The matching effective mass is
``m / max(b**2)``; for two ions this is ``2m`` for both the centre-of-mass
(COM) coordinate (common displacement) and the breathing coordinate (half
the change of separation).  ``z0 = sqrt(hbar / (2 M omega))`` is the
ground-state extent of ``q``.
"""

from dataclasses import dataclass, field
import csv
import io
import math

import numba
import numpy as np

from .constants import HBAR, IonSpecies
from .crystal import TrapContext


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MotionalMode:
    """A motional mode: angular frequency, per-ion Lamb-Dicke parameters,
    mean occupation and the effective mass of its coordinate."""

    angular_frequency: float
    lamb_dicke: tuple
    mean_occupation: float = 0.0
    label: str = "other"
    effective_mass: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "lamb_dicke", tuple(float(e) for e in self.lamb_dicke))
        if not self.angular_frequency > 0:
            raise ValueError("mode frequency must be positive")
        if self.mean_occupation < 0:
            raise ValueError("mean occupation must be non-negative")
        if any(e < 0 for e in self.lamb_dicke):
            raise ValueError("Lamb-Dicke parameters are magnitudes and must be >= 0")

    @property
    def ground_state_extent(self):
        return math.sqrt(HBAR / (2 * self.effective_mass * self.angular_frequency))


@dataclass(frozen=True)
class HeatingModel:
    """Occupation n̄_m = n0 + m·delta_n_per_step at benchmarking step m."""

    n0: float = 0.01
    delta_n_per_step: float = 0.0

    def __post_init__(self):
        if self.n0 < 0 or self.delta_n_per_step < 0:
            raise ValueError("occupations must be non-negative")

    def occupation(self, step):
        return self.n0 + np.asarray(step) * self.delta_n_per_step


_EIGEN = {
    2: [("COM", 1.0, (1, 1)), ("breathing", math.sqrt(3), (-1, 1))],
    3: [
        ("COM", 1.0, (1, 1, 1)),
        ("breathing", math.sqrt(3), (-1, 0, 1)),
        ("egyptian", math.sqrt(29 / 5), (1, -2, 1)),
    ],
}


def axial_modes(ctx: TrapContext, n_ions=2, occupations=None):
    """Axial normal modes of a 2- or 3-ion chain with per-ion Lamb-Dicke
    parameters for the gate laser of ``ctx``."""
    if n_ions not in _EIGEN:
        raise ValueError("axial modes available for 2 or 3 ions")
    m = ctx.species.mass
    modes = []
    for i, (label, ratio, vec) in enumerate(_EIGEN[n_ions]):
        b = np.array(vec, dtype=float)
        b /= np.linalg.norm(b)
        w = ratio * ctx.omega0
        eta = ctx.k_z * math.sqrt(HBAR / (2 * m * w)) * np.abs(b)
        nbar = 0.0 if occupations is None else occupations[i]
        modes.append(MotionalMode(w, tuple(eta), nbar, label, m / np.max(b**2)))
    return modes


def single_ion_lamb_dicke(ctx: TrapContext):
    return ctx.k_z * math.sqrt(HBAR / (2 * ctx.species.mass * ctx.omega0))


# -- thermal statistics -------------------------------------------------------


def thermal_weight(n, nbar):
    """Boltzmann weight of Fock state ``n`` in a thermal state of mean ``nbar``."""
    if nbar < 0:
        raise ValueError(f"mean occupation must be non-negative, got {nbar}")
    n = np.asarray(n)
    if nbar == 0:
        out = (n == 0).astype(float)
    else:
        out = np.exp(-np.log1p(1.0 / nbar) * n) / (1.0 + nbar)
    return out if out.ndim else float(out)


def sample_fock(nbar, rng, size=None):
    """Draw Fock indices from a thermal distribution (geometric law)."""
    if nbar < 0:
        raise ValueError("mean occupation must be non-negative")
    if nbar == 0:
        return np.zeros(size, dtype=np.int64) if size is not None else 0
    return rng.geometric(1.0 / (1.0 + nbar), size=size) - 1


def sudden_squeeze_phonons(omega_before, omega_after):
    """Phonons created in a ground-state mode by an instantaneous frequency jump."""
    if not (omega_before > 0 and omega_after > 0):
        raise ValueError("frequencies must be positive")
    return math.sinh(0.5 * math.log(omega_after / omega_before)) ** 2


def displacement_phonons(mode: MotionalMode, equilibrium_shift):
    """Coherent excitation |α|² left by a sudden shift of the mode's
    equilibrium, in the mode-coordinate convention of this module."""
    alpha = equilibrium_shift / (2 * mode.ground_state_extent)
    return alpha * alpha


def com_mode(species: IonSpecies, omega0, n_ions=2, lamb_dicke=None):
    eta = (0.0,) * n_ions if lamb_dicke is None else lamb_dicke
    return MotionalMode(omega0, eta, 0.0, "COM", n_ions * species.mass)


# -- waveforms ----------------------------------------------------------------


@dataclass(frozen=True)
class Waveform:
    """Fractional axial-frequency change x(t) = Δω/ω₀ sampled at ``sample_rate``.

    The trap frequency follows ω(t) = ω₀·(1 + x(t)); samples must exceed -1.
    """

    sample_rate: float
    samples: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(float(s) for s in self.samples))
        if not self.sample_rate > 0:
            raise ValueError("sample rate must be positive")
        if any(not s > -1 for s in self.samples):
            raise ValueError("samples must keep the trap frequency positive (x > -1)")

    @property
    def times(self):
        return np.arange(len(self.samples)) / self.sample_rate

    @property
    def duration(self):
        return (len(self.samples) - 1) / self.sample_rate

    def to_csv(self):
        buf = io.StringIO()
        buf.write("time_s,scale\n")
        for t, s in zip(self.times, self.samples):
            buf.write(f"{t:.12g},{s:.12g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != ["time_s", "scale"]:
            raise ValueError("waveform CSV must start with header 'time_s,scale'")
        t = np.array([float(r[0]) for r in rows[1:]])
        s = [float(r[1]) for r in rows[1:]]
        if len(t) < 2:
            raise ValueError("need at least two samples to infer the sample rate")
        return cls(1.0 / float(np.mean(np.diff(t))), s)


@dataclass(frozen=True)
class FilterModel:
    cutoff: float = 530e3

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")


def make_modulation_waveform(x_start, x_end, n_points, sample_rate=100e3):
    """Linear interpolation between two confinement settings."""
    if n_points < 2:
        raise ValueError("need at least two waveform points")
    return Waveform(sample_rate, np.linspace(x_start, x_end, n_points))


def upsample(w: Waveform, factor):
    """Repeat each sample ``factor`` times (DAC zero-order hold on a finer grid)."""
    return Waveform(w.sample_rate * factor, np.repeat(w.samples, int(factor)))


def apply_filter(w: Waveform, f: FilterModel):
    """Single-pole low-pass IIR, y[i] = y[i-1] + a·(x[i] - y[i-1])."""
    x = np.asarray(w.samples)
    if x.size == 0:
        return w
    a = 1.0 - math.exp(-2 * math.pi * f.cutoff / w.sample_rate)
    y = np.empty_like(x)
    y[0] = x[0]
    for i in range(1, x.size):
        y[i] = y[i - 1] + a * (x[i] - y[i - 1])
    return Waveform(w.sample_rate, y)


# -- classical COM dynamics ---------------------------------------------------


@numba.njit(cache=True)
def _rk4_drive(xs, dt_sample, omega0, force, z, v, h_target, linear):
    """Integrate z'' = -ω(t)² z + force over the waveform.

    ``linear`` selects linear interpolation between samples; otherwise each
    sample is held for one sample period.
    """
    n_seg = xs.size - 1 if linear else xs.size
    for i in range(n_seg):
        n_sub = max(1, int(math.ceil(dt_sample / h_target)))
        h = dt_sample / n_sub
        x0 = xs[i]
        dx = (xs[i + 1] - xs[i]) if linear else 0.0
        for j in range(n_sub):
            s0 = j / n_sub
            sm = (j + 0.5) / n_sub
            s1 = (j + 1.0) / n_sub
            w0 = omega0 * (1.0 + x0 + dx * s0)
            wm = omega0 * (1.0 + x0 + dx * sm)
            w1 = omega0 * (1.0 + x0 + dx * s1)
            k1z = v
            k1v = -w0 * w0 * z + force
            k2z = v + 0.5 * h * k1v
            k2v = -wm * wm * (z + 0.5 * h * k1z) + force
            k3z = v + 0.5 * h * k2v
            k3v = -wm * wm * (z + 0.5 * h * k2z) + force
            k4z = v + h * k3v
            k4v = -w1 * w1 * (z + h * k3z) + force
            z += h * (k1z + 2 * k2z + 2 * k3z + k4z) / 6
            v += h * (k1v + 2 * k2v + 2 * k3v + k4v) / 6
    return z, v


def _energy_drift(omega, duration, h_target):
    xs = np.zeros(2)
    z, v = _rk4_drive(xs, duration, omega, 0.0, 1.0, 0.0, h_target, False)
    # one "sample" held for the whole duration
    e = 0.5 * (v * v + omega * omega * z * z)
    return abs(e / (0.5 * omega * omega) - 1.0)


def simulate_com_excitation(w: Waveform, stray_field, species: IonSpecies, omega0,
                            n_ions=2, steps_per_period=None, interpolation="hold",
                            check_energy=True, energy_tol=1e-6):
    """Coherent COM excitation |α|² after playing a modulation waveform.

    The chain starts at rest at the equilibrium set by ``stray_field`` (V/m)
    and the first sample; the result is computed relative to the equilibrium
    of the last sample.  ``steps_per_period`` defaults to the smallest power
    of two from 512 up that passes the energy check.  ``interpolation`` is ``"hold"`` (DAC staircase, each
    sample held for 1/sample_rate) or ``"linear"``.  Before integrating, the
    same step size is run on a free oscillator at the highest frequency of
    the waveform; a relative energy drift above ``energy_tol`` raises
    IntegrationError.
    """
    if steps_per_period is not None and steps_per_period < 200:
        raise ValueError("need at least 200 integration steps per mode period")
    xs = np.asarray(w.samples, dtype=float)
    if xs.size == 0:
        return 0.0
    if np.any(xs <= -1):
        raise ValueError("waveform drives the trap frequency non-positive")
    linear = interpolation == "linear"
    if not linear and interpolation != "hold":
        raise ValueError(f"unknown interpolation {interpolation!r}")
    force = species.charge * stray_field / species.mass
    w_start = omega0 * (1 + xs[0])
    w_end = omega0 * (1 + xs[-1])
    w_max = omega0 * (1 + xs.max())
    dt = 1.0 / w.sample_rate
    duration = dt * (xs.size - 1 if linear else xs.size)
    if steps_per_period is None:
        # RK4 drift grows with the number of periods; refine until it is small
        steps_per_period = 512
        while (steps_per_period < 65536 and duration > 0
               and _energy_drift(w_max, duration, 2 * math.pi / w_max / steps_per_period) > energy_tol):
            steps_per_period *= 2
    h_target = 2 * math.pi / w_max / steps_per_period
    if check_energy and duration > 0:
        drift = _energy_drift(w_max, duration, h_target)
        if drift > energy_tol:
            raise IntegrationError(
                f"energy drift {drift:.3g} of the harmonic test case exceeds {energy_tol:g}")
    z0 = force / w_start**2
    if linear and xs.size < 2:
        return 0.0
    z, v = _rk4_drive(xs, dt, omega0, force, z0, 0.0, h_target, linear)
    dz = z - force / w_end**2
    extent2 = HBAR / (2 * n_ions * species.mass * w_end)
    return (dz * dz + (v / w_end) ** 2) / (4 * extent2)


def harmonic_energy_drift(omega, periods, steps_per_period=512):
    """Relative energy error of the integrator on a free oscillator."""
    duration = periods * 2 * math.pi / omega
    return _energy_drift(omega, duration, 2 * math.pi / omega / steps_per_period)
