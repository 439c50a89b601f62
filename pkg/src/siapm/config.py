"""Flat ``key = value`` configuration files.

Lines starting with ``#`` and blank lines are ignored.  Lists are comma
separated.  Unknown keys and unparsable values are reported together with
their line numbers.
"""

from dataclasses import dataclass, fields, replace
import math

from .constants import CA40, ATOMIC_MASS_UNIT, IonSpecies
from .crystal import TrapContext


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # species and trap
    mass_amu: float = CA40.mass / ATOMIC_MASS_UNIT
    charge_number: int = 1
    axial_frequency_hz: float = 2.05e6
    laser_wavelength_m: float = 729e-9
    beam_angle_deg: float = 45.0
    # modulation design
    chain_ions: int = 2
    pair: str = "adjacent"
    target_phase_rad: float = math.pi
    branch: str = "increase"
    waveform_points: int = 4
    sample_rate_hz: float = 100e3
    filter_cutoff_hz: float = 530e3
    simulation_upsample: int = 100
    stray_field_v_per_m: float = 1.0
    use_crystal_phases: bool = True
    intensity_weights: tuple = (1.0, 1.0)
    # noise
    eta: str = "auto"
    n0: float = 0.01
    delta_n: float = 0.0
    spam_error: float = 0.0
    dark_spam_error: float = 0.0
    overrotation_sigma: float = 0.0
    dephasing_per_us: float = 0.0
    step_error: float = 0.0
    d_state_decay_rate: float = 1.2
    fock_granularity: str = "step"
    # timing
    pi2_duration_s: float = 5e-6
    modulation_duration_s: float = 25e-6
    step_duration_s: float = 24.6e-6
    # RB schedule
    rb_targets: str = "two-ion"
    rb_lengths: tuple = (1, 10, 25, 50, 100, 200)
    rb_sequences: int = 20
    rb_shots: int = 100
    chi_impl: str = "exact"
    # Ramsey
    ramsey_points: int = 17
    ramsey_shots: int = 100
    # run
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        errors = []
        positive = ("mass_amu", "axial_frequency_hz", "laser_wavelength_m", "sample_rate_hz",
                    "filter_cutoff_hz", "step_duration_s", "simulation_upsample",
                    "rb_sequences", "rb_shots", "ramsey_shots", "charge_number")
        for name in positive:
            if not getattr(self, name) > 0:
                errors.append(f"{name}: must be positive")
        non_negative = ("n0", "delta_n", "overrotation_sigma", "dephasing_per_us",
                        "d_state_decay_rate", "pi2_duration_s", "modulation_duration_s")
        for name in non_negative:
            if getattr(self, name) < 0:
                errors.append(f"{name}: must be non-negative")
        for name in ("spam_error", "dark_spam_error", "step_error"):
            if not 0 <= getattr(self, name) <= 0.5:
                errors.append(f"{name}: must lie in [0, 0.5]")
        if not 0 <= self.beam_angle_deg < 90:
            errors.append("beam_angle_deg: must lie in [0, 90)")
        choices = {"pair": ("adjacent", "edge"), "branch": ("increase", "decrease"),
                   "fock_granularity": ("step", "pulse"), "rb_targets": ("one-ion", "two-ion"),
                   "chi_impl": ("exact", "ld")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                errors.append(f"{name}: must be one of {', '.join(allowed)}")
        if self.chain_ions not in (2, 3):
            errors.append("chain_ions: must be 2 or 3")
        if self.waveform_points < 2:
            errors.append("waveform_points: must be >= 2")
        if self.ramsey_points < 4:
            errors.append("ramsey_points: must be >= 4")
        if not self.rb_lengths or any(v < 1 for v in self.rb_lengths):
            errors.append("rb_lengths: need one or more lengths >= 1")
        if len(self.intensity_weights) != 2 or any(not w > 0 for w in self.intensity_weights):
            errors.append("intensity_weights: need two positive values")
        if self.eta != "auto":
            try:
                if float(self.eta) < 0:
                    errors.append("eta: must be non-negative")
            except ValueError:
                errors.append("eta: must be 'auto' or a number")
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))

    @property
    def species(self):
        return IonSpecies.from_amu(self.mass_amu, self.charge_number)

    @property
    def trap(self):
        return TrapContext(2 * math.pi * self.axial_frequency_hz, self.laser_wavelength_m,
                           math.radians(self.beam_angle_deg), self.species)

    def with_overrides(self, **kw):
        return replace(self, **kw)


_FIELDS = {f.name: f for f in fields(Config)}


def _parse(name, text):
    default = getattr(Config, name)
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if isinstance(default, tuple):
        conv = type(default[0])
        return tuple(conv(v.strip()) for v in text.split(",") if v.strip())
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def loads(text):
    values, errors = {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = _parse(key, val)
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return Config(**values)


def dumps(cfg: Config):
    lines = ["# siapm configuration"]
    for name in _FIELDS:
        lines.append(f"{name} = {_format(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
