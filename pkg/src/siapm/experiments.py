"""Randomized-benchmarking sequences, their compilation to modulated global
pulses, and Monte Carlo simulation under thermal and technical noise.

Qubit convention: |0⟩ is the bright (fluorescing) state and every ion starts
there.  Outcome 0 means "bright".
"""

from dataclasses import dataclass, field
import csv
import io
import math

import numba
import numpy as np

from . import unitary as U
from .rbmodel import laguerre_table

PAULI_LABELS = ("I", "X", "Y", "Z")
CLIFFORD_LABELS = ("I", "X", "Y", "XY", "YX", "XYX")

# gate codes shared by sequences, the compiler and the simulation kernel
G_I, G_X, G_Y, G_Z, G_X2, G_Y2 = range(6)
_GATE_ROT = {G_X: (math.pi, 0.0), G_Y: (math.pi, math.pi / 2),
             G_X2: (math.pi / 2, 0.0), G_Y2: (math.pi / 2, math.pi / 2)}
# π/2 rotations of each Clifford step in time order
CLIFFORD_GATES = ((), (G_X2,), (G_Y2,), (G_X2, G_Y2), (G_Y2, G_X2), (G_X2, G_Y2, G_X2))
_CLIFF_TABLE = np.full((6, 3), -1, dtype=np.int64)
for _i, _g in enumerate(CLIFFORD_GATES):
    _CLIFF_TABLE[_i, :len(_g)] = _g


# -- ideal Bloch-vector tracking ----------------------------------------------
# States are the six axes ±x, ±y, ±z indexed 0..5.

_AXES = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])


def _bloch_rotation(gate):
    if gate == G_I:
        return np.eye(3, dtype=int)
    if gate == G_Z:
        return np.diag([-1, -1, 1])
    theta, phi = _GATE_ROT[gate]
    c, s = round(math.cos(theta)), round(math.sin(theta))
    if phi == 0.0:
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _axis_index(v):
    return int(np.flatnonzero((_AXES == v).all(axis=1))[0])


def _gate_map(gate):
    r = _bloch_rotation(gate)
    return np.array([_axis_index(r @ a) for a in _AXES])


_GATE_MAP = np.array([_gate_map(g) for g in range(6)])


def _clifford_map(c):
    m = np.arange(6)
    for g in CLIFFORD_GATES[c]:
        m = _GATE_MAP[g][m]
    return m


_CLIFF_MAP = np.array([_clifford_map(c) for c in range(6)])
# Cliffords that take each axis state to ±z
_TO_Z = [[c for c in range(6) if _CLIFF_MAP[c][s] in (4, 5)] for s in range(6)]
_TO_Z_ARR = np.array(_TO_Z)


@dataclass(frozen=True)
class RBStep:
    pauli: str
    clifford: int

    def __post_init__(self):
        if self.pauli not in PAULI_LABELS:
            raise ValueError(f"unknown Pauli {self.pauli!r}")
        if not 0 <= self.clifford < 6:
            raise ValueError("Clifford index must be in 0..5")

    @property
    def clifford_label(self):
        return CLIFFORD_LABELS[self.clifford]

    @property
    def gates(self):
        """Gate codes of this step in time order (identity omitted)."""
        p = PAULI_LABELS.index(self.pauli)
        return ((p,) if p else ()) + CLIFFORD_GATES[self.clifford]


@dataclass(frozen=True)
class RBSequence:
    steps: tuple
    predicted_outcome: int

    @property
    def length(self):
        return len(self.steps)

    def __len__(self):
        return len(self.steps)


def draw_codes(rng, n_seq, length):
    """Random Pauli and Clifford codes for ``n_seq`` sequences.

    Every step draws its Pauli from four and its Clifford from six options.
    The final Clifford is drawn from the two that leave the ideal state on
    the z axis, so each sequence has a deterministic ideal outcome.  Returns
    ``(pauli, clifford, outcome)``.
    """
    if length < 1:
        raise ValueError("sequence length must be >= 1")
    pauli = rng.integers(0, 4, size=(n_seq, length))
    cliff = rng.integers(0, 6, size=(n_seq, length))
    last = rng.integers(0, 2, size=n_seq)
    state = np.full(n_seq, 4)
    for m in range(length):
        state = _GATE_MAP[pauli[:, m], state]
        if m == length - 1:
            cliff[:, m] = _TO_Z_ARR[state, last]
        state = _CLIFF_MAP[cliff[:, m], state]
    return pauli, cliff, (state == 5).astype(np.int64)


def gen_sequence(length, rng_seed):
    """A random RB sequence; identical for identical seeds."""
    pauli, cliff, outcome = draw_codes(np.random.default_rng(rng_seed), 1, length)
    steps = tuple(RBStep(PAULI_LABELS[p], int(c)) for p, c in zip(pauli[0], cliff[0]))
    return RBSequence(steps, int(outcome[0]))


def ideal_outcome(seq: RBSequence):
    """Ideal Z-basis outcome by composing the steps' Bloch rotations.

    Returns None if the ideal final state is not on the z axis.
    """
    s = 4
    for step in seq.steps:
        for g in step.gates:
            s = _GATE_MAP[g][s]
    return {4: 0, 5: 1}.get(s)


def ideal_step_unitary(step: RBStep):
    u = U.I2.copy()
    for g in step.gates:
        if g == G_Z:
            u = U.rz(math.pi) @ u
        else:
            u = U.rotation_matrix(*_GATE_ROT[g]) @ u
    return u


# -- compilation --------------------------------------------------------------


def _gate_events(gate, target_ion, n_ions, step, weights, ctx):
    if gate == G_I:
        return []
    if gate == G_Z:
        # a virtual Z(π) is a software frame shift
        off = np.zeros(n_ions)
        off[target_ion] = -math.pi
        return [U.FrameShift(off)]
    theta, phi = _GATE_ROT[gate]
    if n_ions == 1:
        return [U.GlobalPulse(theta, phi, (1.0,), step)]
    return list(U.synthesize_two_ion(target_ion, U.EquatorialRotation(theta, phi), weights,
                                     ctx, step=step).events)


def compile_one_ion(seq: RBSequence):
    gs = U.GateSequence(1)
    for m, step in enumerate(seq.steps, start=1):
        for g in step.gates:
            gs.extend(_gate_events(g, 0, 1, m, None, None))
    return gs


def compile_two_ion(seq_a: RBSequence, seq_b: RBSequence, ctx=None, weights=(1.0, 1.0)):
    """Interleave two RB sequences, ``seq_a`` on ion 0 and ``seq_b`` on ion 1.

    Each step applies ion 0's gates then ion 1's.  X/Y rotations become
    [pulse, modulation, pulse, return-modulation] blocks; Z(π) becomes a frame
    shift and the identity is omitted.
    """
    if len(seq_a) != len(seq_b):
        raise U.ShapeError(f"sequence lengths differ: {len(seq_a)} vs {len(seq_b)}")
    gs = U.GateSequence(2)
    for m, (sa, sb) in enumerate(zip(seq_a.steps, seq_b.steps), start=1):
        for ion, step in ((0, sa), (1, sb)):
            for g in step.gates:
                gs.extend(_gate_events(g, ion, 2, m, weights, ctx))
    return gs


# -- noise model --------------------------------------------------------------


@dataclass(frozen=True)
class ThermalMode:
    """A motional mode seen by the qubits: per-ion η and heating.

    ``fixed_fock`` pins the Fock index for every shot (for hand-checkable
    cases); otherwise the index is drawn from the thermal state with
    n̄_m = n0 + m·delta_n at step m.
    """

    eta: tuple
    n0: float = 0.01
    delta_n: float = 0.0
    fixed_fock: int = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "eta", tuple(float(e) for e in np.atleast_1d(self.eta)))
        if any(e < 0 for e in self.eta) or self.n0 < 0 or self.delta_n < 0:
            raise ValueError("eta and occupations must be non-negative")
        if self.fixed_fock is not None and self.fixed_fock < 0:
            raise ValueError("Fock index must be non-negative")


@dataclass(frozen=True)
class NoiseModel:
    """Error sources for the Monte Carlo simulation.

    Parameters
    ----------
    modes : tuple of ThermalMode
    spam_error : float
        Symmetric readout flip probability.
    dark_spam_error : float
        Probability that a dark ion is detected bright.
    overrotation_sigma : float
        Gaussian pulse-area error (rad), drawn per laser pulse.
    dephasing_per_us : float
        Variance rate (rad² per µs) of a common-mode random phase walk.
    step_error : float
        Per-step Pauli channel: X, Y, Z each with probability step_error/2,
        so the RB decay per step is 1 − 2·step_error.
    d_state_decay_rate : float
        Decay rate (1/s) of the dark state during the sequence.
    fock_granularity : {"step", "pulse"}
        Draw Fock indices once per RB step or once per laser pulse.
    """

    modes: tuple = ()
    spam_error: float = 0.0
    dark_spam_error: float = 0.0
    overrotation_sigma: float = 0.0
    dephasing_per_us: float = 0.0
    step_error: float = 0.0
    d_state_decay_rate: float = 1.2
    pi2_duration: float = 5e-6
    modulation_duration: float = 25e-6
    fock_granularity: str = "step"

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        for name in ("spam_error", "dark_spam_error", "step_error"):
            v = getattr(self, name)
            if not 0 <= v <= 0.5:
                raise ValueError(f"{name} must lie in [0, 1/2], got {v}")
        for name in ("overrotation_sigma", "dephasing_per_us", "d_state_decay_rate",
                     "pi2_duration", "modulation_duration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.fock_granularity not in ("step", "pulse"):
            raise ValueError("fock_granularity must be 'step' or 'pulse'")

    @classmethod
    def ideal(cls):
        return cls(d_state_decay_rate=0.0)


def _eta2(noise, n_ions):
    out = np.zeros((max(len(noise.modes), 1), n_ions))
    for k, mode in enumerate(noise.modes):
        if len(mode.eta) not in (1, n_ions):
            raise ValueError(f"mode {k} has {len(mode.eta)} Lamb-Dicke entries for {n_ions} ions")
        out[k] = np.broadcast_to(np.square(mode.eta), n_ions)
    return out


def _draw_fock(noise, rng, shape_lead, steps):
    """Fock indices of shape shape_lead + (modes,) for RB step numbers ``steps``
    (broadcast against the last axis of shape_lead)."""
    n_modes = max(len(noise.modes), 1)
    out = np.zeros(shape_lead + (n_modes,), dtype=np.int64)
    for k, mode in enumerate(noise.modes):
        if mode.fixed_fock is not None:
            out[..., k] = mode.fixed_fock
            continue
        nbar = mode.n0 + np.asarray(steps) * mode.delta_n
        p = 1.0 / (1.0 + nbar)
        out[..., k] = rng.geometric(np.broadcast_to(p, shape_lead)) - 1
    return out


def _lag_tables(eta2, n_max):
    n_modes, n_ions = eta2.shape
    tab = np.empty((n_modes, n_ions, n_max + 1))
    for k in range(n_modes):
        for i in range(n_ions):
            tab[k, i] = laguerre_table(n_max, eta2[k, i])
    return tab


# -- simulation kernels -------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _rotate(a, b, theta, phi):
    c = math.cos(0.5 * theta)
    s = math.sin(0.5 * theta)
    e = complex(math.cos(phi), math.sin(phi))
    na = c * a - 1j * s * e.conjugate() * b
    nb = -1j * s * e * a + c * b
    return na, nb


@numba.njit(cache=True, inline="always")
def _pauli_kick(a, b, u, eps):
    if u < 0.5 * eps:
        return b, a
    if u < eps:
        return -1j * b, 1j * a
    if u < 1.5 * eps:
        return a, -b
    return a, b


@numba.njit(cache=True)
def _table_kernel(theta, phi, base, gap, dur, tail, fock, lag, overrot, kicks, deph_rate):
    """Evolve shots through one shared pulse table.

    theta/phi: (P, ions) per-ion angle and phase; base: (P,) laser pulse
    area; gap: (P,) idle time before each pulse; fock: (shots, P, modes).
    """
    shots = fock.shape[0]
    n_p, n_ions = theta.shape
    n_modes = fock.shape[2]
    p_bright = np.empty((shots, n_ions))
    use_over = overrot.shape[0] > 0
    use_deph = kicks.shape[0] > 0 and deph_rate > 0
    for s in range(shots):
        a = np.ones(n_ions, dtype=np.complex128)
        b = np.zeros(n_ions, dtype=np.complex128)
        drift = 0.0
        t = 0.0
        t_kick = 0.0
        for j in range(n_p):
            t += gap[j]
            if use_deph:
                drift += math.sqrt(deph_rate * (t - t_kick) * 1e6) * kicks[s, j]
                t_kick = t
            d = overrot[s, j] if use_over else 0.0
            for i in range(n_ions):
                if theta[j, i] == 0.0:
                    continue
                red = 1.0
                for k in range(n_modes):
                    red *= lag[k, i, fock[s, j, k]]
                th = theta[j, i] * (1.0 + d / base[j]) * red
                a[i], b[i] = _rotate(a[i], b[i], th, phi[j, i] + drift)
            t += dur[j]
        for i in range(n_ions):
            p_bright[s, i] = abs(a[i]) ** 2
    return p_bright


@numba.njit(cache=True)
def _rb_kernel(pauli, cliff, cliff_table, lib_n, lib_theta, lib_phi, lib_base, lib_gap,
               lib_dur, lib_tail, lib_frame, fock, lag, overrot, kicks, flips, eps_step,
               deph_rate):
    """Evolve trajectories that each run their own RB code sequence.

    pauli/cliff: (traj, L, targets) codes.  lib_*[target, gate, ...] hold
    each gate's pulses as compiled.  fock: (traj, L, S, modes) with S = 1
    for per-step draws or S = slots for per-pulse draws.
    """
    n_traj, length, n_tgt = pauli.shape
    n_ions = lib_theta.shape[3]
    n_modes = fock.shape[3]
    per_pulse = fock.shape[2] > 1
    use_over = overrot.shape[0] > 0
    use_deph = kicks.shape[0] > 0 and deph_rate > 0
    use_flip = flips.shape[0] > 0 and eps_step > 0
    p_bright = np.empty((n_traj, n_ions))
    duration = np.empty(n_traj)
    gates = np.empty(4, dtype=np.int64)
    for tr in range(n_traj):
        a = np.ones(n_ions, dtype=np.complex128)
        b = np.zeros(n_ions, dtype=np.complex128)
        frame = np.zeros(n_ions)
        t = 0.0
        t_kick = 0.0
        for m in range(length):
            slot = 0
            for tg in range(n_tgt):
                gates[0] = pauli[tr, m, tg]
                for q in range(3):
                    gates[q + 1] = cliff_table[cliff[tr, m, tg], q]
                for q in range(4):
                    g = gates[q]
                    if g <= 0:
                        continue
                    for i in range(n_ions):
                        frame[i] += lib_frame[tg, g, i]
                    for j in range(lib_n[tg, g]):
                        t += lib_gap[tg, g, j]
                        if use_deph:
                            kick = math.sqrt(deph_rate * (t - t_kick) * 1e6) * kicks[tr, m, slot]
                            t_kick = t
                            for i in range(n_ions):
                                frame[i] += kick
                        d = overrot[tr, m, slot] if use_over else 0.0
                        fs = slot if per_pulse else 0
                        for i in range(n_ions):
                            th0 = lib_theta[tg, g, j, i]
                            if th0 == 0.0:
                                continue
                            red = 1.0
                            for k in range(n_modes):
                                red *= lag[k, i, fock[tr, m, fs, k]]
                            th = th0 * (1.0 + d / lib_base[tg, g, j]) * red
                            a[i], b[i] = _rotate(a[i], b[i], th, lib_phi[tg, g, j, i] + frame[i])
                        t += lib_dur[tg, g, j]
                        slot += 1
                    t += lib_tail[tg, g]
            if use_flip:
                for i in range(n_ions):
                    a[i], b[i] = _pauli_kick(a[i], b[i], flips[tr, m, i], eps_step)
        for i in range(n_ions):
            p_bright[tr, i] = abs(a[i]) ** 2
        duration[tr] = t
    return p_bright, duration


# -- pulse tables -------------------------------------------------------------


@dataclass
class PulseTable:
    """Per-ion view of a gate sequence: effective angle and phase of every
    laser pulse, its RB step, and the idle time preceding it."""

    theta: np.ndarray
    phi: np.ndarray
    base: np.ndarray
    step: np.ndarray
    gap: np.ndarray
    duration: np.ndarray
    tail: float
    frame: np.ndarray


def pulse_table(gs: U.GateSequence, pi2_duration=5e-6, modulation_duration=25e-6):
    n = gs.n_ions
    pos, frame = np.zeros(n), np.zeros(n)
    rows, gap = [], 0.0
    for ev in gs.events:
        if isinstance(ev, U.GlobalPulse):
            w = np.asarray(ev.weights)
            rows.append((ev.theta * w, ev.phi + pos + frame, ev.theta, ev.step, gap,
                         pi2_duration * ev.theta / (math.pi / 2)))
            gap = 0.0
        elif isinstance(ev, U.Modulation):
            pos = pos + ev.phases
            gap += modulation_duration
        elif isinstance(ev, U.FrameShift):
            frame = frame + ev.offsets
    if not rows:
        z = np.zeros((0, n))
        return PulseTable(z, z, np.zeros(0), np.zeros(0, int), np.zeros(0), np.zeros(0), gap, frame)
    th, ph, base, st, gp, du = zip(*rows)
    return PulseTable(np.array(th), np.array(ph), np.array(base), np.array(st, dtype=np.int64),
                      np.array(gp), np.array(du), gap, frame)


def _readout(p_bright, duration, noise):
    """Measured bright probability: dark-state decay, asymmetric then
    symmetric readout errors."""
    dark = (1.0 - p_bright) * (1.0 - noise.dark_spam_error)
    dark = dark * np.exp(-noise.d_state_decay_rate * np.asarray(duration))[..., None] \
        if np.ndim(duration) else dark * math.exp(-noise.d_state_decay_rate * duration)
    bright = 1.0 - dark
    return noise.spam_error + (1.0 - 2 * noise.spam_error) * bright


@dataclass
class SimulationResult:
    """Per-shot exact probabilities (after readout errors) and sampled
    outcomes; ``bright_*`` are per-ion means."""

    p_bright: np.ndarray
    outcomes: np.ndarray
    expected: tuple = None

    @property
    def bright_exact(self):
        return self.p_bright.mean(axis=0)

    @property
    def bright_empirical(self):
        return (self.outcomes == 0).mean(axis=0)

    @property
    def success_exact(self):
        return self._success(self.p_bright)

    @property
    def success_empirical(self):
        return self._success((self.outcomes == 0).astype(float))

    def _success(self, bright):
        if self.expected is None:
            raise ValueError("no ideal outcome known for this sequence")
        exp = np.asarray(self.expected)
        return np.where(exp == 0, bright.mean(axis=0), 1.0 - bright.mean(axis=0))


def simulate_sequence(gs: U.GateSequence, noise: NoiseModel, shots, rng_seed, expected=None):
    """Monte Carlo simulation of one gate sequence.

    Each shot draws its own Fock indices (for the RB step recorded on each
    pulse) and technical-noise values.  ``expected`` gives the ideal outcome
    per ion; by default it is taken from the ideal unitaries when they are
    deterministic.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(rng_seed)
    tab = pulse_table(gs, noise.pi2_duration, noise.modulation_duration)
    n_p = tab.theta.shape[0]
    if expected is None:
        expected = _ideal_expected(gs)
    if noise.fock_granularity == "step":
        steps, inverse = np.unique(tab.step, return_inverse=True)
        fock = _draw_fock(noise, rng, (shots, steps.size), steps)[:, inverse, :]
    else:
        fock = _draw_fock(noise, rng, (shots, n_p), tab.step)
    lag = _lag_tables(_eta2(noise, gs.n_ions), int(fock.max(initial=0)))
    over = (rng.normal(0.0, noise.overrotation_sigma, (shots, n_p))
            if noise.overrotation_sigma > 0 else np.zeros((0, 0)))
    kicks = rng.standard_normal((shots, n_p)) if noise.dephasing_per_us > 0 else np.zeros((0, 0))
    if noise.step_error > 0:
        raise ValueError("step_error applies to RB step codes; use run_rb")
    p = _table_kernel(tab.theta, tab.phi, np.where(tab.base > 0, tab.base, 1.0), tab.gap,
                      tab.duration, tab.tail, np.ascontiguousarray(fock), lag, over, kicks,
                      noise.dephasing_per_us)
    total = float(np.sum(tab.gap) + np.sum(tab.duration) + tab.tail)
    measured = _readout(p, total, noise)
    outcomes = (rng.random(measured.shape) >= measured).astype(np.int64)
    return SimulationResult(measured, outcomes, expected)


def _ideal_expected(gs):
    out = []
    for u in U.apply_sequence(gs):
        p = abs(u[0, 0]) ** 2
        if abs(p - 1) < 1e-9:
            out.append(0)
        elif p < 1e-9:
            out.append(1)
        else:
            return None
    return tuple(out)


# -- gate library for RB ------------------------------------------------------


@dataclass
class GateLibrary:
    """Compiled pulses of every gate code for every target ion."""

    n_ions: int
    n: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    base: np.ndarray
    gap: np.ndarray
    dur: np.ndarray
    tail: np.ndarray
    frame: np.ndarray
    n_mods: np.ndarray

    @property
    def slots(self):
        """Maximum number of laser pulses in one (combined) RB step."""
        per_target = self.n[:, [G_X, G_Y]].max(axis=1) + 3 * self.n[:, [G_X2, G_Y2]].max(axis=1)
        return int(per_target.sum())


def build_library(n_ions, ctx=None, weights=(1.0, 1.0), pi2_duration=5e-6,
                  modulation_duration=25e-6):
    frags = {}
    for tg in range(n_ions):
        for g in range(6):
            gs = U.GateSequence(n_ions)
            gs.extend(_gate_events(g, tg, n_ions, 0, weights, ctx))
            frags[tg, g] = gs
    max_p = max(f.n_pulses for f in frags.values())
    shape = (n_ions, 6)
    lib = GateLibrary(n_ions, np.zeros(shape, np.int64), np.zeros(shape + (max_p, n_ions)),
                      np.zeros(shape + (max_p, n_ions)), np.ones(shape + (max_p,)),
                      np.zeros(shape + (max_p,)), np.zeros(shape + (max_p,)), np.zeros(shape),
                      np.zeros(shape + (n_ions,)), np.zeros(shape, np.int64))
    for (tg, g), gs in frags.items():
        frame_shift = np.zeros(n_ions)
        pulses = U.GateSequence(n_ions)
        for ev in gs.events:
            if isinstance(ev, U.FrameShift):
                frame_shift += ev.offsets
            else:
                pulses.append(ev)
        tab = pulse_table(pulses, pi2_duration, modulation_duration)
        k = tab.theta.shape[0]
        lib.n[tg, g] = k
        lib.theta[tg, g, :k] = tab.theta
        lib.phi[tg, g, :k] = tab.phi
        lib.base[tg, g, :k] = np.where(tab.base > 0, tab.base, 1.0)
        lib.gap[tg, g, :k] = tab.gap
        lib.dur[tg, g, :k] = tab.duration
        lib.tail[tg, g] = tab.tail
        lib.frame[tg, g] = frame_shift
        lib.n_mods[tg, g] = gs.n_modulations
        if np.any(np.abs(np.sin(0.5 * tab.frame)) > 1e-9):
            raise RuntimeError("compiled gate leaves a residual positional phase")
    return lib


@dataclass
class RBSamples:
    """Raw Monte Carlo output of :func:`simulate_rb_codes`."""

    p_success: np.ndarray  # (n_seq, shots, ions) exact, after readout errors
    successes: np.ndarray  # (n_seq, ions) counts over shots
    duration: np.ndarray  # (n_seq,)


def simulate_rb_codes(pauli, cliff, outcome, lib: GateLibrary, noise: NoiseModel, shots, rng,
                      chunk_target=4_000_000):
    """Simulate RB code sequences; every shot is an independent trajectory.

    pauli, cliff: (n_seq, L, targets); outcome: (n_seq, targets).
    """
    n_seq, length, n_tgt = pauli.shape
    n_ions = lib.n_ions
    slots = lib.slots
    per_pulse = noise.fock_granularity == "pulse"
    eta2 = _eta2(noise, n_ions)
    steps = np.arange(1, length + 1)
    per_traj = length * (slots if per_pulse else 1) * eta2.shape[0]
    seq_chunk = max(1, chunk_target // max(per_traj * shots, 1))
    p_all = np.empty((n_seq, shots, n_ions))
    dur_all = np.empty(n_seq)
    for s0 in range(0, n_seq, seq_chunk):
        s1 = min(n_seq, s0 + seq_chunk)
        nt = (s1 - s0) * shots
        pc = np.repeat(pauli[s0:s1], shots, axis=0)
        cc = np.repeat(cliff[s0:s1], shots, axis=0)
        if per_pulse:
            fock = _draw_fock(noise, rng, (nt, length, slots), steps[:, None])
        else:
            fock = _draw_fock(noise, rng, (nt, length), steps)[:, :, None, :]
        lag = _lag_tables(eta2, int(fock.max(initial=0)))
        over = (rng.normal(0.0, noise.overrotation_sigma, (nt, length, slots))
                if noise.overrotation_sigma > 0 else np.zeros((0, 0, 0)))
        kicks = (rng.standard_normal((nt, length, slots)) if noise.dephasing_per_us > 0
                 else np.zeros((0, 0, 0)))
        flips = rng.random((nt, length, n_ions)) if noise.step_error > 0 else np.zeros((0, 0, 0))
        p, dur = _rb_kernel(pc, cc, _CLIFF_TABLE, lib.n, lib.theta, lib.phi, lib.base, lib.gap,
                            lib.dur, lib.tail, lib.frame, fock, lag, over, kicks, flips,
                            noise.step_error, noise.dephasing_per_us)
        p_all[s0:s1] = p.reshape(s1 - s0, shots, n_ions)
        dur_all[s0:s1] = dur.reshape(s1 - s0, shots)[:, 0]
    measured = _readout(p_all.reshape(-1, n_ions), np.repeat(dur_all, shots), noise)
    measured = measured.reshape(n_seq, shots, n_ions)
    exp = outcome[:, None, :] if n_tgt == n_ions else outcome[:, None, :1]
    p_success = np.where(exp == 0, measured, 1.0 - measured)
    hits = rng.random(p_success.shape) < p_success
    return RBSamples(p_success, hits.sum(axis=1), dur_all)


# -- datasets -----------------------------------------------------------------

RB_HEADER = ("length", "ion", "mean_fidelity", "sem", "n_sequences", "n_shots")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RBRow:
    length: int
    ion: int  # 1-based
    mean_fidelity: float
    sem: float
    n_sequences: int
    n_shots: int

    def __post_init__(self):
        if not 0 <= self.mean_fidelity <= 1:
            raise DatasetError(f"fidelity {self.mean_fidelity} outside [0, 1]")
        if self.sem < 0:
            raise DatasetError("SEM must be non-negative")


@dataclass
class RBDataset:
    rows: list = field(default_factory=list)
    exact: dict = field(default_factory=dict)  # (length, ion) -> exact-probability mean

    @property
    def ions(self):
        return sorted({r.ion for r in self.rows})

    def rows_for(self, ion):
        return sorted((r for r in self.rows if r.ion == ion), key=lambda r: r.length)

    def to_csv(self):
        buf = io.StringIO()
        buf.write(",".join(RB_HEADER) + "\n")
        for r in self.rows:
            buf.write(f"{r.length},{r.ion},{r.mean_fidelity:.12g},{r.sem:.12g},"
                      f"{r.n_sequences},{r.n_shots}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = list(csv.reader(io.StringIO(text)))
        if not lines:
            raise DatasetError("empty file: expected header " + ",".join(RB_HEADER))
        if tuple(h.strip() for h in lines[0]) != RB_HEADER:
            raise DatasetError("line 1: expected header " + ",".join(RB_HEADER))
        rows = []
        for lineno, rec in enumerate(lines[1:], start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(RB_HEADER):
                raise DatasetError(f"line {lineno}: expected {len(RB_HEADER)} fields, got {len(rec)}")
            try:
                rows.append(RBRow(int(rec[0]), int(rec[1]), float(rec[2]), float(rec[3]),
                                  int(rec[4]), int(rec[5])))
            except (ValueError, DatasetError) as exc:
                raise DatasetError(f"line {lineno}: {exc}") from None
        return cls(rows)


def run_rb(lengths, n_sequences, shots, targets="one-ion", noise=None, rng_seed=0, ctx=None,
           weights=(1.0, 1.0)):
    """Simulated RB experiment.

    ``targets`` is "one-ion" (a lone ion) or "two-ion" (two interleaved
    sequences, one per ion, compiled to modulated global pulses).  Returns an
    RBDataset with 1-based ion labels; ``exact`` holds the Monte Carlo mean
    of the exact success probabilities.
    """
    lengths = [int(v) for v in lengths]
    if not lengths:
        raise ValueError("need at least one sequence length")
    if n_sequences < 1 or shots < 1:
        raise ValueError("n_sequences and shots must be >= 1")
    n_ions = {"one-ion": 1, "two-ion": 2}.get(targets)
    if n_ions is None:
        raise ValueError(f"targets must be 'one-ion' or 'two-ion', got {targets!r}")
    noise = NoiseModel.ideal() if noise is None else noise
    lib = build_library(n_ions, ctx, weights, noise.pi2_duration, noise.modulation_duration)
    seeds = np.random.SeedSequence(rng_seed).spawn(len(lengths))
    ds = RBDataset()
    for length, ss in zip(lengths, seeds):
        rng = np.random.default_rng(ss)
        codes = [draw_codes(rng, n_sequences, length) for _ in range(n_ions)]
        pauli = np.stack([c[0] for c in codes], axis=2)
        cliff = np.stack([c[1] for c in codes], axis=2)
        outcome = np.stack([c[2] for c in codes], axis=1)
        res = simulate_rb_codes(pauli, cliff, outcome, lib, noise, shots, rng)
        frac = res.successes / shots
        for i in range(n_ions):
            f = frac[:, i]
            sem = float(np.std(f, ddof=1) / math.sqrt(n_sequences)) if n_sequences > 1 else 0.0
            # binomial floor with a Laplace-smoothed rate keeps SEM > 0
            total = n_sequences * shots
            p = (res.successes[:, i].sum() + 1) / (total + 2)
            sem = max(sem, math.sqrt(p * (1 - p) / total))
            ds.rows.append(RBRow(length, i + 1, float(f.mean()), sem, n_sequences, shots))
            ds.exact[length, i + 1] = float(res.p_success[:, :, i].mean())
    return ds


def run_ramsey(target_ion, phase_scan, noise=None, shots=100, rng_seed=0, ctx=None,
               weights=(1.0, 1.0)):
    """Two composite π/2 gates on ``target_ion`` (0-based); the second has
    its phase advanced by π + φ so the bright population is (1 + cos φ)/2.

    Returns (exact, empirical), each of shape (len(phase_scan), 2).
    """
    noise = NoiseModel.ideal() if noise is None else noise
    seeds = np.random.SeedSequence(rng_seed).spawn(len(phase_scan))
    exact, emp = [], []
    for phi, ss in zip(phase_scan, seeds):
        gs = U.synthesize_two_ion(target_ion, U.EquatorialRotation(math.pi / 2, 0.0), weights, ctx)
        gs.extend(U.synthesize_two_ion(target_ion, U.EquatorialRotation(math.pi / 2, math.pi + phi),
                                       weights, ctx).events)
        res = simulate_sequence(gs, noise, shots, ss, expected=None)
        exact.append(res.bright_exact)
        emp.append(res.bright_empirical)
    return np.array(exact), np.array(emp)
