"""Single-qubit rotations, chain-wide product unitaries and composite-gate
synthesis for addressing single ions with global pulses.

A chain evolves as a tensor product of independent single-ion rotations, so
a chain unitary is stored as one 2×2 matrix per ion.

Phase bookkeeping: a pulse with laser phase ``phi`` drives ion ``k`` about the
equatorial axis ``phi + position_k + frame_k``, where ``position_k`` is the
accumulated optical phase from crystal deformation (Modulation events) and
``frame_k`` the accumulated software frame (FrameShift events).  A virtual Z
rotation by α on ion k is a frame shift of −α.
"""

from dataclasses import dataclass, field, replace
import math
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import crystal

TWO_PI = 2 * math.pi
MAX_PULSE_ANGLE = math.pi

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class EquatorialRotation:
    """Rotation by ``theta`` about the equatorial axis at azimuth ``phi``."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)


def rotation_matrix(theta, phi=0.0):
    """exp[−iθ(X cosφ + Y sinφ)/2] as a 2×2 complex array."""
    if isinstance(theta, EquatorialRotation):
        theta, phi = theta.theta, theta.phi
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [[c, -1j * np.exp(-1j * phi) * s], [-1j * np.exp(1j * phi) * s, c]],
        dtype=complex,
    )


def rz(alpha):
    """exp(−iαZ/2)."""
    return np.array([[np.exp(-0.5j * alpha), 0], [0, np.exp(0.5j * alpha)]], dtype=complex)


def is_unitary(u, tol=1e-12):
    u = np.asarray(u)
    return (
        np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) < tol
        and abs(abs(np.linalg.det(u)) - 1) < tol
    )


# -- gate sequences -----------------------------------------------------------


@dataclass(frozen=True)
class GlobalPulse:
    """A laser pulse seen by every ion.

    ``theta`` is the base pulse area; ion k rotates by ``theta * weights[k]``.
    ``step`` labels the benchmarking step the pulse belongs to (used by the
    heating model), 0 outside benchmarking.
    """

    theta: float
    phi: float
    weights: tuple
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if any(not w > 0 for w in self.weights):
            raise ValueError("intensity weights must be positive")


@dataclass(frozen=True)
class Modulation:
    """A change of axial confinement to ``x = Δω/ω₀``.

    ``phases`` holds the per-ion optical phase increment produced by the
    move; ``x`` is informational (NaN when the sequence was built from ideal
    phases without a trap model).
    """

    x: float
    phases: tuple

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))


@dataclass(frozen=True)
class FrameShift:
    offsets: tuple

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(float(p) for p in self.offsets))


@dataclass
class GateSequence:
    n_ions: int
    events: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def append(self, event):
        size = len(
            event.weights if isinstance(event, GlobalPulse)
            else event.phases if isinstance(event, Modulation)
            else event.offsets
        )
        if size != self.n_ions:
            raise ShapeError(f"event sized for {size} ions in a {self.n_ions}-ion sequence")
        self.events.append(event)

    def extend(self, events):
        for ev in events:
            self.append(ev)

    @property
    def n_pulses(self):
        return sum(isinstance(e, GlobalPulse) for e in self.events)

    @property
    def n_modulations(self):
        return sum(isinstance(e, Modulation) for e in self.events)

    def to_text(self):
        return "".join(_event_line(e) + "\n" for e in self.events)

    @classmethod
    def from_text(cls, text, n_ions=None):
        events = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            kind, *vals = line.split()
            try:
                nums = [float(v) for v in vals]
                if kind == "pulse":
                    events.append(GlobalPulse(nums[0], nums[1], nums[3:], int(nums[2])))
                elif kind == "modulation":
                    events.append(Modulation(nums[0], nums[1:]))
                elif kind == "frame":
                    events.append(FrameShift(nums))
                else:
                    raise ValueError(f"unknown event kind {kind!r}")
            except (ValueError, IndexError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        if n_ions is None:
            if not events:
                raise ValueError("cannot infer chain size from an empty sequence")
            n_ions = len(_sized(events[0]))
        seq = cls(n_ions)
        seq.extend(events)
        return seq


class ShapeError(ValueError):
    pass


def _sized(e):
    if isinstance(e, GlobalPulse):
        return e.weights
    if isinstance(e, Modulation):
        return e.phases
    return e.offsets


def _fmt(v):
    return format(v, ".12g")


def _event_line(e):
    if isinstance(e, GlobalPulse):
        vals = [e.theta, e.phi, e.step, *e.weights]
        return "pulse " + " ".join(_fmt(v) for v in vals)
    if isinstance(e, Modulation):
        return "modulation " + " ".join(_fmt(v) for v in (e.x, *e.phases))
    return "frame " + " ".join(_fmt(v) for v in e.offsets)


# -- evaluation ---------------------------------------------------------------


def apply_sequence(seq, n_ions=None, frame_correct=True):
    """Net per-ion unitaries of a gate sequence, in time order.

    With ``frame_correct`` the final software frame is undone, so the result
    is the logical unitary (virtual Z gates included exactly).  Without it the
    result is the laboratory-frame unitary, which differs only by a Z
    rotation applied after the sequence.
    """
    n = seq.n_ions if n_ions is None else n_ions
    if n != seq.n_ions:
        raise ShapeError(f"sequence built for {seq.n_ions} ions, asked for {n}")
    pos = np.zeros(n)
    frame = np.zeros(n)
    us = [I2.copy() for _ in range(n)]
    for ev in seq.events:
        if isinstance(ev, GlobalPulse):
            for k in range(n):
                us[k] = rotation_matrix(ev.theta * ev.weights[k], ev.phi + pos[k] + frame[k]) @ us[k]
        elif isinstance(ev, Modulation):
            pos += ev.phases
        elif isinstance(ev, FrameShift):
            frame += ev.offsets
        else:
            raise TypeError(f"unknown event {ev!r}")
    if frame_correct:
        us = [rz(-frame[k]) @ us[k] for k in range(n)]
    return us


def unitary_distance(u, v):
    """Global-phase-insensitive distance 1 − |Tr(U†V)|/2, in [0, 1]."""
    u, v = np.asarray(u), np.asarray(v)
    overlap = abs(np.trace(u.conj().T @ v)) / u.shape[0]
    return max(0.0, 1.0 - overlap)


def distance_up_to_z(u, v):
    """Distance minimised over Z rotations before and after V.

    For 2×2 matrices, max over α, β of |Tr(U† Rz(α) V Rz(β))| reduces to a
    one-dimensional maximisation over a relative phase ψ of
    |e^{2iψ}c₀₀ + c̄₁₁| + |e^{2iψ}c₀₁ + c̄₁₀| with c_ij = conj(U_ij)·V_ij.
    """
    c = np.conj(np.asarray(u)) * np.asarray(v)

    def neg(psi):
        e = np.exp(2j * psi)
        return -(abs(e * c[0, 0] + np.conj(c[1, 1])) + abs(e * c[0, 1] + np.conj(c[1, 0])))

    grid = np.linspace(0, math.pi, 65)
    vals = [neg(p) for p in grid]
    k = int(np.argmin(vals))
    res = minimize_scalar(neg, bounds=(grid[max(k - 1, 0)], grid[min(k + 1, 64)]),
                          method="bounded", options={"xatol": 1e-12})
    best = min(-res.fun, -vals[k])
    return max(0.0, 1.0 - best / 2)


def identity_residual(u, up_to_z=False):
    """Distance of a 2×2 unitary from the identity.

    Computed from the off-diagonal magnitude where possible, which keeps full
    relative precision for residuals far below machine epsilon.
    """
    u = np.asarray(u)
    det = np.linalg.det(u)
    su = u / np.sqrt(det)
    b2 = abs(su[0, 1]) ** 2
    if up_to_z:
        # 1 − |a| with |a|² = 1 − |b|²
        return b2 / (1 + math.sqrt(max(0.0, 1 - b2)))
    return unitary_distance(su, I2)


# -- synthesis ----------------------------------------------------------------


def ideal_modulation(phases):
    return Modulation(math.nan, phases)


def _two_ion_modulation(ctx, branch):
    if ctx is None:
        # crystal shrinks: ion 0 moves towards +z, ion 1 towards -z
        return ideal_modulation((math.pi / 2, -math.pi / 2))
    x = crystal.solve_scaling_for_phase(ctx, (0, 1), 2, math.pi, branch)
    return Modulation(x, crystal.position_phases(ctx, 2, 0.0, x))


def _inverse(mod):
    return Modulation(0.0 if not math.isnan(mod.x) else math.nan, tuple(-p for p in mod.phases))


def synthesize_two_ion(target_ion, target, intensity_weights=(1.0, 1.0), ctx=None,
                       branch="increase", positional_phase=(0.0, 0.0), step=0,
                       return_potential=True):
    """Composite pulse–modulation–pulse gate rotating only ``target_ion``.

    The two pulses have equal area, so the spectator, which sees the second
    pulse shifted by π, is returned to the identity for any intensity
    weights.  Pulse areas above π at any ion are split into repeated blocks.

    Parameters
    ----------
    target_ion : int
        0 or 1.
    target : EquatorialRotation
    intensity_weights : sequence of float
        Relative Rabi frequencies of the two ions.
    ctx : TrapContext, optional
        When given, the modulation is the confinement change that produces a
        π differential phase for this trap; otherwise ideal phases are used.
    positional_phase : sequence of float
        Optical phase of each ion at the start of the gate.
    """
    if target_ion not in (0, 1):
        raise ValueError(f"target ion must be 0 or 1, got {target_ion}")
    w = tuple(float(v) for v in intensity_weights)
    if len(w) != 2 or any(not v > 0 for v in w):
        raise ValueError("need two positive intensity weights")
    if not isinstance(target, EquatorialRotation):
        target = EquatorialRotation(*target)
    seq = GateSequence(2)
    if target.theta == 0:
        return seq

    mod = _two_ion_modulation(ctx, branch)
    ret = _inverse(mod)
    base = target.theta / (2 * w[target_ion])
    reps = max(1, math.ceil(base * max(w) / MAX_PULSE_ANGLE - 1e-12))
    base /= reps
    pos = np.array(positional_phase, dtype=float)
    for _ in range(reps):
        seq.append(GlobalPulse(base, (target.phi - pos[target_ion]) % TWO_PI, w, step))
        seq.append(mod)
        pos = pos + mod.phases
        seq.append(GlobalPulse(base, (target.phi - pos[target_ion]) % TWO_PI, w, step))
        if return_potential:
            seq.append(ret)
            pos = pos + ret.phases
    return seq


def _check_equatorial_pi(phases, pair):
    d = (phases[pair[1]] - phases[pair[0]]) % TWO_PI
    return abs(d - math.pi) < 1e-6


def _three_ion_modulations(ctx):
    if ctx is None:
        edge = ideal_modulation((-math.pi / 2, 0.0, math.pi / 2))
        adj = ideal_modulation((-math.pi, 0.0, math.pi))
    else:
        xe = crystal.solve_scaling_for_phase(ctx, (0, 2), 3, math.pi, "decrease")
        xa = crystal.solve_scaling_for_phase(ctx, (0, 1), 3, math.pi, "decrease")
        edge = Modulation(xe, crystal.position_phases(ctx, 3, 0.0, xe))
        adj = Modulation(xa, crystal.position_phases(ctx, 3, 0.0, xa))
    return edge, adj


def equatorial_part(u):
    """Split a 2×2 unitary into (θ, φ) of its rotation axis projected on the
    equator, keeping the full rotation angle: the equatorial rotation closest
    in the sense used by the analytic four-pulse prescription."""
    su = u / np.sqrt(np.linalg.det(u))
    a, b = su[0, 0], su[0, 1]
    # su = cos(t/2) I − i sin(t/2) n·σ
    cos_half = float(np.clip(a.real, -1, 1))
    nx_s, ny_s = -b.imag, -b.real  # sin(t/2)·(n_x, n_y)
    theta = 2 * math.acos(cos_half)
    phi = math.atan2(ny_s, nx_s)
    return theta, phi


def _four_pulse(theta1, phi1, theta2, phi2, edge, adj, ret_edge, ret_adj):
    w = (1.0, 1.0, 1.0)
    seq = GateSequence(3)
    pos = np.zeros(3)
    seq.append(GlobalPulse(theta1, phi1 - pos[0], w))
    seq.append(edge)
    pos += edge.phases
    seq.append(GlobalPulse(theta1, phi1 - pos[0], w))
    seq.append(ret_edge)
    pos += ret_edge.phases
    seq.append(GlobalPulse(theta2, phi2 - pos[1], w))
    seq.append(adj)
    pos += adj.phases
    seq.append(GlobalPulse(theta2, phi2 - pos[1], w))
    seq.append(ret_adj)
    return seq


@dataclass
class ThreeIonPlan:
    theta1: float
    phi1: float
    theta2: float
    phi2: float
    edge: Modulation
    adjacent: Modulation

    def build(self, theta2=None, phi2=None):
        t2 = self.theta2 if theta2 is None else theta2
        p2 = self.phi2 if phi2 is None else phi2
        return _four_pulse(self.theta1, self.phi1, t2, p2, self.edge, self.adjacent,
                           _inverse(self.edge), _inverse(self.adjacent))


def plan_three_ion(r1, r2=EquatorialRotation(0.0), ctx=None):
    """Analytic four-pulse plan for rotations ``r1`` on ion 0 and ``r2`` on
    ion 1 with ion 2 untouched (equal beam intensities)."""
    if not isinstance(r1, EquatorialRotation):
        r1 = EquatorialRotation(*r1)
    if not isinstance(r2, EquatorialRotation):
        r2 = EquatorialRotation(*r2)
    edge, adj = _three_ion_modulations(ctx)
    theta1, phi1 = r1.theta / 2, r1.phi
    # ion 1 after the first two pulses
    rel = (edge.phases[1] - edge.phases[0])
    mid = rotation_matrix(theta1, phi1 + rel) @ rotation_matrix(theta1, phi1)
    # remaining rotation 2θ₂ about φ₂ should take `mid` to r2
    theta_n, phi_n = equatorial_part(rotation_matrix(r2.theta, r2.phi) @ mid.conj().T)
    return ThreeIonPlan(theta1, phi1, theta_n / 2, phi_n, edge, adj)


def synthesize_three_ion(r1, r2=EquatorialRotation(0.0), ctx=None):
    """Four-pulse sequence for a three-ion chain using the analytic choice
    of the second pulse pair."""
    return plan_three_ion(r1, r2, ctx).build()


# -- numerical cancellation ---------------------------------------------------


@dataclass
class SequenceTemplate:
    """A family of gate sequences indexed by free parameters."""

    build: Callable[[Sequence[float]], GateSequence]
    initial: tuple
    names: tuple = ()


@dataclass
class CancellationResult:
    sequence: GateSequence
    params: tuple
    residual: float
    converged: bool
    evaluations: int


_GOLDEN = (math.sqrt(5) - 1) / 2


def _golden(f, a, b, tol):
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def solve_cancellation(template, spectator_ion, up_to_z=True, target=1e-8,
                       max_sweeps=400, restarts=4):
    """Tune the template's free parameters so the spectator ion's net
    unitary approaches the identity.

    Coordinate descent with golden-section line searches, restarted from
    starting points shifted by quarter turns.  Returns the best sequence found
    together with its residual; ``converged`` is False if the residual stays
    above ``target``.
    """
    evals = 0

    def objective(p):
        nonlocal evals
        evals += 1
        u = apply_sequence(template.build(p))[spectator_ion]
        su = u / np.sqrt(np.linalg.det(u))
        if up_to_z:
            return abs(su[0, 1]) ** 2
        return unitary_distance(su, I2)

    best_p, best_f = None, math.inf
    x0 = np.array(template.initial, dtype=float)
    for q in range(restarts):
        p = x0 + q * math.pi / 2
        fp = objective(p)
        span = np.full(p.size, math.pi)
        for _ in range(max_sweeps):
            f_start = fp
            for i in range(p.size):
                def line(t, i=i):
                    trial = p.copy()
                    trial[i] = t
                    return objective(trial)
                t, ft = _golden(line, p[i] - span[i], p[i] + span[i], 1e-13 * max(1, abs(p[i])))
                if ft < fp:
                    span[i] = max(4 * abs(t - p[i]), 1e-9)
                    p[i], fp = t, ft
                else:
                    span[i] = max(span[i] / 4, 1e-9)
            if fp == 0 or f_start - fp <= 1e-22 * max(f_start, 1e-300) and np.all(span <= 1e-8):
                break
        if fp < best_f - 1e-18 or (
            abs(fp - best_f) <= 1e-18 and np.linalg.norm(p - x0) < np.linalg.norm(best_p - x0)
        ):
            best_p, best_f = p.copy(), fp
        if best_f < 1e-24:
            break
    seq = template.build(best_p)
    u = apply_sequence(seq)[spectator_ion]
    residual = identity_residual(u, up_to_z=up_to_z)
    return CancellationResult(seq, tuple(best_p), residual, residual < target, evals)


def two_ion_template(target_ion, target, intensity_weights=(1.0, 1.0)):
    """Template whose free parameter is the area of the second pulse."""
    base = synthesize_two_ion(target_ion, target, intensity_weights)
    pulses = [i for i, e in enumerate(base.events) if isinstance(e, GlobalPulse)]
    if len(pulses) != 2:
        raise ValueError("template needs a single pulse pair (no splitting)")

    def build(p):
        events = list(base.events)
        events[pulses[1]] = replace(events[pulses[1]], theta=float(p[0]))
        return GateSequence(2, events)

    return SequenceTemplate(build, (0.0,), ("theta_second",))


def three_ion_template(r1, r2=EquatorialRotation(0.0), ctx=None):
    """Template with the second pulse pair's (θ₂, φ₂) free, started from the
    analytic choice."""
    plan = plan_three_ion(r1, r2, ctx)
    return SequenceTemplate(lambda p: plan.build(p[0], p[1]), (plan.theta2, plan.phi2),
                            ("theta2", "phi2"))
