"""Finite-temperature rotation fidelity and the heating-aware randomized
benchmarking (RB) decay model.

A rotation of intended angle θ₀ driven on a mode in Fock state n is reduced
to θ₀·L_n(η²).  Thermally averaging cos(θ₀ − θ_n) gives the quantity χ
used throughout this module; the fidelity of a single rotation is (1 + χ)/2.
"""

from dataclasses import dataclass
import math

import numpy as np

from .motion import thermal_weight

DEFAULT_TAIL_TOL = 1e-10
MAX_EXACT_MODES = 2
MAX_EXACT_MULTIMODE_NBAR = 10.0


def laguerre(n, x):
    """Laguerre polynomial L_n(x) by upward three-term recurrence."""
    if n < 0:
        raise ValueError("Laguerre order must be non-negative")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), 1.0 - x
    if n == 0:
        return prev if prev.ndim else float(prev)
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 - x) * cur - k * prev) / (k + 1)
    return cur if cur.ndim else float(cur)


def laguerre_table(n_max, x):
    """Array [L_0(x), ..., L_{n_max}(x)] for scalar x."""
    out = np.empty(n_max + 1)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 1.0 - x
    for k in range(1, n_max):
        out[k + 1] = ((2 * k + 1 - x) * out[k] - k * out[k - 1]) / (k + 1)
    return out


def truncation_order(nbar, tail_tol=DEFAULT_TAIL_TOL):
    """Smallest N with thermal mass beyond index N-1 below ``tail_tol``.

    The mass of n ≥ N is r**N with r = n̄/(1+n̄).
    """
    if nbar <= 0:
        return 1
    r = nbar / (1.0 + nbar)
    return max(1, int(math.ceil(math.log(tail_tol) / math.log(r))))


@dataclass(frozen=True)
class ChiQuery:
    theta0: float
    modes: tuple  # ((nbar, eta), ...)

    def __post_init__(self):
        modes = tuple((float(n), float(e)) for n, e in self.modes)
        object.__setattr__(self, "modes", modes)
        for n, e in modes:
            if n < 0 or e < 0:
                raise ValueError("mode occupations and Lamb-Dicke parameters must be >= 0")


def _check_tail(tail_tol):
    if not 0 < tail_tol <= 1e-6:
        raise ValueError("tail_tol must lie in (0, 1e-6]")


def chi_exact(theta0, nbar, eta, tail_tol=DEFAULT_TAIL_TOL, full_output=False):
    """Thermal average Σ W_n cos(θ₀(1 − L_n(η²))) for one mode.

    The sum stops at the first N whose remaining Boltzmann mass is below
    ``tail_tol``; the neglected terms change the result by at most that mass.
    With ``full_output`` the truncation order and residual mass are returned too.
    """
    _check_tail(tail_tol)
    if nbar < 0 or eta < 0:
        raise ValueError("nbar and eta must be non-negative")
    n_terms = truncation_order(nbar, tail_tol)
    lag = laguerre_table(n_terms - 1, eta * eta)
    w = thermal_weight(np.arange(n_terms), nbar)
    value = float(np.dot(w, np.cos(theta0 * (1.0 - lag))))
    if not full_output:
        return value
    residual = 1.0 - float(np.sum(w)) if nbar > 0 else 0.0
    return value, n_terms, max(residual, 0.0)


def chi_exact_many(theta0, nbars, eta, tail_tol=DEFAULT_TAIL_TOL):
    """chi_exact over an array of occupations sharing θ₀ and η."""
    _check_tail(tail_tol)
    nbars = np.asarray(nbars, dtype=float)
    if np.any(nbars < 0):
        raise ValueError("nbar must be non-negative")
    n_terms = truncation_order(float(nbars.max(initial=0.0)), tail_tol)
    cos_terms = np.cos(theta0 * (1.0 - laguerre_table(n_terms - 1, eta * eta)))
    out = np.empty(nbars.shape)
    flat_n, flat_out = nbars.ravel(), out.ravel()
    idx = np.arange(n_terms)
    chunk = max(1, 2_000_000 // n_terms)
    # each occupation keeps its own truncation order so results do not
    # depend on what else is in the batch
    orders = np.array([truncation_order(nb, tail_tol) for nb in flat_n])
    for s in range(0, flat_n.size, chunk):
        nb = flat_n[s:s + chunk, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            logr = np.where(nb > 0, np.log(nb / (1.0 + nb)), -np.inf)
            w = np.where(idx == 0, 1.0, np.exp(idx * logr)) / (1.0 + nb)
        w[idx >= orders[s:s + chunk, None]] = 0.0
        flat_out[s:s + chunk] = w @ cos_terms
    return out


def chi_ld(theta0, nbar, eta):
    """Lamb-Dicke-limit closed form of χ (valid for η² ≪ 1)."""
    nbar = np.asarray(nbar, dtype=float)
    c = 1.0 - np.cos(theta0 * eta * eta)
    out = 1.0 / (2 * (nbar + 1) - (2 * nbar + 1) / (1 + nbar * c))
    return out if out.ndim else float(out)


def chi_ld_complex(theta0, modes):
    """Multimode Lamb-Dicke χ as the real part of a product of geometric sums.

    ``modes`` is an iterable of (n̄, η) pairs.
    """
    prod = 1.0 + 0.0j
    for nbar, eta in modes:
        prod *= 1.0 / ((nbar + 1.0) - nbar * np.exp(1j * eta * eta * theta0))
    out = np.real(prod)
    return out if np.ndim(out) else float(out)


def chi_multimode(theta0, modes, tail_tol=DEFAULT_TAIL_TOL):
    """Exact multimode χ for at most two modes with n̄ ≤ 10.

    The double sum uses θ_{n1,n2} = θ₀·L_{n1}(η₁²)·L_{n2}(η₂²).  Larger
    problems fall back to :func:`chi_ld_complex`.
    """
    modes = [(float(n), float(e)) for n, e in modes]
    active = [(n, e) for n, e in modes if n > 0 and e > 0]
    if not active:
        return 1.0
    if len(active) == 1:
        return chi_exact(theta0, active[0][0], active[0][1], tail_tol)
    if len(active) > MAX_EXACT_MODES or max(n for n, _ in active) > MAX_EXACT_MULTIMODE_NBAR:
        return chi_ld_complex(theta0, modes)
    (n1, e1), (n2, e2) = active
    k1, k2 = truncation_order(n1, tail_tol / 2), truncation_order(n2, tail_tol / 2)
    l1, l2 = laguerre_table(k1 - 1, e1 * e1), laguerre_table(k2 - 1, e2 * e2)
    w1, w2 = thermal_weight(np.arange(k1), n1), thermal_weight(np.arange(k2), n2)
    return float(w1 @ np.cos(theta0 * (1.0 - np.outer(l1, l2))) @ w2)


def chi(query: ChiQuery, method="exact", tail_tol=DEFAULT_TAIL_TOL):
    if method == "exact":
        return chi_multimode(query.theta0, query.modes, tail_tol)
    if method == "ld":
        return chi_ld_complex(query.theta0, query.modes)
    raise ValueError(f"unknown chi method {method!r}")


def pauli_step_factor(nbar, eta, chi_impl="exact"):
    """(1 − 2ε_P): half of the Pauli steps are π rotations, half are free."""
    return 0.5 * (1.0 + _chi_many(math.pi, nbar, eta, chi_impl))


def clifford_step_factor(nbar, eta, chi_impl="exact"):
    """(1 − 2ε_C) averaged over the six π/2-built Clifford steps."""
    c = _chi_many(math.pi / 2, nbar, eta, chi_impl)
    return clifford_factor_from_chi(c)


def clifford_factor_from_chi(c):
    return (1.0 + 2 * c + 2 * c * c + c * c * c) / 6.0


def _chi_many(theta0, nbar, eta, chi_impl):
    scalar = np.ndim(nbar) == 0
    nb = np.atleast_1d(np.asarray(nbar, dtype=float))
    if np.ndim(eta) == 0:
        if chi_impl == "exact":
            out = chi_exact_many(theta0, nb, float(eta))
        elif chi_impl == "ld":
            out = np.asarray(chi_ld(theta0, nb, float(eta)))
        else:
            raise ValueError(f"unknown chi implementation {chi_impl!r}")
    else:
        # every mode carries the same occupation
        etas = [float(e) for e in eta]
        if chi_impl == "exact":
            out = np.array([chi_multimode(theta0, [(n, e) for e in etas]) for n in nb])
        elif chi_impl == "ld":
            out = np.array([chi_ld_complex(theta0, [(n, e) for e in etas]) for n in nb])
        else:
            raise ValueError(f"unknown chi implementation {chi_impl!r}")
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class RBFitParams:
    """Parameters of the heating-aware RB decay.

    Parameters
    ----------
    eps_spam, eps_step : float
        SPAM error and motion-independent error per step, both in [0, 1/2].
    delta_n : float
        Mean occupation added per step.
    n0 : float
        Occupation before the first step.
    eta : float or tuple of float
        Lamb-Dicke parameter (one entry per mode for multimode evaluation).
    """

    eps_spam: float = 0.0
    eps_step: float = 0.0
    delta_n: float = 0.0
    n0: float = 0.01
    eta: object = 0.0

    def __post_init__(self):
        for name in ("eps_spam", "eps_step"):
            v = getattr(self, name)
            if not 0 <= v <= 0.5:
                raise ValueError(f"{name} must lie in [0, 1/2], got {v}")
        if self.delta_n < 0 or self.n0 < 0:
            raise ValueError("occupations must be non-negative")
        if np.any(np.asarray(self.eta) < 0):
            raise ValueError("eta must be non-negative")
        if np.ndim(self.eta):
            object.__setattr__(self, "eta", tuple(float(e) for e in self.eta))


def step_factors(m_max, p: RBFitParams, chi_impl="exact"):
    """Motional factor P_m·C_m for steps m = 1..m_max."""
    m = np.arange(1, m_max + 1)
    nbar = p.n0 + m * p.delta_n
    if m_max == 0:
        return np.empty(0)
    if np.all(np.asarray(p.eta) == 0):
        return np.ones(m_max)
    return pauli_step_factor(nbar, p.eta, chi_impl) * clifford_step_factor(nbar, p.eta, chi_impl)


def rb_fidelity(l, p: RBFitParams, chi_impl="exact"):
    """Mean RB fidelity after ``l`` steps (scalar or integer array)."""
    lengths = np.asarray(l)
    if np.any(lengths < 0):
        raise ValueError("sequence length must be non-negative")
    lengths = lengths.astype(int)
    l_max = int(lengths.max(initial=0))
    motion = np.concatenate(([1.0], np.cumprod(step_factors(l_max, p, chi_impl))))
    decay = (1 - 2 * p.eps_spam) * (1 - 2 * p.eps_step) ** lengths * motion[lengths]
    out = 0.5 + 0.5 * decay
    return out if out.ndim else float(out)


def heating_rate_per_ms(delta_n_per_step, step_duration):
    """Convert occupation gained per step to quanta per millisecond."""
    if not step_duration > 0:
        raise ValueError("step duration must be positive")
    return delta_n_per_step / step_duration * 1e-3
