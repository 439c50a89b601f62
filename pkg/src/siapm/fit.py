"""Weighted nonlinear least squares (Levenberg-Marquardt) with bound
transforms, plus the RB-decay and Ramsey-sinusoid fits built on it."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import rbmodel


class FitError(ValueError):
    pass


class IllPosedError(FitError):
    pass


class RankDeficiencyError(FitError):
    def __init__(self, message, direction):
        super().__init__(message)
        self.direction = direction


@dataclass
class FitProblem:
    """``model(params)`` must return predictions aligned with ``observations``."""

    model: object
    observations: np.ndarray
    errors: np.ndarray
    initial: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    names: tuple = ()

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        k = self.initial.size
        self.lower = np.full(k, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(k, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.observations.shape != self.errors.shape:
            raise FitError("observations and errors differ in length")
        if np.any(~(self.errors > 0)):
            raise FitError("standard errors must be positive")
        if np.any(self.initial < self.lower) or np.any(self.initial > self.upper):
            raise FitError("initial parameters outside bounds")
        if not self.names:
            self.names = tuple(f"p{i}" for i in range(k))


@dataclass
class FitConfig:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    rel_cost_tol: float = 1e-10
    step_tol: float = 1e-12
    max_iter: int = 200
    max_restarts: int = 3


@dataclass
class FitResult:
    params: np.ndarray
    stderr: np.ndarray
    reduced_chi2: float
    converged: bool
    iterations: int
    names: tuple = ()
    covariance: np.ndarray = None
    extras: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[self.names.index(name)]

    def error(self, name):
        return self.stderr[self.names.index(name)]

    def report(self):
        lines = [f"converged: {self.converged}  iterations: {self.iterations}  "
                 f"reduced chi2: {self.reduced_chi2:.4g}"]
        for n, v, s in zip(self.names, self.params, self.stderr):
            lines.append(f"  {n:>12s} = {v:.6g} +/- {s:.2g}")
        for k, v in self.extras.items():
            lines.append(f"  {k:>12s} = {v:.6g}")
        return "\n".join(lines)

    def to_csv(self):
        rows = ["param,value,stderr"]
        rows += [f"{n},{v:.12g},{s:.12g}" for n, v, s in zip(self.names, self.params, self.stderr)]
        return "\n".join(rows) + "\n"


# -- bound transforms ---------------------------------------------------------
# Internal (unbounded) coordinates u map to parameters p.


def _to_param(u, lo, hi):
    p = np.array(u, dtype=float)
    for i in range(p.size):
        a, b = lo[i], hi[i]
        if np.isfinite(a) and np.isfinite(b):
            p[i] = a + (b - a) / (1.0 + math.exp(-u[i])) if u[i] > -700 else a
        elif np.isfinite(a):
            p[i] = a + math.exp(min(u[i], 700.0))
        elif np.isfinite(b):
            p[i] = b - math.exp(min(u[i], 700.0))
    return p


def _to_internal(p, lo, hi):
    u = np.array(p, dtype=float)
    for i in range(u.size):
        a, b = lo[i], hi[i]
        if np.isfinite(a) and np.isfinite(b):
            t = min(max((p[i] - a) / (b - a), 1e-12), 1 - 1e-12)
            u[i] = math.log(t / (1 - t))
        elif np.isfinite(a):
            u[i] = math.log(max(p[i] - a, 1e-300))
        elif np.isfinite(b):
            u[i] = math.log(max(b - p[i], 1e-300))
    return u


def numeric_jacobian(f, p, lo=None, hi=None, rel_step=1e-6, abs_floor=1e-10):
    """Central-difference Jacobian; falls back to one-sided steps at bounds."""
    p = np.asarray(p, dtype=float)
    lo = np.full(p.size, -np.inf) if lo is None else lo
    hi = np.full(p.size, np.inf) if hi is None else hi
    f0 = np.asarray(f(p))
    jac = np.empty((f0.size, p.size))
    for i in range(p.size):
        h = max(rel_step * abs(p[i]), abs_floor)
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        if up[i] > hi[i]:
            up[i] = p[i]
            jac[:, i] = (f0 - f(dn)) / h
        elif dn[i] < lo[i]:
            dn[i] = p[i]
            jac[:, i] = (f(up) - f0) / h
        else:
            jac[:, i] = (f(up) - f(dn)) / (2 * h)
    return jac


def _levenberg_marquardt(resid_u, u, cfg):
    r = resid_u(u)
    cost = float(r @ r)
    lam = cfg.lambda0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if cost < 1e-30:
            converged = True
            break
        jac = numeric_jacobian(resid_u, u)
        g = jac.T @ r
        a = jac.T @ jac
        diag = np.diag(a).copy()
        diag[diag == 0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                step = -np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_up
                continue
            r_new = resid_u(u + step)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= cfg.lambda_up
        if not accepted:
            converged = True  # no downhill step exists at machine precision
            break
        u = u + step
        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        r, cost = r_new, cost_new
        lam = max(lam / cfg.lambda_down, 1e-12)
        if rel_drop < cfg.rel_cost_tol or np.linalg.norm(step) < cfg.step_tol:
            converged = True
            break
    return u, cost, converged, it


def _stuck_at_bound(u, lo, hi):
    """Internal coordinates pinned where the transform is flat, and a
    re-seeded value just inside the bound for each of them."""
    out = {}
    for i in range(u.size):
        a, b = lo[i], hi[i]
        if np.isfinite(a) and np.isfinite(b) and abs(u[i]) > 15:
            out[i] = math.copysign(6.9, u[i])
        elif (np.isfinite(a) or np.isfinite(b)) and u[i] < -15:
            out[i] = math.log(1e-3)
    return out


def least_squares(problem: FitProblem, config: FitConfig = None):
    """Minimise Σ((model(p) − y)/σ)² by Levenberg-Marquardt.

    Parameters are optimised in transformed coordinates that keep them
    inside their bounds.  Where the transform flattens out at a bound the
    search can stall, so any parameter that ends pinned there is re-seeded
    just inside and the search repeated; the restart is kept only if it
    lowers the cost.  Standard errors come from the inverse of the weighted
    normal matrix JᵀJ evaluated with the Jacobian in the original parameters
    (equivalent to propagating the internal covariance through the
    transform, but well conditioned when a parameter sits near a bound).
    """
    cfg = config or FitConfig()
    lo, hi, sig = problem.lower, problem.upper, problem.errors

    def resid_p(p):
        r = (np.asarray(problem.model(p), dtype=float) - problem.observations) / sig
        if r.shape != problem.observations.shape:
            raise FitError("model output length differs from observations")
        return r

    def resid_u(u):
        return resid_p(_to_param(u, lo, hi))

    u, cost, converged, it = _levenberg_marquardt(resid_u, _to_internal(problem.initial, lo, hi), cfg)
    for _ in range(cfg.max_restarts):
        stuck = _stuck_at_bound(u, lo, hi)
        if not stuck or cost < 1e-30:
            break
        u_try = u.copy()
        for i, v in stuck.items():
            u_try[i] = v
        u2, cost2, conv2, it2 = _levenberg_marquardt(resid_u, u_try, cfg)
        it += it2
        if not cost2 < cost * (1 - 1e-12):
            break
        u, cost, converged = u2, cost2, conv2

    params = _to_param(u, lo, hi)
    jac_p = numeric_jacobian(resid_p, params, lo, hi)
    cov = _covariance(jac_p, problem.names)
    dof = max(problem.observations.size - params.size, 1)
    return FitResult(params, np.sqrt(np.clip(np.diag(cov), 0, None)), cost / dof,
                     converged, it, tuple(problem.names), cov)


def _covariance(jac, names):
    a = jac.T @ jac
    w, v = np.linalg.eigh(a)
    if w.size and (w[0] <= max(w[-1], 1e-300) * 1e-14):
        direction = v[:, 0]
        desc = " + ".join(f"{c:.3g}*{n}" for c, n in zip(direction, names) if abs(c) > 1e-3)
        raise RankDeficiencyError(f"normal matrix is singular along {desc}", direction)
    return (v / w) @ v.T


# -- RB decay fits ------------------------------------------------------------

RB_PARAM_NAMES = ("eps_spam", "eps_step", "delta_n")


def _rb_initial_guess(lengths, f, sem, eta, n0):
    # weighted line in log(2F-1) for each heating guess, using the LD form
    y = np.clip(2 * f - 1, 1e-6, None)
    w = (y / (2 * sem)) ** 2
    best = None
    for dn in np.concatenate(([0.0], np.geomspace(1e-5, 20, 60))):
        motion = rbmodel.rb_fidelity(lengths, rbmodel.RBFitParams(0, 0, dn, n0, eta), "ld")
        z = np.log(y) - np.log(np.clip(2 * motion - 1, 1e-300, None))
        design = np.column_stack([np.ones_like(lengths, dtype=float), lengths])
        coef, *_ = np.linalg.lstsq(design * np.sqrt(w)[:, None], z * np.sqrt(w), rcond=None)
        eps_spam = float(np.clip((1 - math.exp(min(coef[0], 0))) / 2, 1e-6, 0.49))
        eps_step = float(np.clip((1 - math.exp(min(coef[1], 0))) / 2, 1e-7, 0.49))
        model = rbmodel.rb_fidelity(lengths, rbmodel.RBFitParams(eps_spam, eps_step, dn, n0, eta), "ld")
        cost = float(np.sum(((model - f) / sem) ** 2))
        if best is None or cost < best[0]:
            best = (cost, eps_spam, eps_step, max(dn, 1e-6))
    return np.array(best[1:])


def fit_rb_curve(lengths, fidelity, sem, eta, n0=0.01, chi_impl="exact",
                 step_duration=24.6e-6, initial=None, config=None):
    """Fit (ε_SPAM, ε_step, Δn̄) of the heating-aware RB decay to one ion."""
    lengths = np.asarray(lengths, dtype=int)
    fidelity = np.asarray(fidelity, dtype=float)
    sem = np.asarray(sem, dtype=float)
    if np.any(~(sem > 0)):
        raise FitError("zero or negative SEM rows are malformed")
    if np.unique(lengths).size < 4:
        raise IllPosedError("need at least 4 distinct sequence lengths")
    if initial is None:
        initial = _rb_initial_guess(lengths, fidelity, sem, eta, n0)

    def model(p):
        return rbmodel.rb_fidelity(lengths, rbmodel.RBFitParams(p[0], p[1], p[2], n0, eta), chi_impl)

    problem = FitProblem(model, fidelity, sem, initial, [0, 0, 0], [0.5, 0.5, 20.0], RB_PARAM_NAMES)
    res = least_squares(problem, config)
    res.extras["quanta_per_ms"] = rbmodel.heating_rate_per_ms(res.params[2], step_duration)
    res.extras["quanta_per_ms_err"] = rbmodel.heating_rate_per_ms(res.stderr[2], step_duration)
    return res


def fit_rb(dataset, eta, n0=0.01, chi_impl="exact", step_duration=24.6e-6):
    """Fit every ion of an RBDataset independently; returns {ion: FitResult}.

    ``eta`` may be a scalar or a mapping from ion to Lamb-Dicke parameter.
    """
    out = {}
    for ion in dataset.ions:
        rows = dataset.rows_for(ion)
        e = eta[ion] if isinstance(eta, dict) else eta
        out[ion] = fit_rb_curve([r.length for r in rows], [r.mean_fidelity for r in rows],
                                [r.sem for r in rows], e, n0, chi_impl, step_duration)
    return out


# -- sinusoid -----------------------------------------------------------------


def fit_sinusoid(x, y, sems=None):
    """Fit y = offset + (contrast/2)·cos(x − phase).

    Returns a FitResult with parameters (contrast, phase, offset).  Without
    ``sems`` every point gets unit weight and the standard errors are scaled
    by the residual scatter.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise IllPosedError("need at least 4 points")
    if np.ptp(x) <= math.pi:
        raise IllPosedError("phase scan must span more than pi")
    unit = sems is None
    s = np.ones_like(y) if unit else np.asarray(sems, dtype=float)
    # Fourier component at unit frequency as the starting point
    design = np.column_stack([np.ones_like(x), np.cos(x), np.sin(x)])
    coef, *_ = np.linalg.lstsq(design / s[:, None], y / s, rcond=None)
    amp = math.hypot(coef[1], coef[2])
    p0 = np.array([2 * amp, math.atan2(coef[2], coef[1]), coef[0]])

    def model(p):
        return p[2] + 0.5 * p[0] * np.cos(x - p[1])

    res = least_squares(FitProblem(model, y, s, p0, names=("contrast", "phase", "offset")))
    res.params[1] = (res.params[1] + math.pi) % (2 * math.pi) - math.pi
    if unit and x.size > 3:
        scale = math.sqrt(res.reduced_chi2)
        res.stderr = res.stderr * scale
        res.covariance = res.covariance * scale**2
    return res
