"""Least-squares engine and the analysis models used on lattice data.

``nlls_fit`` is a box-constrained Levenberg-Marquardt with Marquardt
(diagonal) scaling and finite-difference Jacobians. Every accepted step lowers
the cost. Uncertainties come from the linearized covariance, scaled by the
reduced chi-square when the data carry no error bars.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .quantities import RB85, AtomSpecies, kB

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


class RankDeficiencyError(FitError):
    def __init__(self, params, msg=""):
        self.params = list(params)
        super().__init__(msg or f"singular Jacobian; degenerate parameters: {', '.join(self.params)}")


class NonConvergenceError(FitError):
    def __init__(self, msg, state=None):
        self.state = state
        super().__init__(msg)


class FitWarning(UserWarning):
    pass


@dataclass
class DataSeries:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None
    x_label: str = "x"
    y_label: str = "y"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape != y.shape:
            raise ValueError("x and y lengths differ")
        order = np.argsort(x, kind="stable")
        self.x, self.y = x[order], y[order]
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float).ravel()
            if s.shape != x.shape:
                raise ValueError("sigma length differs from data")
            if np.any(s <= 0):
                raise ValueError("sigma must be positive")
            self.sigma = s[order]

    def __len__(self):
        return self.x.size


@dataclass
class FitResult:
    names: list
    values: np.ndarray
    errors: np.ndarray
    covariance: np.ndarray
    chi2_red: float
    residuals: np.ndarray          # y - model, same order as the (sorted) data
    iterations: int
    step_norm: float
    cost: float
    message: str = ""
    flags: dict = field(default_factory=dict)
    model: Callable | None = field(default=None, repr=False)

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def error(self, name):
        return float(self.errors[self.names.index(name)])

    def params(self):
        return dict(zip(self.names, map(float, self.values)))

    def to_dict(self):
        return {
            "parameters": {n: {"value": float(v), "stderr": float(e)}
                           for n, v, e in zip(self.names, self.values, self.errors)},
            "chi2_red": float(self.chi2_red),
            "iterations": int(self.iterations),
            "step_norm": float(self.step_norm),
            "cost": float(self.cost),
            "message": self.message,
            "flags": {k: (v if isinstance(v, (bool, int, float, str)) or v is None else str(v))
                      for k, v in self.flags.items()},
        }


def _jacobian(fun, p, f0, lo, hi, rel_step, floor):
    J = np.empty((f0.size, p.size))
    for i in range(p.size):
        h = rel_step * max(abs(p[i]), floor[i])
        # central difference, one-sided at an active bound
        up, dn = p.copy(), p.copy()
        up[i] = p[i] + h
        dn[i] = p[i] - h
        if up[i] > hi[i]:
            J[:, i] = (f0 - fun(dn)) / h
        elif dn[i] < lo[i]:
            J[:, i] = (fun(up) - f0) / h
        else:
            J[:, i] = (fun(up) - fun(dn)) / (2 * h)
    return J


def _degenerate(J, names, tol=1e-10):
    norms = np.linalg.norm(J, axis=0)
    if np.any(norms == 0):
        return [n for n, c in zip(names, norms) if c == 0]
    Js = J / norms
    _, s, Vt = np.linalg.svd(Js, full_matrices=False)
    if s[-1] < tol * s[0]:
        v = np.abs(Vt[-1])
        return [n for n, c in zip(names, v) if c > 0.2]
    return []


def nlls_fit(model, data: DataSeries, p0, bounds=None, names=None, max_iter=200,
             ftol=1e-10, xtol=1e-12, gtol=1e-14, rel_step=1e-6, extra_residuals=None) -> FitResult:
    """Fit ``model(x, *p)`` to ``data`` by Levenberg-Marquardt.

    bounds: (lower, upper) sequences, +-inf allowed. Converged when an accepted
    step changes the cost by < ftol relative, the relative step is < xtol, or
    the scaled gradient vanishes.
    """
    p = np.array(p0, dtype=float)
    n_par = p.size
    names = list(names) if names is not None else [f"p{i}" for i in range(n_par)]
    if len(data) < n_par:
        raise ValueError(f"{len(data)} points cannot constrain {n_par} parameters")
    lo = np.full(n_par, -np.inf) if bounds is None else np.asarray(bounds[0], dtype=float)
    hi = np.full(n_par, np.inf) if bounds is None else np.asarray(bounds[1], dtype=float)
    if np.any(p < lo) or np.any(p > hi):
        raise ValueError("initial guess outside bounds")
    x, y = data.x, data.y
    w = 1 / data.sigma if data.sigma is not None else np.ones_like(y)
    # magnitude floor per parameter for difference steps and relative step
    # norms, so parameters converging to zero keep a resolvable step
    span = hi - lo
    typ = np.where(p != 0, np.abs(p), np.where(np.isfinite(span), span, 1.0))
    floor = 1e-3 * typ

    def resid(q):
        r = (y - model(x, *q)) * w
        if extra_residuals is not None:
            r = np.concatenate([r, np.atleast_1d(extra_residuals(q))])
        return r

    r = resid(p)
    if not np.all(np.isfinite(r)):
        raise FitError("model is not finite at the initial guess")
    cost = 0.5 * r @ r
    lam = 1e-3
    step_norm = 0.0
    it = 0
    message = ""
    converged = False
    while it < max_iter:
        it += 1
        J = _jacobian(resid, p, r, lo, hi, rel_step, floor)
        g = J.T @ r
        A = J.T @ J
        D = np.maximum(np.diag(A), 1e-300)
        g_proj = np.where(((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0)), 0.0, g)
        if np.max(np.abs(g_proj) / np.sqrt(D)) <= gtol * max(math.sqrt(2 * cost), 1e-300):
            message, converged, step_norm = "gradient vanishes", True, 0.0
            break
        # parameters pinned at a bound with the descent direction pointing out stay fixed
        free = ~(((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0)))
        if not free.any():
            message, converged, step_norm = "all parameters pinned at bounds", True, 0.0
            break
        Af = A[np.ix_(free, free)]
        gf = g[free]
        Df = D[free]
        accepted = False
        while lam < 1e16:
            try:
                dpf = -np.linalg.solve(Af + lam * np.diag(Df), gf)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            dp = np.zeros_like(p)
            dp[free] = dpf
            q = np.clip(p + dp, lo, hi)
            rq = resid(q)
            cq = 0.5 * rq @ rq if np.all(np.isfinite(rq)) else np.inf
            if cq <= cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            message, converged, step_norm = "no downhill step (at optimum within precision)", True, 0.0
            break
        step = q - p
        step_norm = float(np.linalg.norm(step / np.maximum(np.abs(p), floor)))
        dcost = cost - cq
        p, r, cost = q, rq, cq
        lam = max(lam / 10, 1e-12)
        log.debug("iter %d cost %.10g lam %.3g step %.3g", it, cost, lam, step_norm)
        if dcost <= ftol * max(cost, 1e-300):
            message, converged = "relative cost change below ftol", True
            # the last damped step can stop short of the optimum, by more than
            # the cost can resolve; finish with undamped Gauss-Newton steps kept
            # while the gradient shrinks and the cost holds to rounding
            J = _jacobian(resid, p, r, lo, hi, rel_step, floor)
            for _ in range(2):
                g = np.linalg.norm(J.T @ r)
                dp = np.linalg.lstsq(J, -r, rcond=None)[0]
                q = np.clip(p + dp, lo, hi)
                rq = resid(q)
                cq = 0.5 * rq @ rq if np.all(np.isfinite(rq)) else np.inf
                Jq = _jacobian(resid, q, rq, lo, hi, rel_step, floor) if np.isfinite(cq) else J
                if not (cq <= cost * (1 + 1e-12)
                        and np.linalg.norm(Jq.T @ rq) < g):
                    break
                J = Jq
                it += 1
                step_norm = float(np.linalg.norm((q - p) / np.maximum(np.abs(p), floor)))
                p, r, cost = q, rq, cq
            break
        if step_norm < xtol:
            message, converged = "step below xtol", True
            break
    if not converged:
        raise NonConvergenceError(f"no convergence after {max_iter} iterations",
                                  state={"params": dict(zip(names, p)), "cost": cost})
    J = _jacobian(resid, p, r, lo, hi, rel_step, floor)
    bad = _degenerate(J, names)
    if bad:
        raise RankDeficiencyError(bad)
    n_dat = len(data)
    dof = max(n_dat - n_par, 1)
    r_data = r[:n_dat]
    chi2_red = float(r_data @ r_data / dof)
    # invert in column-normalized variables: parameters in Hz next to
    # dimensionless ones would otherwise fall below the pinv cutoff
    D = np.linalg.norm(J, axis=0)
    Js = J / D
    cov = np.linalg.pinv(Js.T @ Js) / np.outer(D, D)
    if data.sigma is None:
        cov = cov * chi2_red
    errors = np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(names, p, errors, cov, chi2_red, y - model(x, *p), it, step_norm,
                     float(cost), message, {}, model)


# ---------------------------------------------------------------- analysis models

def transmission(P_T, P_in, P_bg):
    P_T, P_in, P_bg = (np.asarray(v, dtype=float) for v in (P_T, P_in, P_bg))
    if np.any(P_in <= P_bg):
        raise ValueError("incident power must exceed background")
    return (P_T - P_bg) / (P_in - P_bg)


def spectrum_model(delta, OD, delta_ls, gamma_eff, y0):
    """Transmission exp(-OD / (1 + 4 ((delta - delta_ls)/gamma_eff)^2)) + y0."""
    return np.exp(-OD / (1 + 4 * ((delta - delta_ls) / gamma_eff) ** 2)) + y0


SPECTRUM_NAMES = ["OD", "delta_LS", "gamma_eff", "y0"]


def spectrum_guess(data: DataSeries):
    """Dip depth -> OD, dip center -> delta_LS, absorbance half width -> gamma_eff."""
    x, y = data.x, data.y
    n_edge = max(2, len(x) // 10)
    base = np.median(np.concatenate([y[:n_edge], y[-n_edge:]]))
    y0 = float(np.clip(base - 1, -0.2, 0.2))
    i_min = int(np.argmin(y))
    A = -np.log(np.clip(y - y0, 1e-4, 1.0))
    OD = float(np.clip(A.max(), 1e-3, 50))
    half = A >= A.max() / 2
    if half.sum() >= 2:
        idx = np.nonzero(half)[0]
        width = x[idx[-1]] - x[idx[0]]
    else:
        width = (x[-1] - x[0]) / 4
    gamma = float(np.clip(width, 1e6, 100e6))
    return [OD, float(x[i_min]), gamma, y0]


def fit_spectrum(data: DataSeries, p0=None, bounds=None) -> FitResult:
    x = data.x
    if bounds is None:
        bounds = ([0.0, x.min(), 1e6, -0.2], [50.0, x.max(), 100e6, 0.2])
    no_dip = bool(np.min(data.y) > 0.95)
    if no_dip:
        warnings.warn("no absorption dip (min T > 0.95); OD will be near zero", FitWarning)
    guesses = [p0] if p0 is not None else []
    if p0 is None:
        g = spectrum_guess(data)
        lo_, hi_ = bounds
        for fac_od, fac_g in ((1, 1), (2, 0.6), (4, 0.4), (1, 0.5)):
            q = [g[0] * fac_od, g[1], g[2] * fac_g, g[3]]
            guesses.append(list(np.clip(q, lo_, hi_)))
    best = None
    for q in guesses:
        try:
            res = nlls_fit(spectrum_model, data, q, bounds, SPECTRUM_NAMES)
        except FitError as exc:
            last = exc
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise last
    best.flags["no_dip"] = no_dip
    return best


def saturation_model(P_in, P_abs_max, P_sat):
    s = P_in / P_sat
    return P_abs_max * s / (1 + s)


def fit_saturation(data: DataSeries, p0=None) -> FitResult:
    x, y = data.x, data.y
    if p0 is None:
        pmax = 1.2 * y.max()
        i = int(np.argmin(np.abs(y - pmax / 2)))
        p0 = [pmax, max(x[i], x[x > 0].min() if np.any(x > 0) else 1e-12)]
    names = ["P_abs_max", "P_sat"]
    try:
        res = nlls_fit(saturation_model, data, p0, ([0, 0], [np.inf, np.inf]), names)
    except (RankDeficiencyError, NonConvergenceError) as exc:
        # linear data drive P_sat and P_abs_max to infinity at fixed ratio
        warnings.warn(f"rank-deficient saturation fit, only P_abs_max / P_sat is constrained: {exc}",
                      FitWarning)
        raise RankDeficiencyError(names, f"saturation data are linear in P_in ({exc})") from exc
    spans = x.min() < res["P_sat"] < x.max()
    linear = res["P_sat"] > 10 * x.max()
    if linear:
        warnings.warn("rank-deficient saturation fit: P_sat lies far above every incident power",
                      FitWarning)
    elif not spans:
        warnings.warn("incident powers do not bracket P_sat; fit is poorly conditioned", FitWarning)
    res.flags["brackets_P_sat"] = bool(spans)
    res.flags["rank_deficient"] = bool(linear)
    return res


def atom_number(P_abs_max, sigma_P=0.0, species: AtomSpecies = RB85):
    """N = P_abs_max / P_atom_max with linear error propagation."""
    p_atom = species.max_scattered_power
    return P_abs_max / p_atom, sigma_P / p_atom


def lifetime_model(t, amplitude, tau, offset=0.0):
    return amplitude * np.exp(-t / tau) + offset


def fit_lifetime(data: DataSeries, floor=False, p0=None) -> FitResult:
    if len(data) < 4:
        raise ValueError("lifetime fit needs at least 4 points")
    t, y = data.x, data.y
    if p0 is None:
        pos = y > 0
        if pos.sum() >= 2:
            slope, icpt = np.polyfit(t[pos], np.log(y[pos]), 1)
            tau0 = -1 / slope if slope < 0 else 10 * (t.max() - t.min())
            A0 = math.exp(icpt)
        else:
            tau0, A0 = (t.max() - t.min()) / 2, y.max()
        p0 = [A0, tau0] + ([0.0] if floor else [])
    names = ["amplitude", "tau"] + (["offset"] if floor else [])
    lo = [-np.inf, 1e-12] + ([-np.inf] if floor else [])
    hi = [np.inf, np.inf] + ([np.inf] if floor else [])
    p0 = list(np.clip(p0, lo, hi))
    res = nlls_fit(lifetime_model, data, p0, (lo, hi), names)
    span = t.max() - t.min()
    unbounded = res["tau"] > 10 * span
    if unbounded:
        warnings.warn("data show no decay over the sampled range; tau is unbounded", FitWarning)
    res.flags["tau_unbounded"] = bool(unbounded)
    return res


def gaussian(x, amp, center, width):
    return amp * np.exp(-0.5 * ((x - center) / width) ** 2)


def double_gaussian_model(f, base, A1, c1, s1, A2, rho, s2):
    """Main peak at c1, hump at rho * c1 / 2."""
    return base + gaussian(f, A1, c1, s1) + gaussian(f, A2, rho * c1 / 2, s2)


def single_gaussian_model(f, base, A1, c1, s1):
    return base + gaussian(f, A1, c1, s1)


DG_NAMES = ["base", "A1", "c1", "s1", "A2", "rho", "s2"]


def _peak_guess(x, y):
    n_edge = max(2, len(x) // 8)
    base = float(np.median(np.sort(y)[: 2 * n_edge]))
    i = int(np.argmax(y))
    A = float(y[i] - base)
    above = np.nonzero(y - base >= A / 2)[0]
    cont = above[(above >= above[above <= i].min()) & (above <= above[above >= i].max())] \
        if above.size else np.array([i])
    width = max(x[cont.max()] - x[cont.min()], np.min(np.diff(x))) / 2.355
    return base, max(A, 1e-12), float(x[i]), float(width)


def fit_double_gaussian(data: DataSeries, dips=False, ratio_window=0.2) -> FitResult:
    """Main peak plus half-frequency hump; f_ax = main center / 2.

    With dips=True the data are survival-like and are fitted as 1 - y. The
    hump center is tied to half the main center within +-ratio_window. If the
    hump amplitude is consistent with zero a single Gaussian is returned,
    flagged ``single_gaussian``.
    """
    d = DataSeries(data.x, 1 - data.y if dips else data.y, data.sigma)
    x, y = d.x, d.y
    base, A1, c1, s1 = _peak_guess(x, y)
    step = float(np.min(np.diff(x)))
    s1 = max(s1, step / 2)
    hump = np.abs(x - c1 / 2) <= max(ratio_window * c1 / 2, 2 * step)
    A2 = float(max(y[hump].max() - base, 0.05 * A1)) if hump.any() else 0.1 * A1
    p0 = [base, A1, c1, s1, min(A2, A1), 1.0, max(s1 / 2, step / 2)]
    span = x.max() - x.min()
    # widths below half the sampling step are not constrained by the data
    lo = [-np.inf, 0, x.min(), step / 2, 0, 1 - ratio_window, step / 2]
    hi = [np.inf, np.inf, x.max(), span, np.inf, 1 + ratio_window, span]
    p0 = list(np.clip(p0, lo, hi))
    single = None
    try:
        res = nlls_fit(double_gaussian_model, d, p0, (lo, hi), DG_NAMES)
        degenerate = res["A2"] < 2 * res.error("A2") or res["A2"] < 1e-9 * max(res["A1"], 1e-300)
    except (RankDeficiencyError, NonConvergenceError) as exc:
        log.debug("double-Gaussian fit abandoned: %s", exc)
        degenerate = True
    if degenerate:
        single = nlls_fit(single_gaussian_model, d, p0[:4], (lo[:4], hi[:4]), DG_NAMES[:4])
        single.flags["single_gaussian"] = True
        res = single
    else:
        res.flags["single_gaussian"] = False
    res.flags["dips"] = dips
    return res


def extract_fax(res: FitResult):
    """(f_ax, sigma) from a double-Gaussian fit: half the main-peak center."""
    return res["c1"] / 2, res.error("c1") / 2


def fax_model(period, depth, mass=RB85.mass):
    return np.sqrt(depth / (2 * mass)) / period


def fit_fax_vs_period(data: DataSeries, mass=RB85.mass, p0=None) -> FitResult:
    """One-parameter fit of f_ax = sqrt(U0 / 2M) / d_lat. U0 reported in J and kB mK."""
    if len(data) < 3:
        raise ValueError("need at least 3 lattice periods")
    if p0 is None:
        # closed-form least squares in sqrt(U0) as the starting point
        a = 1 / data.x
        w = 1 / data.sigma**2 if data.sigma is not None else np.ones_like(a)
        sq = np.sum(w * a * data.y) / np.sum(w * a * a)
        p0 = [2 * mass * sq**2]
    res = nlls_fit(lambda d, U0: fax_model(d, U0, mass), data, p0, ([0], [np.inf]), ["U0"])
    res.flags["U0_mK"] = res["U0"] / kB * 1e3
    res.flags["U0_mK_err"] = res.error("U0") / kB * 1e3
    return res
