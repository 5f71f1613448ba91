"""Weighted nonlinear least squares plus the package's two standard models.

The engine is a damped Gauss-Newton iteration (Levenberg-Marquardt style):
the normal matrix is regularized with a multiplicative damping term that
grows x10 on a failed step and shrinks x10 on success, starting at 1e-3.
Jacobians are central differences with per-parameter step max(1e-6*|p|, 1e-9).
Convergence: relative chi^2 change < 1e-10 on an accepted step, or step norm
< 1e-12 * (1 + |p|); at most 200 step attempts, after which the report is
returned with converged=False.  Parameter bounds are handled by clipping
proposals into the box.

Model functions:

* ``saturation_model`` — detected rate vs pump intensity,
  y = F1*I/(2*I_sat + I) + F2*I.  The 2*I_sat denominator convention makes
  the curve reach half its background-subtracted plateau at I = 2*I_sat.
* ``g2_recovery_model`` — antibunching dip,
  g2(tau) = baseline - (baseline - g2_0) * exp(-k*tau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FitReport, PhotonLabError
from .correlation import G2Estimate


class SingularNormalMatrix(PhotonLabError):
    """The damped normal matrix is singular; the model cannot move any parameter."""


class NonFiniteModel(PhotonLabError):
    """The model returned NAN/INF at the initial parameters."""


class InsufficientData(PhotonLabError):
    """Fewer data points than the fit needs."""


class NonPositiveRate(PhotonLabError):
    """A rate parameter that must be positive is not."""


@dataclass(frozen=True, eq=False)
class XYData:
    """Abscissae, ordinates and 1-sigma weights of a curve to fit."""

    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None  # None = unweighted (all ones)

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        sigma = np.ones_like(y) if self.sigma is None else np.ascontiguousarray(self.sigma, dtype=float)
        if not (x.shape == y.shape == sigma.shape) or x.ndim != 1:
            raise InsufficientData("x, y, sigma must be 1-d arrays of equal length")
        if np.any(sigma <= 0):
            raise InsufficientData("sigma must be positive")
        for name, arr in (("x", x), ("y", y), ("sigma", sigma)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.x.size)


def central_diff_jacobian(model, x, p, step_scale: float = 1.0) -> np.ndarray:
    """d model / d p_j by central differences, step max(1e-6*|p_j|, 1e-9)*step_scale."""
    p = np.asarray(p, dtype=float)
    n = len(x)
    jac = np.empty((n, p.size), dtype=float)
    for j in range(p.size):
        h = max(1e-6 * abs(p[j]), 1e-9) * step_scale
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (np.asarray(model(x, up), float) - np.asarray(model(x, dn), float)) / (2.0 * h)
    return jac


def _clip(p, bounds):
    if bounds is None:
        return p
    lo, hi = bounds
    return np.clip(p, lo, hi)


def fit_least_squares(
    model,
    data: XYData,
    p0,
    bounds=None,
    max_iter: int = 200,
    lambda0: float = 1e-3,
    chi2_rtol: float = 1e-10,
    step_tol: float = 1e-12,
) -> FitReport:
    """Minimize sum(((y - model(x, p)) / sigma)^2) over p.

    ``model(x, p)`` must return an array like ``y``.  ``bounds`` is an
    optional (lo, hi) pair of arrays; proposals are clipped into the box.
    The covariance is (J^T W J)^-1 * chi2/dof evaluated at the solution.
    """
    p = np.asarray(p0, dtype=float).copy()
    if not np.all(np.isfinite(p)):
        raise NonFiniteModel("initial parameters must be finite")
    if len(data) < p.size + 1:
        raise InsufficientData(f"need at least {p.size + 1} points, got {len(data)}")
    p = _clip(p, bounds)

    x, y, sigma = data.x, data.y, data.sigma

    def chi2_at(params):
        f = np.asarray(model(x, params), dtype=float)
        if not np.all(np.isfinite(f)):
            return None, np.inf
        r = (y - f) / sigma
        return r, float(r @ r)

    r, chi2 = chi2_at(p)
    if r is None:
        raise NonFiniteModel("model not evaluable at the initial parameters")

    lam = lambda0
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        jac_w = central_diff_jacobian(model, x, p) / sigma[:, None]
        normal = jac_w.T @ jac_w
        grad = jac_w.T @ r
        damp = np.diag(normal).copy()
        if not np.any(damp > 0):
            if np.allclose(grad, 0.0):
                raise SingularNormalMatrix("model is locally independent of every parameter")
            damp[:] = 1.0
        damp[damp <= 0] = damp[damp > 0].max() if np.any(damp > 0) else 1.0
        try:
            step = np.linalg.solve(normal + lam * np.diag(damp), grad)
        except np.linalg.LinAlgError:
            raise SingularNormalMatrix("damped normal matrix is singular") from None

        proposal = _clip(p + step, bounds)
        taken = proposal - p
        r_new, chi2_new = chi2_at(proposal)
        if r_new is not None and chi2_new <= chi2:
            drop = chi2 - chi2_new
            p, r, chi2 = proposal, r_new, chi2_new
            lam = max(lam / 10.0, 1e-15)
            if drop <= chi2_rtol * max(chi2, 1e-300):
                converged = True
                break
            if np.linalg.norm(taken) < step_tol * (1.0 + np.linalg.norm(p)):
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e15:
                break  # stalled; report converged=False

    dof = max(len(data) - p.size, 1)
    jac_w = central_diff_jacobian(model, x, p) / sigma[:, None]
    normal = jac_w.T @ jac_w
    extras = {}
    try:
        cov = np.linalg.inv(normal) * (chi2 / dof)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(normal) * (chi2 / dof)
        extras["singular_covariance"] = True
    cov = 0.5 * (cov + cov.T)
    std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitReport(
        names=tuple(f"p{j}" for j in range(p.size)),
        values=p, std_errors=std, covariance=cov,
        chi2=chi2, dof=len(data) - p.size, converged=converged, n_iter=n_iter,
        extras=extras,
    )


def _rename(report: FitReport, names, extras=None) -> FitReport:
    merged = dict(report.extras)
    merged.update(extras or {})
    return FitReport(
        names=tuple(names), values=report.values, std_errors=report.std_errors,
        covariance=report.covariance, chi2=report.chi2, dof=report.dof,
        converged=report.converged, n_iter=report.n_iter, extras=merged,
    )


# ---------------------------------------------------------------------------
# saturation curve


def saturation_model(intensity, params):
    """Detected rate F1*I/(2*I_sat + I) + F2*I for params (F1, I_sat, F2)."""
    f1, i_sat, f2 = params
    intensity = np.asarray(intensity, dtype=float)
    return f1 * intensity / (2.0 * i_sat + intensity) + f2 * intensity


def _weighted_line_chi2(x, y, sigma):
    """chi^2 of the best weighted straight line a + b*x (the no-knee comparison)."""
    w = 1.0 / sigma
    design = np.stack([w, w * x], axis=1)
    coef, *_ = np.linalg.lstsq(design, y * w, rcond=None)
    resid = y * w - design @ coef
    return float(resid @ resid)


def fit_saturation(data: XYData, p0=None) -> FitReport:
    """Fit the saturation curve; returns parameters (F1, I_sat, F2).

    Auto-initialization when p0 is None: F2 from the slope of the top-decile
    intensities, I_sat from the intensity where the background-subtracted
    curve reaches half its plateau (the model does so at I = 2*I_sat), F1
    from the plateau itself.  A ``no_knee`` flag is set when the data are
    indistinguishable from a straight line (chi^2 improvement < 4 over the
    best line); the fit is still returned.
    """
    if len(data) < 4:
        raise InsufficientData("saturation fit needs at least 4 points")
    x, y = data.x, data.y
    if p0 is None:
        order = np.argsort(x)
        xs, ys = x[order], y[order]
        n_top = max(2, len(data) // 10)
        top_x, top_y = xs[-n_top:], ys[-n_top:]
        if np.ptp(top_x) > 0:
            slope = np.polyfit(top_x, top_y, 1)[0]
        else:
            slope = 0.0
        f2_init = max(float(slope), 0.0)
        y_sub = ys - f2_init * xs
        f1_init = max(float(y_sub.max()), 1e-12 * max(float(np.abs(y).max()), 1.0))
        half = f1_init / 2.0
        above = np.nonzero(y_sub >= half)[0]
        x_half = float(xs[above[0]]) if above.size else float(np.median(xs))
        i_sat_init = max(x_half / 2.0, 1e-12 * float(xs.max()))
        p0 = np.array([f1_init, i_sat_init, f2_init])
    else:
        p0 = np.asarray(p0, dtype=float)

    bounds = (np.array([0.0, 1e-300, 0.0]), np.array([np.inf, np.inf, np.inf]))
    report = fit_least_squares(saturation_model, data, p0, bounds=bounds)
    chi2_line = _weighted_line_chi2(data.x, data.y, data.sigma)
    no_knee = (chi2_line - report.chi2) < 4.0
    return _rename(
        report, ("F1", "I_sat", "F2"),
        extras={"model": "saturation", "no_knee": bool(no_knee)},
    )


# ---------------------------------------------------------------------------
# antibunching dip


def g2_recovery_model(tau_s, params, baseline: float | None = None):
    """g2(tau) = b - (b - g2_0) * exp(-k*tau); params (g2_0, k) or (g2_0, k, b)."""
    if baseline is None:
        g2_0, k, b = params
    else:
        g2_0, k = params
        b = baseline
    tau_s = np.asarray(tau_s, dtype=float)
    return b - (b - g2_0) * np.exp(-k * tau_s)


def fit_g2(
    est: G2Estimate, p0=None, fix_baseline: bool = True, baseline: float = 1.0
) -> FitReport:
    """Fit the antibunching dip of a G2Estimate.

    Reports g2_0 and the recovery rate k (s^-1), the derived dip width 2/k
    with first-order error propagation, and the single-emitter verdict
    g2_0 + sigma(g2_0) < 0.5.  With ``fix_baseline`` (default) the long-delay
    asymptote is pinned to ``baseline``; free it to absorb normalization bias
    on external data.
    """
    tau = est.tau_centers_s
    data = XYData(tau, est.g2, est.sigma)
    if p0 is None:
        head = max(1, len(data) // 50)
        g2_0_init = float(np.clip(np.mean(est.g2[:head]), 0.0, baseline))
        # half-recovery delay tau_half satisfies g2 = (baseline + g2_0)/2 at ln2/k
        half_level = (baseline + g2_0_init) / 2.0
        above = np.nonzero(est.g2 >= half_level)[0]
        tau_half = float(tau[above[0]]) if above.size else float(tau[-1]) / 5.0
        k_init = np.log(2.0) / tau_half if tau_half > 0 else 1.0 / float(tau[-1])
        p0 = [g2_0_init, k_init] if fix_baseline else [g2_0_init, k_init, baseline]
    p0 = np.asarray(p0, dtype=float)
    if p0[1] <= 0:
        raise NonPositiveRate("initial recovery rate k must be positive")

    if fix_baseline:
        model = lambda t, p: g2_recovery_model(t, p, baseline=baseline)
        lo = np.array([0.0, 1e-300])
        hi = np.array([baseline, np.inf])
        names = ("g2_0", "k")
    else:
        model = lambda t, p: g2_recovery_model(t, p)
        lo = np.array([0.0, 1e-300, 0.0])
        hi = np.array([np.inf, np.inf, np.inf])
        names = ("g2_0", "k", "baseline")

    report = fit_least_squares(model, data, p0, bounds=(lo, hi))
    g2_0, k = float(report.values[0]), float(report.values[1])
    sig_g2_0, sig_k = float(report.std_errors[0]), float(report.std_errors[1])
    base = float(report.values[2]) if not fix_baseline else baseline

    # amplitude of the dip and its significance; a flat curve leaves k undetermined
    amplitude = base - g2_0
    if fix_baseline:
        sig_amp = sig_g2_0
    else:
        cov = report.covariance
        sig_amp = float(np.sqrt(max(cov[2, 2] + cov[0, 0] - 2.0 * cov[0, 2], 0.0)))
    degenerate = amplitude <= max(sig_amp, 1e-12 * max(base, 1.0))

    extras = {
        "model": "g2_recovery",
        "baseline": base,
        "baseline_fixed": bool(fix_baseline),
        "dip_width_s": 2.0 / k,
        "dip_width_sigma_s": 2.0 * sig_k / k**2,
        "single_emitter_verdict": bool(g2_0 + sig_g2_0 < 0.5),
        "single_emitter_threshold": 0.5,
        "degenerate_rate": bool(degenerate),
    }
    # coverage sanity: the estimate should straddle the dip recovery
    tau_max = float(tau[-1])
    extras["poor_delay_coverage"] = bool(tau_max < 5.0 / k or float(tau[0]) > 0.3 / k)
    return _rename(report, names, extras=extras)
