"""Per-pixel nonlinear least-squares 2CXM fitting (Levenberg-Marquardt).

The baseline method: minimize sum_i (Cmyo_model(t_i; eta) - y_i)^2 per pixel,
by default in log-parameter space so returned parameters are strictly
positive. The Jacobian is built by forward finite differences on the log
parameters over the RK4 forward solve.

Pixels are fitted independently; internally the solver runs them as one
vectorized batch with per-pixel damping and acceptance, which is arithmetic-
identical to fitting each pixel alone (no cross-pixel reductions). When
multistart == 1, pixels with byte-identical curves share one fit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalFailureError
from .kinetics import ConcentrationSeries, KineticParams, TimeGrid, solve_2cxm_arrays
from .seeds import derive_rng

__all__ = ["NllsConfig", "PixelFit", "VolumeFit", "fit_pixel", "fit_volume"]

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max-iterations"
STATUS_DEGENERATE = "degenerate"


@dataclass(frozen=True)
class NllsConfig:
    max_iterations: int = 200
    init_eta: KineticParams = field(
        default_factory=lambda: KineticParams(fp=1.0, vp=0.05, ve=0.2, ps=1.0))
    log_space: bool = True
    multistart: int = 1
    damping_init: float = 1e-3
    damping_increase: float = 10.0
    damping_decrease: float = 10.0
    tol_cost: float = 1e-10      # relative cost change
    tol_grad: float = 1e-8       # cost-gradient inf-norm, relative to start
    tol_step: float = 1e-12      # parameter step norm
    seed: int = 0
    substeps: int = 1
    jitter_decades: float = 0.5  # multistart jitter, log10 units
    fd_step: float = 1e-6        # relative FD step on the fit parameters
    eta_min: float = 1e-4        # search box (log-space mode)
    eta_max: float = 1e2
    max_step: float = 1.0        # trust cap on the step norm (log units)
    geodesic: bool = True        # second-order step correction

    def __post_init__(self):
        if min(self.tol_cost, self.tol_grad, self.tol_step) <= 0:
            raise InvalidInputError("tolerances must be > 0")
        if self.multistart < 1 or self.max_iterations < 1:
            raise InvalidInputError("multistart and max_iterations must be >= 1")
        if not (0 < self.eta_min < self.eta_max):
            raise InvalidInputError("need 0 < eta_min < eta_max")


@dataclass(frozen=True)
class PixelFit:
    params: KineticParams
    cost: float
    status: str
    iterations: int


@dataclass(frozen=True)
class VolumeFit:
    params: np.ndarray        # (n_pixels, 4) columns fp, vp, ve, ps
    cost: np.ndarray          # (n_pixels,)
    status: np.ndarray        # (n_pixels,) unicode
    iterations: np.ndarray    # (n_pixels,)

    def maps(self) -> dict[str, np.ndarray]:
        return {name: self.params[:, i].copy()
                for i, name in enumerate(("fp", "vp", "ve", "ps"))}


class _Forward:
    """Batched forward model over one AIF/grid pair."""

    def __init__(self, aif_values: np.ndarray, grid: TimeGrid, config: NllsConfig):
        self.aif_values = np.asarray(aif_values, dtype=float)
        self.grid = grid
        self.config = config

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        """theta: (n, 4) fit-space parameters -> (n, n_time) model curves."""
        eta = np.exp(theta) if self.config.log_space else theta
        with np.errstate(over="ignore", invalid="ignore"):
            eta = np.where(np.isfinite(eta), eta, np.inf)
        bad = ~np.all((eta > 0) & np.isfinite(eta), axis=1)
        safe = np.where(bad[:, None], 1.0, eta)
        _, _, cmyo = solve_2cxm_arrays(
            safe[:, 0], safe[:, 1], safe[:, 2], safe[:, 3],
            self.aif_values, self.grid, substeps=self.config.substeps,
            permissive=True)
        cmyo[bad] = np.inf
        return cmyo


def _solve_damped(jtj, lam, rhs):
    """Solve (JtJ + lam*D) x = rhs per problem; D = clamped Marquardt scaling."""
    diag = np.einsum("pkk->pk", jtj)
    dmax = np.maximum(diag.max(axis=1, keepdims=True), 1e-300)
    D = np.maximum(diag, 1e-6 * dmax)
    A = jtj + lam[:, None, None] * D[:, None, :] * np.eye(jtj.shape[1])
    out = np.empty_like(rhs)
    ok = np.all(np.isfinite(A), axis=(1, 2)) & np.all(np.isfinite(rhs), axis=1)
    for i in range(rhs.shape[0]):
        if not ok[i]:
            out[i] = 0.0
            continue
        try:
            out[i] = np.linalg.solve(A[i], rhs[i])
        except np.linalg.LinAlgError:
            out[i] = rhs[i] / np.maximum(D[i], 1e-300)
    return out


def _lm_batch(y: np.ndarray, theta0: np.ndarray, fwd: _Forward,
              config: NllsConfig):
    """Levenberg-Marquardt on a batch of independent problems.

    y: (P, T) observed curves; theta0: (P, 4) start in fit space. Every
    array operation is elementwise per problem, so results are identical to
    per-pixel runs. The optional geodesic acceleration term (a second-order
    correction from the directional second difference of the model) is what
    lets the fit traverse this model's notoriously sloppy vp/ve valley in
    tens instead of thousands of iterations. Returns
    (theta, cost, status, iterations).
    """
    P = y.shape[0]
    theta = theta0.copy()
    lo, hi = np.log(config.eta_min), np.log(config.eta_max)
    if config.log_space:
        theta = np.clip(theta, lo, hi)

    r = fwd(theta) - y
    cost = np.einsum("pt,pt->p", r, r)
    if not np.all(np.isfinite(cost)):
        raise NumericalFailureError(
            "non-finite cost at the NLLS starting point",
            step=int(np.flatnonzero(~np.isfinite(cost))[0]))

    lam = np.full(P, config.damping_init)
    done = np.zeros(P, dtype=bool)
    status = np.full(P, STATUS_MAX_ITER, dtype="<U16")
    iters = np.zeros(P, dtype=np.int64)
    grad_ref = np.full(P, -1.0)   # first-iteration gradient scale per pixel
    # absolute floor: cost at the f64 rounding level of the data is converged
    cost_floor = 1e-24 * np.maximum(np.einsum("pt,pt->p", y, y), 1e-300)

    for _ in range(config.max_iterations):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        iters[act] += 1
        ta, ra = theta[act], r[act]

        # forward-difference Jacobian on the fit parameters
        h = config.fd_step * np.maximum(1.0, np.abs(ta))
        J = np.empty((act.size, y.shape[1], ta.shape[1]))
        base = ra + y[act]  # = fwd(ta), no extra solve
        for k in range(ta.shape[1]):
            tp = ta.copy()
            tp[:, k] += h[:, k]
            J[:, :, k] = (fwd(tp) - base) / h[:, k][:, None]

        jtj = np.einsum("ptk,ptl->pkl", J, J)
        g = np.einsum("ptk,pt->pk", J, ra)
        gnorm = np.abs(2.0 * g).max(axis=1)
        first = grad_ref[act] < 0
        grad_ref[act[first]] = np.maximum(gnorm[first], 1e-300)
        grad_ok = gnorm <= config.tol_grad * grad_ref[act]

        delta = _solve_damped(jtj, lam[act], -g)

        delta = np.where(np.isfinite(delta), delta, 0.0)
        # keep the second-order probe within a sane region before capping
        with np.errstate(over="ignore"):
            pnorm = np.linalg.norm(delta, axis=1)
        wild = ~np.isfinite(pnorm) | (pnorm > 100.0 * config.max_step)
        probe_scale = np.where(np.isfinite(pnorm) & (pnorm > 0), pnorm, np.inf)
        delta[wild] *= (100.0 * config.max_step / probe_scale[wild])[:, None]
        if config.geodesic:
            hg = 0.1
            with np.errstate(invalid="ignore", over="ignore"):
                rp = fwd(ta + hg * delta) - y[act]
                rm = fwd(ta - hg * delta) - y[act]
                fvv = (rp - 2.0 * ra + rm) / (hg * hg)
            fvv = np.where(np.isfinite(fvv), fvv, 0.0)
            acc = _solve_damped(jtj, lam[act], -0.5 * np.einsum("ptk,pt->pk", J, fvv))
            acc = np.where(np.isfinite(acc), acc, 0.0)
            with np.errstate(over="ignore"):
                use = np.linalg.norm(acc, axis=1) <= 0.75 * np.linalg.norm(delta, axis=1)
            delta = delta + use[:, None] * acc

        with np.errstate(over="ignore"):
            norm = np.linalg.norm(delta, axis=1)
        shrink = ~np.isfinite(norm) | (norm > config.max_step)
        capped = np.where(np.isfinite(norm) & (norm > 0), norm, np.inf)
        delta[shrink] *= (config.max_step / capped[shrink])[:, None]

        cand = ta + delta
        if config.log_space:
            cand = np.clip(cand, lo, hi)
        r_cand = fwd(cand) - y[act]
        with np.errstate(invalid="ignore", over="ignore"):
            cost_cand = np.einsum("pt,pt->p", r_cand, r_cand)
        accept = np.isfinite(cost_cand) & (cost_cand < cost[act])

        step_norm = np.linalg.norm(cand - ta, axis=1)
        rel_drop = (cost[act] - cost_cand) / np.maximum(cost[act], 1e-300)

        upd = act[accept]
        theta[upd] = cand[accept]
        r[upd] = r_cand[accept]
        cost[upd] = cost_cand[accept]
        lam[upd] = np.maximum(lam[upd] / config.damping_decrease, 1e-14)
        rej = act[~accept]
        lam[rej] = np.minimum(lam[rej] * config.damping_increase, 1e14)

        # cost-based stopping only counts undamped (trusted-model) steps
        conv = grad_ok | (cost[act] <= cost_floor[act])
        gauss_newton = lam[act] <= config.damping_init
        conv[accept] |= (rel_drop[accept] < config.tol_cost) & gauss_newton[accept]
        conv[accept] |= step_norm[accept] < config.tol_step
        newly = act[conv]
        done[newly] = True
        status[newly] = STATUS_CONVERGED

    return theta, cost, status, iters


def _fit_batch(y: np.ndarray, aif_values: np.ndarray, grid: TimeGrid,
               config: NllsConfig):
    """Multistart LM over a batch of curves; best cost wins per pixel."""
    P = y.shape[0]
    fwd = _Forward(aif_values, grid, config)
    eta0 = config.init_eta.as_array()
    base = np.log(eta0) if config.log_space else eta0
    theta0 = np.tile(base, (P, 1))

    best = None
    for start in range(config.multistart):
        t0 = theta0
        if start > 0:
            rng = derive_rng(config.seed, f"nlls-start-{start}")
            jitter = rng.uniform(-config.jitter_decades, config.jitter_decades,
                                 size=(P, 4)) * np.log(10.0)
            t0 = theta0 + jitter if config.log_space else theta0 * np.exp(jitter)
        theta, cost, status, iters = _lm_batch(y, t0, fwd, config)
        if best is None:
            best = [theta, cost, status, iters]
        else:
            better = cost < best[1]
            for slot, new in zip(best, (theta, cost, status, iters)):
                slot[better] = new[better]
    theta, cost, status, iters = best
    eta = np.exp(theta) if config.log_space else theta
    return eta, cost, status, iters


def fit_volume(curves: np.ndarray, aif_values: np.ndarray, grid: TimeGrid,
               config: NllsConfig | None = None, threads: int = 1) -> VolumeFit:
    """Fit every pixel curve independently; never aborts on pixel failures.

    curves: (n_pixels, n_time). A degenerate problem (all-zero AIF: the model
    is identically zero for every parameter choice) returns the initial
    parameters with status "degenerate" for all pixels.
    """
    config = config or NllsConfig()
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    aif_values = np.asarray(aif_values, dtype=float)
    if curves.shape[1] != grid.n or aif_values.shape != (grid.n,):
        raise InvalidInputError("curves/AIF lengths must match the time grid")
    P = curves.shape[0]

    if np.max(np.abs(aif_values)) == 0.0:
        eta0 = config.init_eta.as_array()
        return VolumeFit(
            params=np.tile(eta0, (P, 1)),
            cost=np.einsum("pt,pt->p", curves, curves),
            status=np.full(P, STATUS_DEGENERATE, dtype="<U16"),
            iterations=np.zeros(P, dtype=np.int64),
        )

    params = np.empty((P, 4))
    cost = np.empty(P)
    status = np.empty(P, dtype="<U16")
    iters = np.empty(P, dtype=np.int64)

    # identical curves share one fit (only valid without per-pixel jitter)
    if config.multistart == 1:
        uniq, inverse = np.unique(curves, axis=0, return_inverse=True)
    else:
        uniq, inverse = curves, np.arange(P)

    def run(rows: np.ndarray):
        return _fit_batch(uniq[rows], aif_values, grid, config)

    n_chunks = max(1, min(int(threads), uniq.shape[0]))
    chunks = np.array_split(np.arange(uniq.shape[0]), n_chunks)
    if n_chunks == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=n_chunks) as pool:
            results = list(pool.map(run, chunks))

    u_params = np.vstack([res[0] for res in results])
    u_cost = np.concatenate([res[1] for res in results])
    u_status = np.concatenate([res[2] for res in results])
    u_iters = np.concatenate([res[3] for res in results])

    params[:] = u_params[inverse]
    cost[:] = u_cost[inverse]
    status[:] = u_status[inverse]
    iters[:] = u_iters[inverse]
    return VolumeFit(params=params, cost=cost, status=status, iterations=iters)


def fit_pixel(curve: ConcentrationSeries, aif: ConcentrationSeries,
              config: NllsConfig | None = None) -> PixelFit:
    """Fit a single pixel curve; see fit_volume."""
    if curve.grid != aif.grid:
        raise InvalidInputError("curve and AIF must share one time grid")
    vol = fit_volume(curve.values[None, :], aif.values, aif.grid, config)
    fp, vp, ve, ps = vol.params[0]
    return PixelFit(
        params=KineticParams(fp=fp, vp=vp, ve=ve, ps=ps),
        cost=float(vol.cost[0]),
        status=str(vol.status[0]),
        iterations=int(vol.iterations[0]),
    )
