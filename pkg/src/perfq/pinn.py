"""Physics-informed network variants for 2CXM parameter inference.

One fully connected network (two hidden layers of 32 units, each followed by
tanh and training-mode batch normalization) maps normalized time to per-pixel
concentration heads plus a predicted AIF. Per-pixel kinetic parameters are
trainable in log-space alongside the weights. Four variants differ in head
layout and in which ODE residuals enter the loss:

  two-cxm    : Cp/Ce heads; residuals rp, re
  mesh       : two-cxm with (x, y) pixel coordinates appended to the input,
               one network evaluation per (pixel, time) pair
  reduced    : direct Cmyo head + auxiliary Cp head; residual r_myo only
               (the aux head is trained only through r_myo and the
               non-negativity penalty)
  combined   : Cp/Ce heads; residuals rp, re and r_myo

The loss is the pixel-average of four weighted terms: data misfit at the
acquisition samples (tissue + AIF), mean-square ODE residuals at collocation
times, squared concentrations at t=0, and squared negative parts of the
compartment heads at collocation times. Residuals are evaluated in
normalized variables, with every time derivative scaled by 1/sigma_t.

All trainable state updates via Adam on full batches; one iteration sees all
acquisition samples, all collocation points and the t=0 row in a single
forward evaluation (batch-norm statistics are taken over that union batch).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .autodiff import Node, Tape, gradcheck as _gradcheck
from .errors import InvalidInputError, NumericalFailureError
from .kinetics import KineticParams, TimeGrid
from .seeds import derive_rng

__all__ = [
    "Variant",
    "PinnConfig",
    "Normalization",
    "NetworkState",
    "AdamMoments",
    "ForwardHeads",
    "TrainingData",
    "FitResult",
    "LossRecord",
    "init_network",
    "forward",
    "compute_loss",
    "adam_step",
    "train",
    "gradcheck_loss",
    "mesh_coordinates",
]

HIDDEN_UNITS = 32
BN_EPSILON = 1e-5
LOSS_CSV_HEADER = "iter,L_C,L_r,L_b,L_reg,total,mean_Fp,mean_vp,mean_ve,mean_PS"


class Variant(str, Enum):
    TWO_CXM = "2cxm"
    MESH = "2cxm-mesh"
    REDUCED = "reduced"
    COMBINED = "combined"

    @property
    def uses_mesh(self) -> bool:
        return self is Variant.MESH

    @property
    def has_compartment_heads(self) -> bool:
        return self is not Variant.REDUCED


@dataclass(frozen=True)
class PinnConfig:
    variant: Variant = Variant.COMBINED
    iterations: int = 25000
    learning_rate: float = 0.001
    w_conc: float = 5.0      # data-misfit weight
    w_res: float = 1.0       # ODE-residual weight
    w_init: float = 1.0      # t=0 condition weight
    w_reg: float = 1.0       # non-negativity weight
    n_collocation: int = 500
    seed: int = 0
    resample_collocation: bool = False
    init_eta: KineticParams = field(
        default_factory=lambda: KineticParams(fp=1.0, vp=0.05, ve=0.2, ps=1.0))
    log_every: int = 100

    def __post_init__(self):
        if self.iterations < 1 or self.n_collocation < 1 or self.log_every < 1:
            raise InvalidInputError("iterations, n_collocation and log_every must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if min(self.w_conc, self.w_res, self.w_init, self.w_reg) < 0:
            raise InvalidInputError("loss weights must be >= 0")


@dataclass(frozen=True)
class Normalization:
    """Time standardization and concentration scaling of the observed data."""

    mu_t: float
    sigma_t: float
    c_scale: float

    def __post_init__(self):
        if self.sigma_t <= 0 or self.c_scale <= 0:
            raise InvalidInputError("sigma_t and c_scale must be > 0")

    @classmethod
    def from_observations(cls, grid: TimeGrid, aif_values: np.ndarray) -> "Normalization":
        times = grid.times()
        c_scale = float(np.max(aif_values))
        if c_scale <= 0:
            raise InvalidInputError("AIF must have a positive maximum")
        return cls(mu_t=float(times.mean()), sigma_t=float(times.std()), c_scale=c_scale)

    def time(self, t) -> np.ndarray:
        return (np.asarray(t, dtype=float) - self.mu_t) / self.sigma_t

    def conc(self, c) -> np.ndarray:
        return np.asarray(c, dtype=float) / self.c_scale


@dataclass
class NetworkState:
    """All trainable arrays: MLP weights, batch-norm affine, log-parameters."""

    variant: Variant
    n_pixels: int
    input_dim: int
    params: dict

    @property
    def solution_output_count(self) -> int:
        """Number of concentration solutions the net resolves (per Eq.-4-style
        mapping): per-pixel Cp+Ce plus AIF, or per-pixel Cmyo plus AIF."""
        if self.variant is Variant.REDUCED:
            return self.n_pixels + 1
        return 2 * self.n_pixels + 1

    def eta(self) -> dict[str, np.ndarray]:
        """Current kinetic parameters per pixel, strictly positive."""
        return {name: np.exp(self.params[f"log_{name}"])
                for name in ("fp", "vp", "ve", "ps")}

    def copy(self) -> "NetworkState":
        return NetworkState(self.variant, self.n_pixels, self.input_dim,
                            {k: v.copy() for k, v in self.params.items()})


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_network(config: PinnConfig, n_pixels: int, input_dim: int | None = None) -> NetworkState:
    """Glorot-uniform weights, zero biases, unit/zero batch-norm affine and
    log-space parameters at the configured initial values."""
    if n_pixels < 1:
        raise InvalidInputError("n_pixels must be >= 1")
    if input_dim is None:
        input_dim = 3 if config.variant.uses_mesh else 1
    if input_dim not in (1, 3):
        raise InvalidInputError("input_dim must be 1 (time) or 3 (time + mesh)")
    if config.variant.uses_mesh:
        out_width = 3          # cp, ce, aif per (pixel, time) row
    else:
        out_width = 2 * n_pixels + 1

    rng = derive_rng(config.seed, "pinn-init")
    h = HIDDEN_UNITS
    params = {
        "w1": _glorot(rng, input_dim, h), "b1": np.zeros(h),
        "bn1_scale": np.ones(h), "bn1_shift": np.zeros(h),
        "w2": _glorot(rng, h, h), "b2": np.zeros(h),
        "bn2_scale": np.ones(h), "bn2_shift": np.zeros(h),
        "w3": _glorot(rng, h, out_width), "b3": np.zeros(out_width),
    }
    init = config.init_eta
    for name, value in (("fp", init.fp), ("vp", init.vp), ("ve", init.ve), ("ps", init.ps)):
        params[f"log_{name}"] = np.full(n_pixels, np.log(value))
    return NetworkState(config.variant, n_pixels, input_dim, params)


@dataclass
class ForwardHeads:
    """Network outputs with time tangents, all shaped (batch, K) or (batch, 1)."""

    cp: Node | None
    ce: Node | None
    cmyo: Node
    caif: Node
    cp_aux: Node | None
    eta: dict  # param name -> (K,) Node


def _trunk(tape: Tape, leaves: dict, x: Node, n_reference: int | None = None) -> Node:
    h1 = tape.batch_normalize(
        tape.tanh(tape.affine_combine(x, leaves["w1"], leaves["b1"])),
        leaves["bn1_scale"], leaves["bn1_shift"], BN_EPSILON, n_reference)
    h2 = tape.batch_normalize(
        tape.tanh(tape.affine_combine(h1, leaves["w2"], leaves["b2"])),
        leaves["bn2_scale"], leaves["bn2_shift"], BN_EPSILON, n_reference)
    return tape.affine_combine(h2, leaves["w3"], leaves["b3"])


def _register_leaves(tape: Tape, state: NetworkState) -> dict:
    return {name: tape.leaf(name, value) for name, value in state.params.items()}


def forward(tape: Tape, state: NetworkState, t_hat: np.ndarray,
            mesh_hat: np.ndarray | None = None) -> ForwardHeads:
    """Evaluate the network on a batch of normalized times with unit tangents.

    For the mesh variant `mesh_hat` supplies per-pixel (x, y) coordinates in
    [-1, 1]; the network is evaluated once per (pixel, time) pair and heads
    are reassembled to (batch, K). Each returned head carries dC/dt_hat in
    its tangent slot.
    """
    t_hat = np.asarray(t_hat, dtype=float).reshape(-1)
    if t_hat.size < 2:
        raise InvalidInputError("need a batch of >= 2 time points (batch norm)")
    leaves = _register_leaves(tape, state)
    K = state.n_pixels

    if state.variant.uses_mesh:
        if mesh_hat is None:
            raise InvalidInputError("mesh variant requires mesh coordinates")
        mesh_hat = np.asarray(mesh_hat, dtype=float)
        if mesh_hat.shape != (K, 2):
            raise InvalidInputError(f"mesh coordinates must be ({K}, 2)")
        B = t_hat.size
        # pixel-major rows: pixel k occupies rows [k*B, (k+1)*B)
        xin = np.empty((K * B, 3))
        xin[:, 0] = np.tile(t_hat, K)
        xin[:, 1] = np.repeat(mesh_hat[:, 0], B)
        xin[:, 2] = np.repeat(mesh_hat[:, 1], B)
        tangent = np.zeros_like(xin)
        tangent[:, 0] = 1.0
        out = _trunk(tape, leaves, tape.input(xin, tangent))

        def head(col):
            col_node = tape.columns(out, col, col + 1)
            return tape.transpose2d(tape.reshape(col_node, (K, B)))

        cp, ce, caif = head(0), head(1), head(2)
    else:
        x = t_hat[:, None]
        out = _trunk(tape, leaves, tape.input(x, np.ones_like(x)))
        cp = tape.columns(out, 0, K)
        ce = tape.columns(out, K, 2 * K)
        caif = tape.columns(out, 2 * K, 2 * K + 1)

    eta = {name: tape.exp(leaves[f"log_{name}"]) for name in ("fp", "vp", "ve", "ps")}
    if state.variant is Variant.REDUCED:
        # direct Cmyo head; auxiliary Cp head makes r_myo computable
        return ForwardHeads(cp=None, ce=None, cmyo=cp, caif=caif, cp_aux=ce, eta=eta)
    cmyo = tape.add(tape.mul(cp, eta["vp"]), tape.mul(ce, eta["ve"]))
    return ForwardHeads(cp=cp, ce=ce, cmyo=cmyo, caif=caif, cp_aux=None, eta=eta)


def _assemble_heads(tape: Tape, state: NetworkState, raw_cols: tuple,
                    eta: dict) -> ForwardHeads:
    a, b, caif = raw_cols
    if state.variant is Variant.REDUCED:
        return ForwardHeads(cp=None, ce=None, cmyo=a, caif=caif, cp_aux=b, eta=eta)
    cmyo = tape.add(tape.mul(a, eta["vp"]), tape.mul(b, eta["ve"]))
    return ForwardHeads(cp=a, ce=b, cmyo=cmyo, caif=caif, cp_aux=None, eta=eta)


def _forward_segments(tape: Tape, state: NetworkState, t_obs: np.ndarray,
                      t_coll: np.ndarray, t_zero: float,
                      mesh_hat: np.ndarray | None):
    """Training-path evaluation on the union batch [obs | coll | t=0].

    Batch-norm statistics are taken over the observed-time rows only and
    applied to every row; unit time tangents are seeded on the collocation
    rows only. Statistics therefore carry no tangent and the collocation
    heads' tangents are pointwise dC/dt_hat, while reverse-mode gradients
    still flow through the statistics. Returns (obs, coll, zero) ForwardHeads
    with (n_seg, K)-shaped nodes.
    """
    leaves = _register_leaves(tape, state)
    K = state.n_pixels
    n_obs, n_coll = t_obs.size, np.asarray(t_coll).size
    segments = (n_obs, n_coll, 1)
    t_union = np.concatenate([t_obs, t_coll, [t_zero]])
    B = t_union.size

    if state.variant.uses_mesh:
        # segment-major layout, pixel-major inside each segment; the
        # reference block is then the contiguous K*n_obs prefix
        xin = np.empty((K * B, 3))
        tangent = np.zeros_like(xin)
        row = 0
        for seg_t, seeded in ((t_obs, False), (t_coll, True), ([t_zero], False)):
            seg_t = np.asarray(seg_t, dtype=float)
            nb = seg_t.size
            blk = slice(row, row + K * nb)
            xin[blk, 0] = np.tile(seg_t, K)
            xin[blk, 1] = np.repeat(mesh_hat[:, 0], nb)
            xin[blk, 2] = np.repeat(mesh_hat[:, 1], nb)
            if seeded:
                tangent[blk, 0] = 1.0
            row += K * nb
        out = _trunk(tape, leaves, tape.input(xin, tangent), n_reference=K * n_obs)

        def segment_cols(seg_index):
            start = K * sum(segments[:seg_index])
            nb = segments[seg_index]
            block = tape.rows(out, start, start + K * nb)
            cols = []
            for j in range(3):
                coln = tape.columns(block, j, j + 1)
                cols.append(tape.transpose2d(tape.reshape(coln, (K, nb))))
            return tuple(cols)
    else:
        x = t_union[:, None]
        tangent = np.zeros_like(x)
        tangent[n_obs:n_obs + n_coll, 0] = 1.0
        out = _trunk(tape, leaves, tape.input(x, tangent), n_reference=n_obs)
        full_cols = (tape.columns(out, 0, K), tape.columns(out, K, 2 * K),
                     tape.columns(out, 2 * K, 2 * K + 1))

        def segment_cols(seg_index):
            start = sum(segments[:seg_index])
            stop = start + segments[seg_index]
            return tuple(tape.rows(c, start, stop) for c in full_cols)

    eta = {name: tape.exp(leaves[f"log_{name}"]) for name in ("fp", "vp", "ve", "ps")}
    heads = [_assemble_heads(tape, state, segment_cols(i), eta) for i in range(3)]
    return heads[0], heads[1], heads[2]


@dataclass(frozen=True)
class TrainingData:
    """Observed, already-normalized quantities shared by loss evaluations."""

    cmyo_hat: np.ndarray       # (n_obs, K)
    caif_hat: np.ndarray       # (n_obs, 1)
    t_obs_hat: np.ndarray      # (n_obs,)
    t_zero_hat: float          # normalized time of t = 0
    inv_sigma_t: float
    mesh_hat: np.ndarray | None = None


def compute_loss(tape: Tape, state: NetworkState, data: TrainingData,
                 t_coll_hat: np.ndarray, config: PinnConfig):
    """Assemble the full training loss on one tape.

    Returns (loss_node, breakdown) where breakdown holds the unweighted
    pixel-averaged terms (L_C, L_r, L_b, L_reg, per-residual splits) and the
    weighted total as floats.
    """
    obs, coll, zero = _forward_segments(
        tape, state, data.t_obs_hat, np.asarray(t_coll_hat, dtype=float),
        data.t_zero_hat, data.mesh_hat)
    eta = obs.eta
    inv_sigma = tape.constant(data.inv_sigma_t)

    # data misfit (tissue curves + AIF, both normalized)
    obs_myo = tape.constant(data.cmyo_hat)
    obs_aif = tape.constant(data.caif_hat)
    l_conc = tape.add(
        tape.mean0(tape.square(tape.sub(obs.cmyo, obs_myo))),
        tape.mean0(tape.square(tape.sub(obs.caif, obs_aif))),
    )

    # ODE residuals at collocation points, variant-masked
    l_res = tape.constant(np.zeros(state.n_pixels))
    res_parts = {"rp": 0.0, "re": 0.0, "rmyo": 0.0}

    def msq(node):
        return tape.mean0(tape.square(node))

    if state.variant.has_compartment_heads:
        dcp = tape.mul(inv_sigma, tape.tangent_of(coll.cp))
        dce = tape.mul(inv_sigma, tape.tangent_of(coll.ce))
        rp = tape.sub(
            tape.sub(tape.mul(eta["vp"], dcp),
                     tape.mul(eta["ps"], tape.sub(coll.ce, coll.cp))),
            tape.mul(eta["fp"], tape.sub(coll.caif, coll.cp)))
        re = tape.sub(tape.mul(eta["ve"], dce),
                      tape.mul(eta["ps"], tape.sub(coll.cp, coll.ce)))
        lr_p, lr_e = msq(rp), msq(re)
        l_res = tape.add(l_res, tape.add(lr_p, lr_e))
        res_parts["rp"] = float(lr_p.primal.mean())
        res_parts["re"] = float(lr_e.primal.mean())
    if state.variant in (Variant.REDUCED, Variant.COMBINED):
        cp_for_myo = coll.cp_aux if state.variant is Variant.REDUCED else coll.cp
        dmyo = tape.mul(inv_sigma, tape.tangent_of(coll.cmyo))
        rmyo = tape.sub(dmyo, tape.mul(eta["fp"], tape.sub(coll.caif, cp_for_myo)))
        lr_m = msq(rmyo)
        l_res = tape.add(l_res, lr_m)
        res_parts["rmyo"] = float(lr_m.primal.mean())

    # t = 0 condition on every available head
    l_init = tape.add(msq(zero.cmyo), msq(zero.caif))
    if state.variant.has_compartment_heads:
        l_init = tape.add(l_init, tape.add(msq(zero.cp), msq(zero.ce)))

    # non-negativity of the compartment heads at collocation points
    if state.variant is Variant.REDUCED:
        l_reg = msq(tape.min_with_zero(coll.cp_aux))
    else:
        l_reg = tape.add(msq(tape.min_with_zero(coll.cp)),
                         msq(tape.min_with_zero(coll.ce)))

    per_pixel = tape.add(
        tape.add(tape.mul(tape.constant(config.w_res), l_res),
                 tape.mul(tape.constant(config.w_conc), l_conc)),
        tape.add(tape.mul(tape.constant(config.w_init), l_init),
                 tape.mul(tape.constant(config.w_reg), l_reg)))
    loss = tape.mean0(per_pixel)

    breakdown = {
        "L_C": float(l_conc.primal.mean()),
        "L_r": float(l_res.primal.mean()),
        "L_b": float(l_init.primal.mean()),
        "L_reg": float(l_reg.primal.mean()),
        "total": float(loss.primal),
    }
    breakdown.update({f"res_{k}": v for k, v in res_parts.items()})
    for name, value in breakdown.items():
        if not np.isfinite(value):
            raise NumericalFailureError(f"loss term {name} is not finite")
    return loss, breakdown


@dataclass
class AdamMoments:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_state(cls, state: NetworkState) -> "AdamMoments":
        return cls(m={k: np.zeros_like(p) for k, p in state.params.items()},
                   v={k: np.zeros_like(p) for k, p in state.params.items()})


def adam_step(params: dict, grads: dict, moments: AdamMoments,
              learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place."""
    moments.t += 1
    b1t = 1.0 - beta1 ** moments.t
    b2t = 1.0 - beta2 ** moments.t
    for key, p in params.items():
        g = grads[key]
        moments.m[key] = beta1 * moments.m[key] + (1.0 - beta1) * g
        moments.v[key] = beta2 * moments.v[key] + (1.0 - beta2) * (g * g)
        m_hat = moments.m[key] / b1t
        v_hat = moments.v[key] / b2t
        p -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)


@dataclass(frozen=True)
class LossRecord:
    iteration: int
    l_conc: float
    l_res: float
    l_init: float
    l_reg: float
    total: float
    mean_fp: float
    mean_vp: float
    mean_ve: float
    mean_ps: float

    def csv_row(self) -> str:
        return (f"{self.iteration},{self.l_conc:.10e},{self.l_res:.10e},"
                f"{self.l_init:.10e},{self.l_reg:.10e},{self.total:.10e},"
                f"{self.mean_fp:.10e},{self.mean_vp:.10e},{self.mean_ve:.10e},"
                f"{self.mean_ps:.10e}")


@dataclass
class FitResult:
    """Estimated parameter maps plus full training provenance."""

    variant: Variant
    maps: dict                      # param -> (K,) float64
    loss_history: list
    seed: int
    config: PinnConfig
    duration_s: float
    n_pixels: int

    def loss_csv(self) -> str:
        lines = [LOSS_CSV_HEADER]
        lines += [rec.csv_row() for rec in self.loss_history]
        return "\n".join(lines) + "\n"


def mesh_coordinates(nx: int, ny: int) -> np.ndarray:
    """(K, 2) pixel coordinates min-max scaled to [-1, 1], x-fastest order."""
    xs = np.arange(nx, dtype=float)
    ys = np.arange(ny, dtype=float)
    xs = np.zeros(nx) if nx == 1 else 2.0 * xs / (nx - 1) - 1.0
    ys = np.zeros(ny) if ny == 1 else 2.0 * ys / (ny - 1) - 1.0
    out = np.empty((nx * ny, 2))
    out[:, 0] = np.tile(xs, ny)
    out[:, 1] = np.repeat(ys, nx)
    return out


def _prepare_data(curves: np.ndarray, aif_values: np.ndarray, grid: TimeGrid,
                  norm: Normalization, mesh_hat: np.ndarray | None) -> TrainingData:
    curves = np.asarray(curves, dtype=float)
    if curves.ndim != 2 or curves.shape[1] != grid.n:
        raise InvalidInputError("curves must be (n_pixels, n_time) matching the grid")
    return TrainingData(
        cmyo_hat=norm.conc(curves).T.copy(),
        caif_hat=norm.conc(aif_values)[:, None],
        t_obs_hat=norm.time(grid.times()),
        t_zero_hat=float(norm.time(0.0)),
        inv_sigma_t=1.0 / norm.sigma_t,
        mesh_hat=mesh_hat,
    )


def train(curves: np.ndarray, aif_values: np.ndarray, grid: TimeGrid,
          config: PinnConfig, mesh_shape: tuple[int, int] | None = None) -> FitResult:
    """Fit one PINN to a set of pixel curves sharing a time grid.

    curves: (n_pixels, n_time) concentration curves; aif_values: (n_time,).
    For the mesh variant, mesh_shape = (nx, ny) with pixels ordered x-fastest.
    Returns parameter maps in original units (the normalizations cancel out
    of the ODE parameters, so no back-conversion is applied).
    """
    t_start = time.perf_counter()
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    n_pixels = curves.shape[0]
    norm = Normalization.from_observations(grid, aif_values)

    mesh_hat = None
    if config.variant.uses_mesh:
        if mesh_shape is None:
            raise InvalidInputError("mesh variant requires mesh_shape=(nx, ny)")
        mesh_hat = mesh_coordinates(*mesh_shape)
        if mesh_hat.shape[0] != n_pixels:
            raise InvalidInputError("mesh_shape does not match the pixel count")

    data = _prepare_data(curves, aif_values, grid, norm, mesh_hat)
    state = init_network(config, n_pixels)
    moments = AdamMoments.for_state(state)

    coll_rng = derive_rng(config.seed, "pinn-collocation")

    def draw_collocation():
        raw = coll_rng.uniform(grid.t0, grid.t0 + grid.span, size=config.n_collocation)
        return norm.time(raw)

    t_coll_hat = draw_collocation()

    history: list[LossRecord] = []
    for it in range(1, config.iterations + 1):
        if config.resample_collocation and it > 1:
            t_coll_hat = draw_collocation()
        tape = Tape()
        try:
            loss, terms = compute_loss(tape, state, data, t_coll_hat, config)
        except NumericalFailureError as err:
            raise NumericalFailureError(str(err), step=it) from None
        grads = tape.backward(loss)
        adam_step(state.params, grads, moments, config.learning_rate)

        if it % config.log_every == 0 or it == config.iterations:
            eta = state.eta()
            history.append(LossRecord(
                iteration=it,
                l_conc=terms["L_C"], l_res=terms["L_r"],
                l_init=terms["L_b"], l_reg=terms["L_reg"], total=terms["total"],
                mean_fp=float(eta["fp"].mean()), mean_vp=float(eta["vp"].mean()),
                mean_ve=float(eta["ve"].mean()), mean_ps=float(eta["ps"].mean()),
            ))

    return FitResult(
        variant=config.variant,
        maps=state.eta(),
        loss_history=history,
        seed=config.seed,
        config=config,
        duration_s=time.perf_counter() - t_start,
        n_pixels=n_pixels,
    )


def gradcheck_loss(state: NetworkState, data: TrainingData,
                   t_coll_hat: np.ndarray, config: PinnConfig,
                   step: float = 1e-5) -> float:
    """Max relative error of the full-loss gradient vs central differences."""

    def build():
        tape = Tape()
        loss, _ = compute_loss(tape, state, data, t_coll_hat, config)
        return tape, loss

    return _gradcheck(build, state.params, step=step)
