"""Digital reference object (DRO): gamma-variate AIF, block parameter lattice,
forward-simulated tissue curves, and calibrated additive noise.

The standard phantom is a 40x120x3 volume built from 10x10x1 blocks, one
unique parameter combination per block:

    Fp in {0.5, 1.0, 1.5, 2.0}   -> 4 blocks along x
    vp in {0.02, 0.05, 0.1, 0.2} -> outer factor of the 12 y-blocks
    ve in {0.1, 0.2, 0.5}        -> inner factor of the 12 y-blocks
    PS in {0.5, 1.5, 2.5}        -> 3 z-slices

simulated at dt = 0.02 min over 2 min (100 samples). Gaussian noise is added
per pixel with sigma = peak(clean curve) / SNR (peak-referenced SNR; a
mean-referenced mode is available). Noise is drawn from a counter-based
generator keyed by (seed, flat pixel index), so generation order does not
matter and any subset of pixels reproduces exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .kinetics import ConcentrationSeries, KineticParams, TimeGrid, solve_2cxm_arrays

__all__ = [
    "GammaVariateAif",
    "ParameterLattice",
    "DROVolume",
    "default_aif",
    "build_parameter_grid",
    "mini_lattice",
    "generate_dro",
]

DEFAULT_GRID = TimeGrid(t0=0.0, dt=0.02, n=100)

FP_VALUES = (0.5, 1.0, 1.5, 2.0)
VP_VALUES = (0.02, 0.05, 0.1, 0.2)
VE_VALUES = (0.1, 0.2, 0.5)
PS_VALUES = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class GammaVariateAif:
    """Gamma-variate arterial input function.

    value(t) = 0 for t <= t0, else amplitude * (t-t0)^alpha * exp(-(t-t0)/beta).
    Times in minutes, concentrations in M. The default constants give a
    first-pass bolus peaking at 5 mM around t = 0.4 min, a realistic shape
    within a 2-minute acquisition window; they are configurable because the
    published phantom's constants are not.
    """

    t0: float = 0.1
    amplitude: float = 1.0
    alpha: float = 2.5
    beta: float = 0.12

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.amplitude <= 0:
            raise InvalidInputError("alpha, beta and amplitude must be > 0")

    @classmethod
    def with_peak(cls, peak: float, t0: float = 0.1, alpha: float = 2.5,
                  beta: float = 0.12) -> "GammaVariateAif":
        """Choose the amplitude so the curve's maximum equals `peak` (M)."""
        if peak <= 0:
            raise InvalidInputError("peak must be > 0")
        raw_peak = (alpha * beta) ** alpha * math.exp(-alpha)
        return cls(t0=t0, amplitude=peak / raw_peak, alpha=alpha, beta=beta)

    @property
    def peak_time(self) -> float:
        return self.t0 + self.alpha * self.beta

    def values(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        dtau = t - self.t0
        out = np.zeros_like(dtau)
        pos = dtau > 0
        out[pos] = self.amplitude * dtau[pos] ** self.alpha * np.exp(-dtau[pos] / self.beta)
        return out

    def value(self, t: float) -> float:
        return float(self.values(np.array([t]))[0])

    def series(self, grid: TimeGrid) -> ConcentrationSeries:
        return ConcentrationSeries(grid, self.values(grid.times()))

    def constants(self) -> dict:
        return {"t0": self.t0, "amplitude": self.amplitude,
                "alpha": self.alpha, "beta": self.beta}


def default_aif() -> GammaVariateAif:
    """The phantom's default AIF: 5 mM peak, onset 0.1 min."""
    return GammaVariateAif.with_peak(5.0e-3)


@dataclass(frozen=True)
class ParameterLattice:
    """Block layout of ground-truth parameters.

    Fp varies over x-blocks, (vp outer x ve inner) over y-blocks, PS over
    z-slices; every block spans block_px pixels in (x, y, z).
    """

    fp_values: tuple = FP_VALUES
    vp_values: tuple = VP_VALUES
    ve_values: tuple = VE_VALUES
    ps_values: tuple = PS_VALUES
    block_px: tuple = (10, 10, 1)

    def __post_init__(self):
        if any(len(v) < 1 for v in (self.fp_values, self.vp_values,
                                    self.ve_values, self.ps_values)):
            raise InvalidInputError("every parameter axis needs at least one value")
        if any(int(b) < 1 for b in self.block_px):
            raise InvalidInputError("block_px entries must be >= 1")

    @property
    def block_counts(self) -> tuple[int, int, int]:
        return (len(self.fp_values),
                len(self.vp_values) * len(self.ve_values),
                len(self.ps_values))

    @property
    def dims(self) -> tuple[int, int, int]:
        bx, by, bz = self.block_counts
        px, py, pz = self.block_px
        return (bx * px, by * py, bz * pz)

    @property
    def n_blocks(self) -> int:
        bx, by, bz = self.block_counts
        return bx * by * bz

    def params_at_block(self, bx: int, by: int, bz: int) -> KineticParams:
        return KineticParams(
            fp=self.fp_values[bx],
            vp=self.vp_values[by // len(self.ve_values)],
            ve=self.ve_values[by % len(self.ve_values)],
            ps=self.ps_values[bz],
        )

    def block_params_arrays(self):
        """Arrays (fp, vp, ve, ps) flattened in z-major block order."""
        nbx, nby, nbz = self.block_counts
        fp = np.empty(self.n_blocks)
        vp = np.empty(self.n_blocks)
        ve = np.empty(self.n_blocks)
        ps = np.empty(self.n_blocks)
        i = 0
        for bz in range(nbz):
            for by in range(nby):
                for bx in range(nbx):
                    p = self.params_at_block(bx, by, bz)
                    fp[i], vp[i], ve[i], ps[i] = p.fp, p.vp, p.ve, p.ps
                    i += 1
        return fp, vp, ve, ps

    def maps(self) -> dict[str, np.ndarray]:
        """Ground-truth parameter maps of shape dims, float64."""
        X, Y, Z = self.dims
        px, py, pz = self.block_px
        out = {k: np.empty((X, Y, Z)) for k in ("fp", "vp", "ve", "ps")}
        nbx, nby, nbz = self.block_counts
        for bz in range(nbz):
            for by in range(nby):
                for bx in range(nbx):
                    p = self.params_at_block(bx, by, bz)
                    sl = (slice(bx * px, (bx + 1) * px),
                          slice(by * py, (by + 1) * py),
                          slice(bz * pz, (bz + 1) * pz))
                    out["fp"][sl] = p.fp
                    out["vp"][sl] = p.vp
                    out["ve"][sl] = p.ve
                    out["ps"][sl] = p.ps
        return out

    def block_index_of_pixel(self, x: int, y: int, z: int) -> tuple[int, int, int]:
        px, py, pz = self.block_px
        return (x // px, y // py, z // pz)


def build_parameter_grid() -> ParameterLattice:
    """The standard 144-combination lattice (40x120x3 pixels)."""
    return ParameterLattice()


def mini_lattice(block_px: tuple = (4, 4, 1)) -> ParameterLattice:
    """Desk-scale 16-block lattice: Fp x vp blocks, ve=0.2, PS=1.5 fixed."""
    return ParameterLattice(
        fp_values=FP_VALUES, vp_values=VP_VALUES,
        ve_values=(0.2,), ps_values=(1.5,), block_px=block_px,
    )


@dataclass(frozen=True)
class DROVolume:
    """Phantom volume: noisy tissue curves, clean AIF, ground-truth maps.

    curves has shape dims + (n_time,) in float32 (storage precision); the
    clean per-block curves are kept in float64 for oracle-style tests but are
    not part of the on-disk format.
    """

    lattice: ParameterLattice
    grid: TimeGrid
    aif: GammaVariateAif
    aif_values: np.ndarray            # (n_time,) float32
    curves: np.ndarray                # (X, Y, Z, n_time) float32
    gt_maps: dict                     # param -> (X, Y, Z) float32
    snr: float
    seed: int
    snr_mode: str = "peak"
    clean_block_curves: np.ndarray = field(default=None, repr=False)  # (n_blocks, n_time) f64

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.lattice.dims

    @property
    def n_pixels(self) -> int:
        X, Y, Z = self.dims
        return X * Y * Z

    def aif_series(self) -> ConcentrationSeries:
        return ConcentrationSeries(self.grid, self.aif_values.astype(float))

    def pixel_curves_flat(self) -> np.ndarray:
        """Curves flattened to (n_pixels, n_time) float64 in z-major order
        (z outer, then y, then x fastest), matching the file layout."""
        return self.curves.transpose(2, 1, 0, 3).reshape(self.n_pixels,
                                                         self.grid.n).astype(float)

    def gt_maps_flat(self) -> dict[str, np.ndarray]:
        return {k: v.transpose(2, 1, 0).ravel().astype(float)
                for k, v in self.gt_maps.items()}

    def metadata(self) -> dict:
        md = {"seed": self.seed, "snr": self.snr, "snr_mode": self.snr_mode,
              "generator": "perfq-dro-1"}
        md.update({f"aif_{k}": v for k, v in self.aif.constants().items()})
        return md


def _pixel_noise(seed: int, pixel_index: int, sigma: float, n: int) -> np.ndarray:
    # Philox keyed by (seed, pixel): order-independent, subset-reproducible.
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, pixel_index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.normal(0.0, sigma, n)


def generate_dro(aif: GammaVariateAif | None = None, snr: float = 17.5,
                 seed: int = 0, lattice: ParameterLattice | None = None,
                 grid: TimeGrid = DEFAULT_GRID, substeps: int = 1,
                 snr_mode: str = "peak") -> DROVolume:
    """Simulate the phantom: clean block curves + per-pixel Gaussian noise.

    snr may be math.inf to disable noise. snr_mode selects the reference for
    the noise scale: "peak" (sigma = max(curve)/snr) or "mean"
    (sigma = mean(curve)/snr).
    """
    aif = aif or default_aif()
    lattice = lattice or build_parameter_grid()
    if not (snr > 0):
        raise InvalidInputError(f"snr must be > 0, got {snr!r}")
    if snr_mode not in ("peak", "mean"):
        raise InvalidInputError(f"unknown snr_mode {snr_mode!r}")

    aif_values = aif.values(grid.times())
    fp, vp, ve, ps = lattice.block_params_arrays()
    _, _, cmyo = solve_2cxm_arrays(fp, vp, ve, ps, aif_values, grid, substeps=substeps)

    X, Y, Z = lattice.dims
    T = grid.n
    curves = np.empty((X, Y, Z, T), dtype=np.float32)
    nbx, nby, _ = lattice.block_counts

    noiseless = math.isinf(snr)
    for z in range(Z):
        for y in range(Y):
            for x in range(X):
                bx, by, bz = lattice.block_index_of_pixel(x, y, z)
                clean = cmyo[(bz * nby + by) * nbx + bx]
                if noiseless:
                    pixel = clean
                else:
                    ref = clean.max() if snr_mode == "peak" else clean.mean()
                    sigma = ref / snr
                    flat = (z * Y + y) * X + x
                    pixel = clean + _pixel_noise(seed, flat, sigma, T)
                curves[x, y, z] = pixel.astype(np.float32)

    gt = {k: v.astype(np.float32) for k, v in lattice.maps().items()}
    return DROVolume(
        lattice=lattice, grid=grid, aif=aif,
        aif_values=aif_values.astype(np.float32),
        curves=curves, gt_maps=gt, snr=snr, seed=seed, snr_mode=snr_mode,
        clean_block_curves=cmyo,
    )
