"""NMSE and SSIM between estimated and ground-truth parameter maps.

Conventions (the source publication defines neither precisely):

* NMSE = sum((est - gt)^2) / sum(gt^2) over the whole map.
* SSIM uses a 7x7 uniform window (Gaussian optional), K1=0.01, K2=0.03,
  dynamic range L = max(gt) - min(gt) taken over the full 3-D ground-truth
  map, evaluated per z-slice (windows fully inside the slice) and averaged
  over windows, then over slices.

Overall scores are the plain means of the four per-parameter scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError

__all__ = ["MapComparison", "nmse", "ssim", "compare_maps"]

PARAM_NAMES = ("fp", "vp", "ve", "ps")


@dataclass(frozen=True)
class MapComparison:
    nmse_per_param: dict
    ssim_per_param: dict

    @property
    def overall_nmse(self) -> float:
        return float(np.mean([self.nmse_per_param[k] for k in PARAM_NAMES]))

    @property
    def overall_ssim(self) -> float:
        return float(np.mean([self.ssim_per_param[k] for k in PARAM_NAMES]))

    def rows(self, method: str) -> list[tuple]:
        """(method, param, nmse, ssim) rows, overall first."""
        out = [(method, "all", self.overall_nmse, self.overall_ssim)]
        label = {"fp": "Fp", "vp": "vp", "ve": "ve", "ps": "PS"}
        out += [(method, label[k], self.nmse_per_param[k], self.ssim_per_param[k])
                for k in PARAM_NAMES]
        return out


def nmse(est: np.ndarray, gt: np.ndarray) -> float:
    """Normalized mean square error, sum((est-gt)^2) / sum(gt^2)."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {est.shape} vs {gt.shape}")
    denom = float(np.sum(gt * gt))
    if denom == 0.0:
        raise InvalidInputError("ground truth is identically zero")
    return float(np.sum((est - gt) ** 2) / denom)


def _window_weights(size: int, gaussian: bool, sigma: float) -> np.ndarray:
    if not gaussian:
        return np.full((size, size), 1.0 / (size * size))
    ax = np.arange(size, dtype=float) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_slice(est: np.ndarray, gt: np.ndarray, data_range: float,
                weights: np.ndarray, k1: float, k2: float) -> float:
    size = weights.shape[0]
    we = sliding_window_view(est, (size, size))
    wg = sliding_window_view(gt, (size, size))
    mu_e = np.einsum("xyij,ij->xy", we, weights)
    mu_g = np.einsum("xyij,ij->xy", wg, weights)
    ee = np.einsum("xyij,ij->xy", we * we, weights)
    gg = np.einsum("xyij,ij->xy", wg * wg, weights)
    eg = np.einsum("xyij,ij->xy", we * wg, weights)
    var_e = ee - mu_e ** 2
    var_g = gg - mu_g ** 2
    cov = eg - mu_e * mu_g
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_e * mu_g + c1) * (2.0 * cov + c2)
    den = (mu_e ** 2 + mu_g ** 2 + c1) * (var_e + var_g + c2)
    return float(np.mean(num / den))


def ssim(est: np.ndarray, gt: np.ndarray, window: int = 7,
         k1: float = 0.01, k2: float = 0.03, data_range: float | None = None,
         gaussian: bool = False, gaussian_sigma: float = 1.5) -> float:
    """Mean structural similarity between two maps.

    Accepts 2-D slices or 3-D (x, y, z) volumes; 3-D input is scored per
    z-slice and slice means are averaged. `data_range` overrides the
    dynamic range (useful for symmetry tests); by default it comes from the
    full ground-truth map.
    """
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {est.shape} vs {gt.shape}")
    if est.ndim == 2:
        est = est[:, :, None]
        gt = gt[:, :, None]
    if est.ndim != 3:
        raise InvalidInputError("maps must be 2-D or 3-D")
    if est.shape[0] < window or est.shape[1] < window:
        raise InvalidInputError(
            f"each z-slice must be at least {window}x{window} pixels")
    if data_range is None:
        data_range = float(gt.max() - gt.min())
    if data_range == 0.0:
        raise InvalidInputError("ground truth has zero dynamic range")

    weights = _window_weights(window, gaussian, gaussian_sigma)
    slices = [_ssim_slice(est[:, :, z], gt[:, :, z], data_range, weights, k1, k2)
              for z in range(est.shape[2])]
    return float(np.mean(slices))


def compare_maps(est: dict, gt: dict, window: int = 7) -> MapComparison:
    """Per-parameter and overall NMSE/SSIM for {fp, vp, ve, ps} map dicts."""
    missing = [k for k in PARAM_NAMES if k not in est or k not in gt]
    if missing:
        raise InvalidInputError(f"missing parameter maps: {missing}")
    return MapComparison(
        nmse_per_param={k: nmse(est[k], gt[k]) for k in PARAM_NAMES},
        ssim_per_param={k: ssim(est[k], gt[k], window=window) for k in PARAM_NAMES},
    )
