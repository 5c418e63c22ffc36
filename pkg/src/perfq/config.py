"""Run configuration: JSON file + command-line overrides.

The schema is a nested key-value document; unknown keys are rejected so
typos fail loudly. Every output file embeds the effective configuration
(defaults, then file values, then explicit flag/`--set` overrides) together
with the global seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import InvalidInputError
from .kinetics import ConversionConstants, KineticParams, TimeGrid
from .nlls import NllsConfig
from .phantom import (FP_VALUES, PS_VALUES, VE_VALUES, VP_VALUES,
                      GammaVariateAif, ParameterLattice)
from .pinn import PinnConfig, Variant

__all__ = ["RunConfig", "default_config_dict", "load_config", "apply_overrides"]

METHOD_VARIANTS = {
    "pinn-2cxm": Variant.TWO_CXM,
    "pinn-mesh": Variant.MESH,
    "pinn-reduced": Variant.REDUCED,
    "pinn-combined": Variant.COMBINED,
}
METHODS = tuple(METHOD_VARIANTS) + ("nlls",)


def default_config_dict() -> dict:
    return {
        "seed": 0,
        "threads": 0,  # 0 = all available cores
        "phantom": {
            "snr": 17.5,
            "snr_mode": "peak",
            "aif": {"t0": 0.1, "alpha": 2.5, "beta": 0.12, "peak": 5.0e-3},
            "time": {"t0": 0.0, "dt": 0.02, "n": 100},
            "fp_values": list(FP_VALUES),
            "vp_values": list(VP_VALUES),
            "ve_values": list(VE_VALUES),
            "ps_values": list(PS_VALUES),
            "block_px": [10, 10, 1],
            "substeps": 1,
        },
        "pinn": {
            "iterations": 25000,
            "learning_rate": 0.001,
            "w_conc": 5.0,
            "w_res": 1.0,
            "w_init": 1.0,
            "w_reg": 1.0,
            "n_collocation": 500,
            "resample_collocation": False,
            "init_fp": 1.0,
            "init_vp": 0.05,
            "init_ve": 0.2,
            "init_ps": 1.0,
            "log_every": 100,
        },
        "nlls": {
            "max_iterations": 200,
            "init_fp": 1.0,
            "init_vp": 0.05,
            "init_ve": 0.2,
            "init_ps": 1.0,
            "log_space": True,
            "multistart": 1,
            "damping_init": 1e-3,
            "damping_increase": 10.0,
            "damping_decrease": 10.0,
            "tol_cost": 1e-10,
            "tol_grad": 1e-8,
            "tol_step": 1e-12,
            "substeps": 1,
            "jitter_decades": 0.5,
            "fd_step": 1e-6,
            "eta_min": 1e-4,
            "eta_max": 1e2,
            "max_step": 1.0,
            "geodesic": True,
        },
        "conversion": {"hct": 0.45, "rho": 1.05},
    }


def _merge_checked(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise InvalidInputError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidInputError(f"config key {where} must be a section")
            out[key] = _merge_checked(base[key], value, where)
        else:
            out[key] = value
    return out


def _parse_scalar(text: str):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "infinity"):
        return math.inf
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply repeatable --set section.key=value overrides."""
    for item in assignments:
        if "=" not in item:
            raise InvalidInputError(f"--set expects key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = cfg
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise InvalidInputError(f"unknown config section: {dotted}")
            node = node[k]
        leaf = keys[-1]
        if leaf not in node:
            raise InvalidInputError(f"unknown config key: {dotted}")
        if isinstance(node[leaf], dict):
            raise InvalidInputError(f"config key {dotted} is a section")
        if isinstance(node[leaf], list):
            node[leaf] = [_parse_scalar(v) for v in raw.split(";") if v.strip()]
        else:
            node[leaf] = _parse_scalar(raw)
    return cfg


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    cfg = default_config_dict()
    if path is not None:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as err:
                raise InvalidInputError(f"config is not valid JSON: {err}") from None
        if not isinstance(user, dict):
            raise InvalidInputError("config root must be a JSON object")
        cfg = _merge_checked(cfg, user)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


@dataclass(frozen=True)
class RunConfig:
    """Validated view over the effective config dictionary."""

    raw: dict = field(default_factory=default_config_dict)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def threads(self) -> int:
        return int(self.raw["threads"])

    def echo_text(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"),
                          allow_nan=True)

    def aif(self) -> GammaVariateAif:
        a = self.raw["phantom"]["aif"]
        return GammaVariateAif.with_peak(peak=a["peak"], t0=a["t0"],
                                         alpha=a["alpha"], beta=a["beta"])

    def time_grid(self) -> TimeGrid:
        t = self.raw["phantom"]["time"]
        return TimeGrid(t0=t["t0"], dt=t["dt"], n=int(t["n"]))

    def lattice(self) -> ParameterLattice:
        p = self.raw["phantom"]
        return ParameterLattice(
            fp_values=tuple(p["fp_values"]), vp_values=tuple(p["vp_values"]),
            ve_values=tuple(p["ve_values"]), ps_values=tuple(p["ps_values"]),
            block_px=tuple(int(v) for v in p["block_px"]),
        )

    def pinn_config(self, variant: Variant, seed: int) -> PinnConfig:
        p = self.raw["pinn"]
        return PinnConfig(
            variant=variant,
            iterations=int(p["iterations"]),
            learning_rate=float(p["learning_rate"]),
            w_conc=float(p["w_conc"]), w_res=float(p["w_res"]),
            w_init=float(p["w_init"]), w_reg=float(p["w_reg"]),
            n_collocation=int(p["n_collocation"]),
            seed=seed,
            resample_collocation=bool(p["resample_collocation"]),
            init_eta=KineticParams(p["init_fp"], p["init_vp"],
                                   p["init_ve"], p["init_ps"]),
            log_every=int(p["log_every"]),
        )

    def nlls_config(self, seed: int) -> NllsConfig:
        n = self.raw["nlls"]
        return NllsConfig(
            max_iterations=int(n["max_iterations"]),
            init_eta=KineticParams(n["init_fp"], n["init_vp"],
                                   n["init_ve"], n["init_ps"]),
            log_space=bool(n["log_space"]),
            multistart=int(n["multistart"]),
            damping_init=float(n["damping_init"]),
            damping_increase=float(n["damping_increase"]),
            damping_decrease=float(n["damping_decrease"]),
            tol_cost=float(n["tol_cost"]), tol_grad=float(n["tol_grad"]),
            tol_step=float(n["tol_step"]),
            seed=seed,
            substeps=int(n["substeps"]),
            jitter_decades=float(n["jitter_decades"]),
            fd_step=float(n["fd_step"]),
            eta_min=float(n["eta_min"]), eta_max=float(n["eta_max"]),
            max_step=float(n["max_step"]),
            geodesic=bool(n["geodesic"]),
        )

    def conversion(self) -> ConversionConstants:
        c = self.raw["conversion"]
        return ConversionConstants(hct=float(c["hct"]), rho=float(c["rho"]))
