"""Configuration and the end-to-end design pipeline.

model -> constraint curve -> reduced dynamics -> orbit -> chart ->
transverse linearization -> monodromy -> stable normal -> gains.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import builtin_models, make_model
from .errors import ConfigError, UnknownModel
from .floquet import monodromy, stable_normal
from .pfl import PflGains, certify_p
from .sim import Disturbance, SimConfig
from .smc import design_gains
from .transverse import TransverseLinearization, chart_from_orbit, linearize
from .vhc import ReducedOptions, VhcSpec, integrate_reduced, lift_trajectory, reduced_coeffs, solve_theta

log = logging.getLogger("orbistab")

# shaping coefficients per shipped model; the pendubot uses an elbow
# coordinate whose sign convention flips the coefficients
DEFAULT_VHC = {
    "butterfly": [0.008, -0.013, 0.010],
    "pendubot": [-0.008, 0.013, -0.010],
}

DEFAULTS = {
    "model": {"key": "butterfly", "params": {}},
    "vhc": {"c": None, "phi_min": -1.0, "phi_max": math.pi + 1.0, "n": 853, "phi0": 0.0, "dphi0": 0.0},
    "reduced": {"rtol": 1e-12, "atol": 1e-13, "max_horizon": 200.0, "closure_tol": 1e-8},
    "pfl": {"nu1": 15.0, "nu2": 6.0},
    "chart": {"n_tau": 4096, "n_lin": 512, "delta0": 1e-5},
    # override_A / override_B replace the computed linearization by a constant
    # system (test fixtures and what-if studies)
    "floquet": {"rtol": 1e-10, "atol": 1e-16, "tol": 1e-9, "substeps": 8, "override_A": None, "override_B": None},
    "smc": {"k1": 8.0, "k2": 0.5, "eps_sigma": 0.05, "auto_margin": 2.0},
    "sim": {
        "ltv": {"enabled": True, "runs": 1, "xi_max": 10.0, "periods": 5.0, "eps_s": 1e-2,
                "integrator": "rk4", "steps_per_period": 4096, "record_every": 8},
        "nonlinear": {"enabled": True, "runs": 1, "periods": 3.0, "step": 1e-3, "eps_s": 1e-2, "hold": "stage",
                      "xi_norm": 0.1, "on_orbit": False,
                      "disturbance_fraction": 0.0, "disturbance_omega": 2.0 * math.pi,
                      "record_every": 10},
    },
    "out": "out",
    "seed": 0,
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "params":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be a table")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    """Self-describing run configuration; every tolerance has an explicit default."""
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.data = _merge(DEFAULTS, self.data)
        d = self.data
        key = d["model"]["key"]
        if key not in builtin_models():
            raise UnknownModel(f"unknown model {key!r}; known: {sorted(builtin_models())}")
        if d["vhc"]["c"] is None:
            if key not in DEFAULT_VHC:
                raise ConfigError(f"no default shaping coefficients for model {key!r}")
            d["vhc"]["c"] = list(DEFAULT_VHC[key])
        if len(d["vhc"]["c"]) != 3:
            raise ConfigError("vhc.c needs three coefficients")
        for sect, keys in (("reduced", ("rtol", "atol", "closure_tol")), ("floquet", ("rtol", "atol", "tol")),
                           ("chart", ("delta0",))):
            for k in keys:
                if not d[sect][k] > 0:
                    raise ConfigError(f"{sect}.{k} must be positive")
        k2 = d["smc"]["k2"]
        if not (k2 == "auto" or isinstance(k2, (int, float))):
            raise ConfigError("smc.k2 must be a number or 'auto'")
        s = d["seed"]
        if not (isinstance(s, int) and 0 <= s < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def load(cls, path):
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"cannot parse config {p}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a table")
        return cls(doc)

    @classmethod
    def for_model(cls, key, **over):
        return cls({"model": {"key": key}, **over})

    def __getitem__(self, k):
        return self.data[k]

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True)


@dataclass
class Design:
    config: PipelineConfig
    model: object = None
    spec: object = None
    curve: object = None
    coeffs: object = None
    orbit: object = None
    pfl: PflGains = None
    chart: object = None
    lin: object = None
    mono: object = None
    sub: object = None
    zeros: list = None
    smc: object = None
    timings: dict = field(default_factory=dict)

    def summary(self):
        out = {"model": self.config["model"]["key"]}
        if self.orbit is not None:
            # speed statistics let users judge rolling/slip validity themselves
            out["orbit"] = {"period": self.orbit.T, "closure_error": self.orbit.closure_error,
                            "phi_range": [float(self.orbit.phi.min()), float(self.orbit.phi.max())],
                            "max_abs_dphi": float(np.max(np.abs(self.orbit.dphi))),
                            "max_abs_dtheta": float(np.max(np.abs(self.orbit.dtheta)))}
        if self.pfl is not None:
            P, a = certify_p(self.pfl)
            out["pfl"] = {"nu1": self.pfl.nu1, "nu2": self.pfl.nu2, "alpha": a, "P": P.tolist()}
        if self.mono is not None:
            out["floquet"] = {
                "multipliers": [[float(m.real), float(m.imag)] for m in self.mono.multipliers],
                "moduli": [float(abs(m)) for m in self.mono.multipliers],
                "stable_count": self.mono.stable_count,
                "unit_count": self.mono.unit_count,
                "eig_condition": self.mono.eig_condition,
            }
        if self.zeros is not None:
            out["b_zeros"] = [{"tau": z, "slope": s} for z, s in self.zeros]
        if self.smc is not None:
            out["smc"] = self.smc.as_dict()
        return out


def _stage(design, name, fn):
    t0 = time.perf_counter()
    out = fn()
    design.timings[name] = time.perf_counter() - t0
    log.info("%s done in %.2f s", name, design.timings[name])
    return out


def design_orbit(cfg: PipelineConfig):
    d = Design(cfg)
    c = cfg["model"]
    d.model = make_model(c["key"], c.get("params"))
    v = cfg["vhc"]
    d.spec = VhcSpec.uniform(*v["c"], phi_min=v["phi_min"], phi_max=v["phi_max"], n=v["n"])
    d.curve = _stage(d, "vhc", lambda: solve_theta(d.model, d.spec))
    d.coeffs = _stage(d, "reduced_coeffs", lambda: reduced_coeffs(d.model, d.curve))
    r = cfg["reduced"]
    opts = ReducedOptions(rtol=r["rtol"], atol=r["atol"], max_horizon=r["max_horizon"], closure_tol=r["closure_tol"])
    sol = _stage(d, "reduced", lambda: integrate_reduced(d.coeffs, v["phi0"], v["dphi0"], opts))
    d.orbit = lift_trajectory(d.curve, sol, d.model)
    try:
        d.pfl = PflGains(cfg["pfl"]["nu1"], cfg["pfl"]["nu2"])
    except ValueError as exc:
        raise ConfigError(f"pfl: {exc}") from None
    return d


def analyze(d: Design):
    cfg = d.config
    ch = cfg["chart"]
    d.chart = _stage(d, "chart", lambda: chart_from_orbit(d.orbit, d.curve, n_tau=ch["n_tau"]))
    f = cfg["floquet"]
    if f["override_A"] is not None:
        A = np.asarray(f["override_A"], dtype=float)
        B = None if f["override_B"] is None else np.asarray(f["override_B"], dtype=float)
        if A.shape != (3, 3) or (B is not None and B.shape != (3,)):
            raise ConfigError("floquet.override_A must be 3x3 and override_B of length 3")
        d.lin = TransverseLinearization.constant(A, B)
    else:
        d.lin = _stage(d, "linearize", lambda: linearize(d.model, d.curve, d.pfl, d.chart, d.orbit,
                                                         n=ch["n_lin"], delta0=ch["delta0"]))
    d.mono = _stage(d, "monodromy", lambda: monodromy(d.lin, rtol=f["rtol"], atol=f["atol"]))
    d.sub = _stage(d, "stable_normal", lambda: stable_normal(d.lin, d.mono, tol=f["tol"], substeps=f["substeps"]))
    d.zeros = list(d.sub.zeros)
    return d


def choose_gains(d: Design):
    s = d.config["smc"]
    if not (s["k1"] >= 0 and s["eps_sigma"] > 0 and s["auto_margin"] > 1):
        raise ConfigError("smc needs k1 >= 0, eps_sigma > 0 and auto_margin > 1")
    d.smc = _stage(d, "gains", lambda: design_gains(d.lin, d.sub, k1=s["k1"], k2=s["k2"], eps_sigma=s["eps_sigma"],
                                                    auto_margin=s["auto_margin"]))
    return d


def run_pipeline(cfg: PipelineConfig, through="gains"):
    """Run the pipeline up to ``through`` in {"design", "analyze", "gains"}."""
    if through not in ("design", "analyze", "gains"):
        raise ValueError(f"unknown stage {through!r}")
    d = design_orbit(cfg)
    if through == "design":
        return d
    analyze(d)
    if through == "analyze":
        return d
    return choose_gains(d)


def ltv_sim_config(cfg: PipelineConfig):
    s = cfg["sim"]["ltv"]
    return SimConfig(integrator=s["integrator"], periods=s["periods"], eps_s=s["eps_s"],
                     record_every=s["record_every"], seed=cfg["seed"])


def nonlinear_sim_config(cfg: PipelineConfig, disturbance=None):
    s = cfg["sim"]["nonlinear"]
    return SimConfig(step=s["step"], periods=s["periods"], eps_s=s["eps_s"], record_every=s["record_every"],
                     hold=s["hold"], seed=cfg["seed"], disturbance=disturbance)


def matched_disturbance(d: Design, fraction, omega=2.0 * math.pi, n=2048, k1=None):
    """``d(t) = fraction * k1 / max|g| * sin(omega t)``.

    ``k1 / max|g|`` is the torque that moves ``w`` by ``k1`` where the input
    is most effective, so ``fraction`` measures the disturbance against the
    switching authority. ``k1`` defaults to the designed gain.
    """
    from .pfl import regularity_profile
    if fraction == 0:
        return None
    t = np.linspace(0.0, d.orbit.T, n, endpoint=False)
    gmax = float(np.max(np.abs(regularity_profile(d.model, d.curve, d.orbit, t))))
    k1 = d.smc.gains.k1 if k1 is None else k1
    return Disturbance(amplitude=fraction * k1 / gmax, omega=omega)
