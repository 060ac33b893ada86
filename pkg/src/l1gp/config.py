"""Flat key-value scenario configuration files and their resolution.

The file format is a minimal TOML-style dialect chosen for hand-editable
experiment decks: ``key = value`` lines, ``[section]`` headers (dotted
keys inside a section are equivalent to ``section.key`` at top level),
``#`` comments, scalars (int/float/bool/string) and flat lists. Every
default the run will actually use is materialized during resolution so
the manifest can echo a complete, re-runnable configuration.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from . import controller as ctrl
from . import learner as learner_mod
from . import gp, plant as plant_mod, scenario

__all__ = ["ConfigError", "parse_flat_file", "resolve_scenario", "flatten_scenario"]


class ConfigError(ValueError):
    """Malformed or incomplete configuration; message names the problem field."""


def _parse_scalar(text: str) -> Any:
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_value(text: str) -> Any:
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part) for part in inner.split(",")]
    return _parse_scalar(text)


def parse_flat_file(path: str) -> dict:
    """Parse a config file into a flat {dotted.key: value} dict."""
    flat: dict = {}
    section = ""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if not section:
                    raise ConfigError(f"line {lineno}: empty section header")
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"line {lineno}: missing key")
            full = f"{section}.{key}" if section else key
            flat[full] = _parse_value(value)
    return flat


def _vec3(value, name: str) -> np.ndarray:
    if isinstance(value, (int, float)):
        return np.full(3, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ConfigError(f"{name} must be a scalar or a 3-element list")
    return arr


_KNOWN_KEYS = {
    "duration", "step", "seed", "record_decimation", "blowup",
    "reference.kind", "reference.amplitude", "reference.frequency",
    "controller.mode", "controller.ts", "controller.omega_c",
    "controller.omega_l", "controller.omega_0", "controller.a_m",
    "controller.x_hat0",
    "plant.j", "plant.x0", "plant.uncertainty", "plant.switch_time",
    "plant.input_delay", "plant.delay_total",
    "learner.enabled", "learner.t_data", "learner.n_update",
    "learner.gating", "learner.gamma_tol", "learner.max_points",
    "learner.sigma_n",
    "kernel.sigma_f", "kernel.length_scale",
    "bound.kappa", "bound.xi", "bound.delta", "bound.l_f",
    "bound.include_gamma", "bound.kappa_op", "bound.grid_points",
    "condition.check", "condition.l_f", "condition.b0",
    "condition.rho_0", "condition.rho_r",
}

_REQUIRED_KEYS = ("plant.j",)


def resolve_scenario(flat: dict) -> tuple[scenario.ScenarioConfig, dict]:
    """Build a ScenarioConfig from a flat dict; returns (config, echo).

    The echo dict contains every key the run uses, including materialized
    defaults, so feeding it back through this function reproduces the run
    exactly.
    """
    unknown = set(flat) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in _REQUIRED_KEYS:
        if key not in flat:
            raise ConfigError(f"missing required config key: {key}")

    def get(key, default):
        return flat.get(key, default)

    J = _vec3(get("plant.j", None), "plant.j")
    a_m = _vec3(get("controller.a_m", -3.0), "controller.a_m")
    A_m = np.diag(a_m)
    B_m = np.diag(1.0 / J)
    C_m = np.eye(3)

    controller_cfg = ctrl.ControllerConfig(
        A_m=A_m,
        B_m=B_m,
        C_m=C_m,
        T_s=float(get("controller.ts", 0.001)),
        omega_c=float(get("controller.omega_c", 80.0)),
        omega_L=float(get("controller.omega_l", 0.01)),
        omega_0=float(get("controller.omega_0", 1.0)),
        mode=str(get("controller.mode", "l1gp")),
        x_hat0=_vec3(get("controller.x_hat0", [0.5, 0.5, 0.5]), "controller.x_hat0"),
    )

    kind = str(get("plant.uncertainty", "quadratic"))
    switch_time = get("plant.switch_time", None)
    if switch_time is not None:
        segments = ((0.0, kind), (float(switch_time), "sine_switch"))
    else:
        segments = ((0.0, kind),)
    plant_cfg = plant_mod.PlantConfig(
        J=np.diag(J),
        x0=_vec3(get("plant.x0", 0.0), "plant.x0"),
        uncertainty=plant_mod.UncertaintySchedule(segments),
        input_delay=float(get("plant.input_delay", 0.0)),
        delay_total=bool(get("plant.delay_total", False)),
        A_m=A_m,
    )

    learner_cfg = None
    if bool(get("learner.enabled", controller_cfg.mode == "l1gp")):
        kernel = gp.SeKernel(
            sigma_f=float(get("kernel.sigma_f", 1.0)),
            length_scale=float(get("kernel.length_scale", 1.0)),
        )
        bound = gp.UniformBoundConfig(
            kappa=float(get("bound.kappa", 15.0)),
            xi=float(get("bound.xi", 0.001)),
            delta=float(get("bound.delta", 0.01)),
            lip_f=float(get("bound.l_f", 0.0)),
            include_gamma=bool(get("bound.include_gamma", False)),
        )
        learner_cfg = learner_mod.LearnerConfig(
            T_data=float(get("learner.t_data", 1.0)),
            N_update=int(get("learner.n_update", 10)),
            gating=str(get("learner.gating", "always")),
            gamma_tol=float(get("learner.gamma_tol", 0.9)),
            max_points=int(get("learner.max_points", 512)),
            sigma_n=float(get("learner.sigma_n", 0.01)),
            kernel=kernel,
            bound=bound,
            kappa_op=float(get("bound.kappa_op", 5.0)),
            grid_points=int(get("bound.grid_points", 21)),
        )

    reference = scenario.ReferenceConfig(
        kind=str(get("reference.kind", "step")),
        amplitude=_vec3(get("reference.amplitude", 1.0), "reference.amplitude"),
        frequency=_vec3(get("reference.frequency", 0.5), "reference.frequency"),
    )

    condition = scenario.ConditionParams(
        check=bool(get("condition.check", True)),
        lip_f=float(get("condition.l_f", 0.2)),
        b0=float(get("condition.b0", 0.0)),
        rho_0=(None if get("condition.rho_0", None) is None
               else float(flat["condition.rho_0"])),
        rho_r=(None if get("condition.rho_r", None) is None
               else float(flat["condition.rho_r"])),
    )

    try:
        cfg = scenario.ScenarioConfig(
            controller=controller_cfg,
            plant=plant_cfg,
            learner=learner_cfg,
            reference=reference,
            duration=float(get("duration", 60.0)),
            step=float(get("step", 0.001)),
            seed=int(get("seed", 12345)),
            record_decimation=int(get("record_decimation", 10)),
            blowup=float(get("blowup", 100.0)),
            condition=condition,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, flatten_scenario(cfg)


def flatten_scenario(cfg: scenario.ScenarioConfig) -> dict:
    """Echo a resolved scenario as the flat dict that reproduces it."""
    c = cfg.controller
    p = cfg.plant
    flat = {
        "duration": cfg.duration,
        "step": cfg.step,
        "seed": cfg.seed,
        "record_decimation": cfg.record_decimation,
        "blowup": cfg.blowup,
        "reference.kind": cfg.reference.kind,
        "reference.amplitude": cfg.reference.amplitude.tolist(),
        "reference.frequency": cfg.reference.frequency.tolist(),
        "controller.mode": c.mode,
        "controller.ts": c.T_s,
        "controller.omega_c": c.omega_c,
        "controller.omega_l": c.omega_L,
        "controller.omega_0": c.omega_0,
        "controller.a_m": np.diag(c.A_m).tolist(),
        "controller.x_hat0": c.x_hat0.tolist(),
        "plant.j": np.diag(p.J).tolist(),
        "plant.x0": p.x0.tolist(),
        "plant.uncertainty": _segment_kind_name(p.uncertainty.segments[0][1]),
        "plant.input_delay": p.input_delay,
        "plant.delay_total": p.delay_total,
        "condition.check": cfg.condition.check,
        "condition.l_f": cfg.condition.lip_f,
        "condition.b0": cfg.condition.b0,
    }
    if cfg.condition.rho_0 is not None:
        flat["condition.rho_0"] = cfg.condition.rho_0
    if cfg.condition.rho_r is not None:
        flat["condition.rho_r"] = cfg.condition.rho_r
    if len(p.uncertainty.segments) > 1:
        flat["plant.switch_time"] = p.uncertainty.segments[1][0]
    if cfg.learner is not None:
        l = cfg.learner
        flat.update(
            {
                "learner.enabled": True,
                "learner.t_data": l.T_data,
                "learner.n_update": l.N_update,
                "learner.gating": l.gating,
                "learner.gamma_tol": l.gamma_tol,
                "learner.max_points": l.max_points,
                "learner.sigma_n": l.sigma_n,
                "kernel.sigma_f": l.kernel.sigma_f,
                "kernel.length_scale": l.kernel.length_scale,
                "bound.kappa": l.bound.kappa,
                "bound.xi": l.bound.xi,
                "bound.delta": l.bound.delta,
                "bound.l_f": l.bound.lip_f,
                "bound.include_gamma": l.bound.include_gamma,
                "bound.kappa_op": l.kappa_op,
                "bound.grid_points": l.grid_points,
            }
        )
    else:
        flat["learner.enabled"] = False
    return flat


def _segment_kind_name(kind) -> str:
    if isinstance(kind, str):
        return kind
    return getattr(kind, "__name__", "custom")
