"""Scenario configuration files: a TOML schema with an explicit version
field, per-field diagnostics, and a canonical serializer. Decimal amounts
travel as strings so fixed-point exactness survives the round trip.
"""

from __future__ import annotations

import json
from decimal import Decimal, InvalidOperation
from typing import Any, Mapping

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .money import dec
from .sim import AgentSpec, AssetSpec, DemandSpec, MetricSpec, Scenario, ValidatorSpec
from .state import ProtocolParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[tuple[str, str]]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in diagnostics))


# field name -> value kind; kinds drive both parsing and serialization
_PARAM_KINDS = {
    "rho_min": "money",
    "eta": "float",
    "chi": "float",
    "b": "float",
    "zeta": "float",
    "theta": "float",
    "c": "int",
    "k": "float",
    "nu": "float",
    "e_mid": "float",
    "upsilon": "float",
    "psi": "float",
    "q1": "float",
    "q2": "float",
    "b_lower": "float",
    "w_floor": "float",
    "g_factor": "float",
    "kappa_w": "float",
    "w_nst_target": "float",
    "t_ratio": "float",
    "varpi": "float",
    "m_win": "int",
    "n_win": "int",
    "unstake_epochs": "int",
    "r_min": "money",
    "sigma_ceiling": "float",
    "es_limit": "float",
    "ci": "float",
    "gamma": "gamma",
    "round_len": "int",
    "srr": "money",
    "accrual_epochs": "optint",
    "extension_every": "int",
    "liveness_safety": "float",
    "min_viable_nodes": "int",
    "lambda_liveness": "float",
    "target_eff0": "float",
    "lock_floor_frac": "float",
    "credit_b0": "money",
    "credit_decay": "float",
}

_SCENARIO_KINDS = {
    "seed": "int",
    "epochs": "int",
    "correlation": "float",
    "slash_prob": "float",
    "credit_spend_rate": "float",
    "wash_rate": "float",
    "discount_rate": "float",
}

_ASSET_KINDS = {
    "symbol": "str",
    "price0": "money",
    "vol": "float",
    "drift": "float",
    "is_nst": "bool",
    "spread": "float",
    "volume_mean": "float",
}

_AGENT_KINDS = {
    "address": "str",
    "endowment": "money",
    "arrival_epoch": "int",
    "lock_menu": "intlist",
}

_VALIDATOR_KINDS = {"id": "str", "direct_stake": "money", "min_stake": "money"}

_DEMAND_KINDS = {"mean": "float", "vol": "float", "series": "floatlist"}

_METRIC_KINDS = {"w1": "float", "w2": "float", "alpha": "float", "kappa_limit": "float", "cvar_limit": "float"}


def _coerce(value: Any, kind: str, path: str, diags: list[tuple[str, str]]):
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            diags.append((path, f"expected integer, got {type(value).__name__}"))
            return None
        return value
    if kind == "optint":
        return _coerce(value, "int", path, diags)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            diags.append((path, f"expected number, got {type(value).__name__}"))
            return None
        return float(value)
    if kind == "money":
        if isinstance(value, float):
            diags.append((path, "decimal amounts must be strings (or integers), not floats"))
            return None
        if isinstance(value, bool) or not isinstance(value, (str, int)):
            diags.append((path, f"expected decimal string, got {type(value).__name__}"))
            return None
        try:
            return dec(str(value))
        except InvalidOperation:
            diags.append((path, f"not a decimal amount: {value!r}"))
            return None
    if kind == "str":
        if not isinstance(value, str):
            diags.append((path, f"expected string, got {type(value).__name__}"))
            return None
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            diags.append((path, f"expected boolean, got {type(value).__name__}"))
            return None
        return value
    if kind == "intlist":
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            diags.append((path, "expected a list of integers"))
            return None
        return tuple(value)
    if kind == "floatlist":
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            diags.append((path, "expected a list of numbers"))
            return None
        return tuple(float(v) for v in value)
    if kind == "gamma":
        if isinstance(value, Mapping):
            out = {}
            for sym, g in value.items():
                got = _coerce(g, "float", f"{path}.{sym}", diags)
                if got is not None:
                    out[sym] = got
            return out
        return _coerce(value, "float", path, diags)
    raise AssertionError(f"unknown kind {kind}")


def _build_table(table: Mapping, kinds: Mapping[str, str], path: str, diags: list[tuple[str, str]]) -> dict:
    out = {}
    for key, value in table.items():
        if key not in kinds:
            diags.append((f"{path}.{key}", "unknown field"))
            continue
        got = _coerce(value, kinds[key], f"{path}.{key}", diags)
        if got is not None:
            out[key] = got
    return out


def parse_scenario(text: str) -> Scenario:
    """Parse a TOML scenario; raises ConfigError carrying one diagnostic
    per violation (field path + message)."""
    diags: list[tuple[str, str]] = []
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("<toml>", str(exc))]) from exc

    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        diags.append(("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}"))

    known_top = {"schema_version", "scenario", "params", "demand", "metrics", "assets", "agents", "validators"}
    for key in raw:
        if key not in known_top:
            diags.append((key, "unknown section"))

    sc_tab = raw.get("scenario", {})
    sc_kw = _build_table(sc_tab, _SCENARIO_KINDS, "scenario", diags)
    for req in ("seed", "epochs"):
        if req not in sc_kw:
            diags.append((f"scenario.{req}", "required"))

    params_kw = _build_table(raw.get("params", {}), _PARAM_KINDS, "params", diags)
    demand_kw = _build_table(raw.get("demand", {}), _DEMAND_KINDS, "demand", diags)
    metrics_kw = _build_table(raw.get("metrics", {}), _METRIC_KINDS, "metrics", diags)

    assets = []
    raw_assets = raw.get("assets", [])
    if not isinstance(raw_assets, list):
        diags.append(("assets", "expected an array of tables"))
        raw_assets = []
    for i, tab in enumerate(raw_assets):
        kw = _build_table(tab, _ASSET_KINDS, f"assets[{i}]", diags)
        if "symbol" not in kw:
            diags.append((f"assets[{i}].symbol", "required"))
            continue
        assets.append(AssetSpec(**kw))
    if not assets:
        diags.append(("assets", "at least one asset is required"))

    agents = []
    for i, tab in enumerate(raw.get("agents", [])):
        kw = _build_table(tab, _AGENT_KINDS, f"agents[{i}]", diags)
        if "address" not in kw:
            diags.append((f"agents[{i}].address", "required"))
            continue
        agents.append(AgentSpec(**kw))

    validators = []
    for i, tab in enumerate(raw.get("validators", [])):
        kw = _build_table(tab, _VALIDATOR_KINDS, f"validators[{i}]", diags)
        if "id" not in kw or "direct_stake" not in kw:
            diags.append((f"validators[{i}]", "id and direct_stake are required"))
            continue
        validators.append(ValidatorSpec(**kw))

    if diags:
        raise ConfigError(diags)

    scenario = Scenario(
        assets=tuple(assets),
        agents=tuple(agents),
        validators=tuple(validators),
        demand=DemandSpec(**demand_kw),
        params=ProtocolParams(**params_kw),
        metrics=MetricSpec(**metrics_kw),
        schema_version=SCHEMA_VERSION,
        **sc_kw,
    )
    bad = scenario.violations()
    if bad:
        raise ConfigError(bad)
    return scenario


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Decimal):
        return json.dumps(str(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, Mapping):
        inner = ", ".join(f"{k} = {_fmt(v)}" for k, v in sorted(value.items()))
        return "{ " + inner + " }"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _emit_table(name: str, obj, kinds: Mapping[str, str], lines: list[str], array: bool = False) -> None:
    lines.append(f"[[{name}]]" if array else f"[{name}]")
    for key in kinds:
        value = getattr(obj, key) if not isinstance(obj, Mapping) else obj[key]
        if value is None:
            continue  # optional field held at its absent default
        if kinds[key] in ("intlist", "floatlist") and not value:
            continue
        lines.append(f"{key} = {_fmt(value)}")
    lines.append("")


def serialize_scenario(sc: Scenario) -> str:
    """Canonical TOML emission; parse(serialize(parse(x))) == parse(x)."""
    lines = [f"schema_version = {SCHEMA_VERSION}", ""]
    lines.append("[scenario]")
    for key in _SCENARIO_KINDS:
        lines.append(f"{key} = {_fmt(getattr(sc, key))}")
    lines.append("")
    _emit_table("params", sc.params, _PARAM_KINDS, lines)
    _emit_table("demand", sc.demand, _DEMAND_KINDS, lines)
    _emit_table("metrics", sc.metrics, _METRIC_KINDS, lines)
    for asset in sc.assets:
        _emit_table("assets", asset, _ASSET_KINDS, lines, array=True)
    for validator in sc.validators:
        _emit_table("validators", validator, _VALIDATOR_KINDS, lines, array=True)
    for agent in sc.agents:
        _emit_table("agents", agent, _AGENT_KINDS, lines, array=True)
    return "\n".join(lines)
