"""Scenario files (YAML) and report serialization.

Units live in key names.  Full schema::

    seed: 7                      # master seed
    n_segments: 1200
    threshold: 1.0e-5            # disruption threshold for "auto" buffers
    buffer_s: auto               # or seconds
    stall_policy: resume         # resume | rebuffer
    fdt_loss: true               # FDT packet subject to the same PER
    design_percentile: 10
    service:
      t_seg_s: 0.5
      r_embms_bps: 1.3e6
      media_bitrate_bps: 1.0e6
      code_rate: 0.78
      symbol_size_bytes: 1024
    delays:                      # all optional, default 0
      d_se_s: 0.5
      d_fe_s: 0.05
      d_fd_s: 0.05
      d_pvs_s: 0.2
    unicast:
      rtt_s: 0.05
      d_t_s: 1.0                 # exactly one of d_t_s / d_t_factor / unicast_rate_bps
      # d_t_factor: 2.0          # multiple of t_seg_s
      # unicast_rate_bps: 5.0e5
    users:                       # explicit users; per or p_loss each
      - {id: 1, per: 0.02}
      - {id: 2, p_loss: 0.05}
    population:                  # optional synthetic users, appended after `users`
      count: 399
      kind: p_loss               # p_loss | per
      distribution: beta         # beta | uniform | fixed
      a: 0.5
      b: 12.0
      seed: 11
      first_id: 1
    forced_bursts:
      - {user: 1, start: 20, length: 3}
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import yaml

from .metrics import SummaryReport, UserReport, classify_severity
from .planner import DEFAULT_THRESHOLD, DelayBudget, ServiceConfig, UnicastLink
from .simulator import ForcedBurst, Scenario, ScenarioError, StallPolicy, UserSpec

USERS_COLUMNS = ("user_id", "loss_rate", "stall_count", "total_stall_s", "startup_s", "e2e_latency_s", "severity")

TOP_KEYS = {
    "seed", "n_segments", "threshold", "buffer_s", "stall_policy", "fdt_loss",
    "design_percentile", "service", "delays", "unicast", "users", "population",
    "forced_bursts",
}


def fmt(x: float) -> str:
    """Fixed 6-significant-digit rendering used by every report."""
    return f"{x:.6g}"


def round6(x: float) -> float:
    return float(fmt(x))


def _section(raw: Mapping, name: str, required: bool = True) -> Mapping:
    value = raw.get(name)
    if value is None:
        if required:
            raise ScenarioError(name, "section is required")
        return {}
    if not isinstance(value, Mapping):
        raise ScenarioError(name, "must be a mapping")
    return value


def _number(section: Mapping, key: str, where: str, default: Any = ...) -> float:
    name = f"{where}.{key}" if where else key
    if key not in section:
        if default is ...:
            raise ScenarioError(name, "is required")
        return default
    value = section[key]
    if isinstance(value, str):
        # YAML 1.1 reads 1.3e6 (unsigned exponent) as a string
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(name, f"expected a number, got {value!r}")
    return value


def _check_keys(section: Mapping, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ScenarioError(f"{where}.{unknown[0]}" if where else str(unknown[0]), "unknown key")


def synthetic_population(spec: Mapping) -> list[UserSpec]:
    _check_keys(spec, {"count", "kind", "distribution", "a", "b", "low", "high", "value", "seed", "first_id"}, "population")
    count = int(_number(spec, "count", "population"))
    if count < 1:
        raise ScenarioError("population.count", "must be >= 1")
    kind = spec.get("kind", "p_loss")
    if kind not in ("p_loss", "per"):
        raise ScenarioError("population.kind", "must be p_loss or per")
    rng = np.random.default_rng(int(_number(spec, "seed", "population", 0)))
    dist = spec.get("distribution", "beta")
    if dist == "beta":
        values = rng.beta(_number(spec, "a", "population"), _number(spec, "b", "population"), count)
    elif dist == "uniform":
        values = rng.uniform(_number(spec, "low", "population", 0.0), _number(spec, "high", "population"), count)
    elif dist == "fixed":
        values = np.full(count, _number(spec, "value", "population"))
    else:
        raise ScenarioError("population.distribution", f"unknown distribution {dist!r}")
    first = int(_number(spec, "first_id", "population", 1))
    return [UserSpec(user_id=first + i, **{kind: float(v)}) for i, v in enumerate(values)]


def scenario_from_dict(raw: Mapping, seed: Optional[int] = None) -> Scenario:
    if not isinstance(raw, Mapping):
        raise ScenarioError("<root>", "scenario must be a mapping")
    _check_keys(raw, TOP_KEYS, "")

    svc_raw = _section(raw, "service")
    _check_keys(svc_raw, {"t_seg_s", "r_embms_bps", "media_bitrate_bps", "code_rate", "symbol_size_bytes"}, "service")
    try:
        svc = ServiceConfig(
            t_seg=_number(svc_raw, "t_seg_s", "service"),
            r_embms=_number(svc_raw, "r_embms_bps", "service"),
            media_bitrate=_number(svc_raw, "media_bitrate_bps", "service"),
            code_rate=_number(svc_raw, "code_rate", "service", 1.0),
            symbol_size=int(_number(svc_raw, "symbol_size_bytes", "service", 1024)),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("service", str(exc)) from None

    d_raw = _section(raw, "delays", required=False)
    _check_keys(d_raw, {"d_se_s", "d_fe_s", "d_fd_s", "d_pvs_s"}, "delays")
    try:
        budget = DelayBudget(**{k[:-2]: _number(d_raw, k, "delays", 0.0) for k in ("d_se_s", "d_fe_s", "d_fd_s", "d_pvs_s")})
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("delays", str(exc)) from None

    u_raw = _section(raw, "unicast")
    _check_keys(u_raw, {"rtt_s", "d_t_s", "d_t_factor", "unicast_rate_bps"}, "unicast")
    given = [k for k in ("d_t_s", "d_t_factor", "unicast_rate_bps") if k in u_raw]
    if len(given) != 1:
        raise ScenarioError("unicast", "give exactly one of d_t_s / d_t_factor / unicast_rate_bps")
    rtt = _number(u_raw, "rtt_s", "unicast", 0.0)
    try:
        if given[0] == "unicast_rate_bps":
            link = UnicastLink(rtt=rtt, unicast_rate=_number(u_raw, "unicast_rate_bps", "unicast"))
        elif given[0] == "d_t_factor":
            link = UnicastLink(rtt=rtt, d_t=_number(u_raw, "d_t_factor", "unicast") * svc.t_seg)
        else:
            link = UnicastLink(rtt=rtt, d_t=_number(u_raw, "d_t_s", "unicast"))
    except ValueError as exc:
        raise ScenarioError("unicast", str(exc)) from None

    users: list[UserSpec] = []
    for idx, entry in enumerate(raw.get("users") or []):
        if not isinstance(entry, Mapping) or "id" not in entry:
            raise ScenarioError(f"users[{idx}]", "each user needs an id")
        _check_keys(entry, {"id", "per", "p_loss"}, f"users[{idx}]")
        users.append(UserSpec(user_id=entry["id"], per=entry.get("per"), p_loss=entry.get("p_loss")))
    if raw.get("population") is not None:
        users.extend(synthetic_population(_section(raw, "population")))

    bursts = []
    for idx, entry in enumerate(raw.get("forced_bursts") or []):
        if not isinstance(entry, Mapping):
            raise ScenarioError(f"forced_bursts[{idx}]", "must be a mapping")
        _check_keys(entry, {"user", "start", "length"}, f"forced_bursts[{idx}]")
        try:
            bursts.append(ForcedBurst(user_id=entry["user"], start_index=int(entry["start"]), length=int(entry["length"])))
        except KeyError as exc:
            raise ScenarioError(f"forced_bursts[{idx}].{exc.args[0]}", "is required") from None

    buffer = raw.get("buffer_s", "auto")
    if not (buffer == "auto" or (isinstance(buffer, (int, float)) and not isinstance(buffer, bool))):
        raise ScenarioError("buffer_s", "must be a number or 'auto'")
    try:
        policy = StallPolicy(raw.get("stall_policy", "resume"))
    except ValueError:
        raise ScenarioError("stall_policy", "must be resume or rebuffer") from None

    return Scenario(
        svc=svc,
        budget=budget,
        link=link,
        users=tuple(users),
        n_segments=int(_number(raw, "n_segments", "")),
        threshold=_number(raw, "threshold", "", DEFAULT_THRESHOLD),
        buffer_seconds=buffer,
        master_seed=int(seed if seed is not None else _number(raw, "seed", "", 0)),
        forced_bursts=tuple(bursts),
        stall_policy=policy,
        fdt_loss=bool(raw.get("fdt_loss", True)),
        design_percentile=_number(raw, "design_percentile", "", 10.0),
    )


def load_raw(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ScenarioError(str(path), f"not valid YAML: {exc}") from None


def scenario_hash(raw: Mapping, seed: int) -> str:
    canonical = json.dumps({"scenario": raw, "seed": seed}, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def users_csv(reports: Sequence[UserReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(USERS_COLUMNS)
    for r in reports:
        writer.writerow(
            [
                r.user_id,
                fmt(r.empirical_loss_rate),
                r.stall_count,
                fmt(r.total_stall_seconds),
                fmt(r.startup_seconds),
                fmt(r.end_to_end_latency_seconds),
                classify_severity(r).value,
            ]
        )
    return buf.getvalue()


def summary_dict(summary: SummaryReport, scenario_digest: str, seed: int, buffer_seconds: float) -> dict:
    return {
        "n_users": summary.n_users,
        "histogram": dict(summary.stall_count_histogram),
        "severe_fraction": round6(summary.severe_fraction),
        "percentile_loss": {str(p): round6(v) for p, v in summary.percentile_loss.items()},
        "percentile_stalls": {str(p): int(v) for p, v in summary.percentile_stalls.items()},
        "buffer_s": round6(buffer_seconds),
        "scenario_hash": scenario_digest,
        "seed": seed,
    }


def summary_json(payload: Mapping) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
