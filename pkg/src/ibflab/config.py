"""Experiment configuration: strict JSON parsing, validation and digests.

A config is a JSON object with the sections below; every key is optional
and unknown keys are rejected.  Validation collects every violation before
failing so a user can fix a document in one pass.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

from .covariance import KINDS, SOLENOIDAL, CorrelationFamily
from .flow import CHOLESKY, EIGEN_CLIP, StepScheme

DEFAULTS: dict[str, Any] = {
    "family": {"kind": SOLENOIDAL, "length_scale": 1.0, "mix_weight": 0.5, "dimension": 2},
    "scheme": {"dt": 0.01, "jitter": 1e-10, "factorization": CHOLESKY},
    "curve": {
        "kind": "segment", "geometry": {"a": [-0.5, 0.0], "b": [0.5, 0.0]},
        "refine_threshold": 0.25, "max_points": 256,
    },
    "horizon": 10.0,
    "replicas": 64,
    "master_seed": 0,
    "grid": {"cell_size": 0.25, "extent": 64},
    "targets": {"directions": 8, "t_grid": [4.0, 6.0, 8.0, 10.0], "R": 2.0, "eps": 0.3},
    "front": {
        "prune_margin": 1.5, "prune_interval": 0.25, "thin_cell": 1.0, "thin_keep": 4,
        "thin_depth": 0.5, "point_budget": 1500, "refine_threshold": 0.25, "max_points": 4000,
    },
    "radial": {"r0": 0.5, "r0_grid": [0.05, 0.2, 0.5, 1.0, 2.0, 5.0], "horizon": 1.0, "dt": 0.001},
    "control": {"n": 102, "Q": [0.0, 0.0]},
    "outputs": {"dir": "ibflab-out"},
}

CURVE_KINDS = ("segment", "circle", "polyline")
UINT64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Syntax error (with line/column) or a list of semantic violations."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __getitem__(self, key):
        return self.data[key]

    @property
    def family(self) -> CorrelationFamily:
        return CorrelationFamily.from_record(self.data["family"])

    @property
    def scheme(self) -> StepScheme:
        return StepScheme(**self.data["scheme"])

    @property
    def replicas(self) -> int:
        return self.data["replicas"]

    @property
    def master_seed(self) -> int:
        return self.data["master_seed"]

    def with_overrides(self, seed=None, replicas=None, out=None) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["master_seed"] = int(seed)
        if replicas is not None:
            d["replicas"] = int(replicas)
        if out is not None:
            d["outputs"]["dir"] = str(out)
        errs = _validate(d)
        if errs:
            raise ConfigError(errs)
        return ExperimentConfig(d)

    def to_json(self) -> str:
        return serialize_config(self)

    def digest(self) -> str:
        return config_digest(self)


def _merge(defaults: dict, given: dict, path: str, errs: list[str]) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        where = f"{path}.{k}" if path else k
        if k not in defaults:
            errs.append(f"unknown key {where!r}")
            continue
        if isinstance(defaults[k], dict) and k != "geometry":
            if not isinstance(v, dict):
                errs.append(f"{where} must be an object")
                continue
            out[k] = _merge(defaults[k], v, where, errs)
        else:
            out[k] = v
    return out


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _point(x) -> bool:
    return isinstance(x, list) and len(x) == 2 and all(_is_num(c) for c in x)


def _validate(d: dict) -> list[str]:
    errs: list[str] = []

    def pos(path, x, allow_zero=False):
        ok = _is_num(x) and (x >= 0 if allow_zero else x > 0)
        if not ok:
            errs.append(f"{path} must be {'nonnegative' if allow_zero else 'positive'}")

    fam = d["family"]
    if fam["kind"] not in KINDS:
        errs.append(f"family.kind must be one of {list(KINDS)}")
    pos("family.length_scale", fam["length_scale"])
    if not (_is_num(fam["mix_weight"]) and 0 <= fam["mix_weight"] <= 1):
        errs.append("family.mix_weight must lie in [0, 1]")
    if not (_is_int(fam["dimension"]) and fam["dimension"] >= 2):
        errs.append("family.dimension must be an integer >= 2")

    sch = d["scheme"]
    pos("scheme.dt", sch["dt"])
    pos("scheme.jitter", sch["jitter"], allow_zero=True)
    if sch["factorization"] not in (CHOLESKY, EIGEN_CLIP):
        errs.append(f"scheme.factorization must be {CHOLESKY!r} or {EIGEN_CLIP!r}")

    cur = d["curve"]
    geo = cur.get("geometry")
    if cur["kind"] not in CURVE_KINDS:
        errs.append(f"curve.kind must be one of {list(CURVE_KINDS)}")
    elif not isinstance(geo, dict):
        errs.append("curve.geometry must be an object")
    else:
        want = {"segment": {"a", "b"}, "circle": {"center", "radius"}, "polyline": {"points", "closed"}}
        need = want[cur["kind"]]
        for k in sorted(set(geo) - need):
            errs.append(f"unknown key 'curve.geometry.{k}' for a {cur['kind']}")
        for k in sorted(need - set(geo)):
            if not (cur["kind"] == "polyline" and k == "closed"):
                errs.append(f"curve.geometry.{k} is required for a {cur['kind']}")
        if cur["kind"] == "segment":
            for k in ("a", "b"):
                if k in geo and not _point(geo[k]):
                    errs.append(f"curve.geometry.{k} must be a 2-vector")
        elif cur["kind"] == "circle":
            if "center" in geo and not _point(geo["center"]):
                errs.append("curve.geometry.center must be a 2-vector")
            if "radius" in geo:
                pos("curve.geometry.radius", geo["radius"])
        else:
            pts = geo.get("points")
            if pts is not None and not (isinstance(pts, list) and len(pts) >= 2 and all(_point(p) for p in pts)):
                errs.append("curve.geometry.points must be a list of at least two 2-vectors")
            if "closed" in geo and not isinstance(geo["closed"], bool):
                errs.append("curve.geometry.closed must be a boolean")

    pos("curve.refine_threshold", cur["refine_threshold"])
    if not (_is_int(cur["max_points"]) and cur["max_points"] >= 2):
        errs.append("curve.max_points must be an integer >= 2")

    pos("horizon", d["horizon"], allow_zero=True)
    if not (_is_int(d["replicas"]) and d["replicas"] >= 1):
        errs.append("replicas must be ≥ 1")
    if not (_is_int(d["master_seed"]) and 0 <= d["master_seed"] <= UINT64_MAX):
        errs.append("master_seed must be a 64-bit unsigned integer")

    g = d["grid"]
    pos("grid.cell_size", g["cell_size"])
    if not (_is_int(g["extent"]) and g["extent"] >= 1):
        errs.append("grid.extent must be an integer >= 1")

    tg = d["targets"]
    if not (_is_int(tg["directions"]) and tg["directions"] >= 1):
        errs.append("targets.directions must be an integer >= 1")
    tgrid = tg["t_grid"]
    if not (isinstance(tgrid, list) and len(tgrid) >= 3 and all(_is_num(t) and t >= 0 for t in tgrid)):
        errs.append("targets.t_grid must list at least three nonnegative times")
    elif any(b <= a for a, b in zip(tgrid, tgrid[1:])):
        errs.append("targets.t_grid must be increasing")
    pos("targets.R", tg["R"])
    if not (_is_num(tg["eps"]) and 0 < tg["eps"] < 1):
        errs.append("targets.eps must lie in (0, 1)")

    fr = d["front"]
    for k in ("prune_margin", "thin_cell"):
        if fr[k] is not None:
            pos(f"front.{k}", fr[k])
    pos("front.prune_interval", fr["prune_interval"])
    for k in ("thin_keep", "max_points"):
        if not (_is_int(fr[k]) and fr[k] >= 1):
            errs.append(f"front.{k} must be an integer >= 1")
    if fr["point_budget"] is not None and not (_is_int(fr["point_budget"]) and fr["point_budget"] >= 1):
        errs.append("front.point_budget must be an integer >= 1 or null")
    pos("front.thin_depth", fr["thin_depth"], allow_zero=True)
    pos("front.refine_threshold", fr["refine_threshold"])

    rad = d["radial"]
    pos("radial.r0", rad["r0"])
    if not (isinstance(rad["r0_grid"], list) and rad["r0_grid"] and all(_is_num(r) and r > 0 for r in rad["r0_grid"])):
        errs.append("radial.r0_grid must list positive radii")
    pos("radial.horizon", rad["horizon"])
    pos("radial.dt", rad["dt"])

    ctl = d["control"]
    if not (_is_int(ctl["n"]) and ctl["n"] >= 2):
        errs.append("control.n must be an integer >= 2")
    if not _point(ctl["Q"]):
        errs.append("control.Q must be a 2-vector")

    if not (isinstance(d["outputs"]["dir"], str) and d["outputs"]["dir"]):
        errs.append("outputs.dir must be a nonempty string")
    return errs


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON document; raises :class:`ConfigError`."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])
    errs: list[str] = []
    merged = _merge(DEFAULTS, raw, "", errs)
    if "curve" in raw and isinstance(raw["curve"], dict) and "kind" in raw["curve"] \
            and "geometry" not in raw["curve"]:
        merged["curve"]["geometry"] = {}
    if not errs:
        errs = _validate(merged)
    if errs:
        raise ConfigError(errs)
    return ExperimentConfig(merged)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_digest(cfg: ExperimentConfig) -> str:
    canon = json.dumps(cfg.data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
