"""JSON document schemas: task, truth, submission, report, result, manifest.

Task files are agent-visible and never contain truth fields; truth lives in
a separate sidecar document.  All writers emit sorted keys so regenerating a
suite from the same seeds is byte-identical.
"""
from __future__ import annotations

import json
import hashlib
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .grading import CriteriaReport, Submission
from .noise import GpSpec, NoiseSpec
from .orbits import PlanetElements
from .tasks import DifficultyBreakdown, GeneratorConfig, RvDataset, TaskBundle

SCHEMA_VERSION = 1

# keys that only truth-side documents carry; must never appear in any
# agent-visible document (the agent's own submitted planets are fine)
TRUTH_FIELD_NAMES = ("truth", "truth_planets", "truth_offsets", "truth_k_ms",
                     "seed", "noise", "sigma_gp_ms", "p_rot_days", "K_ms")

# the complete set of keys allowed in an agent-visible task payload
TASK_DOC_KEYS = frozenset({"schema_version", "task_id", "tier", "difficulty",
                           "observations", "star_mass_sun", "t_ref_days"})


class SchemaError(Exception):
    """Document is malformed or carries an unsupported schema version."""


def _require(doc: dict, key: str):
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    return doc[key]


def _check_version(doc: dict):
    v = _require(doc, "schema_version")
    if v != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {v!r}")


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1)


def write_doc(path, doc: dict) -> None:
    Path(path).write_text(dumps(doc) + "\n")


def read_doc(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc


# ---------------------------------------------------------------- task files

def task_to_doc(bundle: TaskBundle) -> dict:
    ds = bundle.dataset
    return {
        "schema_version": SCHEMA_VERSION,
        "task_id": bundle.task_id,
        "tier": bundle.tier,
        "difficulty": bundle.difficulty.d_total,
        "observations": {
            "times_days": [float(x) for x in ds.times_days],
            "rvs_ms": [float(x) for x in ds.rvs_ms],
            "sigmas_ms": [float(x) for x in ds.sigmas_ms],
            "labels": list(ds.labels),
        },
        "star_mass_sun": float(ds.star_mass_sun),
        "t_ref_days": float(ds.t_ref_days),
    }


def dataset_from_task_doc(doc: dict) -> RvDataset:
    _check_version(doc)
    obs = _require(doc, "observations")
    for key in ("times_days", "rvs_ms", "sigmas_ms", "labels"):
        _require(obs, key)
    return RvDataset(times_days=np.asarray(obs["times_days"], dtype=float),
                     rvs_ms=np.asarray(obs["rvs_ms"], dtype=float),
                     sigmas_ms=np.asarray(obs["sigmas_ms"], dtype=float),
                     labels=tuple(obs["labels"]),
                     star_mass_sun=float(_require(doc, "star_mass_sun")),
                     t_ref_days=float(_require(doc, "t_ref_days")))


# --------------------------------------------------------------- truth files

def _planet_to_doc(p: PlanetElements, k_ms: Optional[float] = None) -> dict:
    d = {"P_days": p.P_days, "m_sin_i_mjup": p.m_sin_i_mjup, "e": p.e,
         "omega_rad": p.omega_rad, "l_rad": p.l_rad, "Omega_rad": p.Omega_rad}
    if k_ms is not None:
        d["K_ms"] = float(k_ms)
    return d


def _planet_from_doc(d: dict) -> PlanetElements:
    try:
        return PlanetElements(P_days=float(_require(d, "P_days")),
                              m_sin_i_mjup=float(_require(d, "m_sin_i_mjup")),
                              e=float(_require(d, "e")),
                              omega_rad=float(_require(d, "omega_rad")),
                              l_rad=float(_require(d, "l_rad")),
                              Omega_rad=float(d.get("Omega_rad", 0.0)))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad planet record: {exc}") from exc


def _noise_to_doc(spec: NoiseSpec) -> dict:
    gp = None
    if spec.gp is not None:
        gp = {"sigma_gp_ms": spec.gp.sigma_gp_ms, "p_rot_days": spec.gp.p_rot_days}
    return {"sigma_w_ms": spec.sigma_w_ms, "jitter_ms": spec.jitter_ms, "gp": gp}


def _noise_from_doc(d: dict) -> NoiseSpec:
    gp = d.get("gp")
    gp_spec = None
    if gp is not None:
        gp_spec = GpSpec(sigma_gp_ms=float(gp["sigma_gp_ms"]),
                         p_rot_days=float(gp["p_rot_days"]))
    return NoiseSpec(sigma_w_ms=float(d["sigma_w_ms"]),
                     jitter_ms=float(d.get("jitter_ms", 0.0)), gp=gp_spec)


def truth_to_doc(bundle: TaskBundle) -> dict:
    ks = bundle.truth_k_ms or (None,) * len(bundle.truth_planets)
    return {
        "schema_version": SCHEMA_VERSION,
        "task_id": bundle.task_id,
        "seed": bundle.seed,
        "tier": bundle.tier,
        "planets": [_planet_to_doc(p, k) for p, k in zip(bundle.truth_planets, ks)],
        "offsets": {k: float(v) for k, v in bundle.truth_offsets.items()},
        "noise": _noise_to_doc(bundle.noise),
        "difficulty": asdict(bundle.difficulty),
    }


def bundle_from_docs(task_doc: dict, truth_doc: dict) -> TaskBundle:
    _check_version(truth_doc)
    dataset = dataset_from_task_doc(task_doc)
    planet_docs = _require(truth_doc, "planets")
    planets = tuple(_planet_from_doc(d) for d in planet_docs)
    ks = [d.get("K_ms") for d in planet_docs]
    truth_k = tuple(float(k) for k in ks) if any(k is not None for k in ks) else None
    if truth_k is not None and any(k is None for k in ks):
        raise SchemaError("either all or no truth planets may carry K_ms")
    diff = DifficultyBreakdown(**_require(truth_doc, "difficulty"))
    return TaskBundle(seed=truth_doc.get("seed"), dataset=dataset,
                      truth_planets=planets,
                      truth_offsets=dict(_require(truth_doc, "offsets")),
                      noise=_noise_from_doc(_require(truth_doc, "noise")),
                      difficulty=diff, tier=_require(truth_doc, "tier"),
                      task_id=_require(task_doc, "task_id"),
                      truth_k_ms=truth_k)


# --------------------------------------------------------- submission files

def submission_to_doc(sub: Submission) -> dict:
    doc = {"schema_version": SCHEMA_VERSION,
           "planets": [{"P_days": p.P_days, "m_sin_i_mjup": p.m_sin_i_mjup,
                        "e": p.e, "omega_rad": p.omega_rad, "l_rad": p.l_rad}
                       for p in sub.planets]}
    if sub.offsets is not None:
        doc["offsets"] = {k: float(v) for k, v in sub.offsets.items()}
    return doc


def submission_from_doc(doc: dict) -> Submission:
    """Parse the five-field submission planet records (no node field; the
    phase convention is l = omega + M0 with Omega = 0)."""
    _check_version(doc)
    planets = []
    for i, d in enumerate(_require(doc, "planets")):
        try:
            planets.append(PlanetElements(
                P_days=float(_require(d, "P_days")),
                m_sin_i_mjup=float(_require(d, "m_sin_i_mjup")),
                e=float(_require(d, "e")),
                omega_rad=float(_require(d, "omega_rad")),
                l_rad=float(_require(d, "l_rad")),
                Omega_rad=0.0))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"bad planet record {i}: {exc}") from exc
    offsets = doc.get("offsets")
    return Submission(planets=tuple(planets),
                      offsets=None if offsets is None else dict(offsets))


# --------------------------------------------------------------- report files

def report_to_doc(report: CriteriaReport) -> dict:
    def clean(x):
        return None if x is None or (isinstance(x, float) and not np.isfinite(x)) else x

    return {
        "schema_version": SCHEMA_VERSION,
        "ok_rms": bool(report.ok_rms),
        "ok_delta_bic": bool(report.ok_delta_bic),
        "ok_match": bool(report.ok_match),
        "ok_count": bool(report.ok_count),
        "passed": bool(report.passed),
        "rms_ms": clean(report.rms_ms),
        "median_sigma_ms": clean(report.median_sigma_ms),
        "delta_bic_per_point": clean(report.delta_bic_per_point),
        "match_score": clean(report.match_score),
        "n_truth": report.n_truth,
        "n_guess": report.n_guess,
        "assignment": [[i, j, d] for i, j, d in report.assignment],
        "hints": dict(report.hints),
        "format_error": report.format_error,
    }


def report_from_doc(doc: dict) -> CriteriaReport:
    _check_version(doc)
    return CriteriaReport(
        ok_rms=bool(_require(doc, "ok_rms")),
        ok_delta_bic=bool(_require(doc, "ok_delta_bic")),
        ok_match=bool(_require(doc, "ok_match")),
        ok_count=bool(_require(doc, "ok_count")),
        rms_ms=doc.get("rms_ms"),
        median_sigma_ms=doc.get("median_sigma_ms"),
        delta_bic_per_point=doc.get("delta_bic_per_point"),
        match_score=doc.get("match_score"),
        n_truth=doc.get("n_truth"), n_guess=doc.get("n_guess"),
        assignment=tuple((int(i), int(j), float(d))
                         for i, j, d in doc.get("assignment", [])),
        hints=dict(doc.get("hints", {})),
        format_error=bool(doc.get("format_error", False)))


# --------------------------------------------------------------- result files

def result_to_doc(task_id: str, tier: str, status: str,
                  report: Optional[CriteriaReport], n_submissions: int) -> dict:
    return {"schema_version": SCHEMA_VERSION, "task_id": task_id, "tier": tier,
            "status": status, "n_submissions": n_submissions,
            "report": None if report is None else report_to_doc(report)}


# ------------------------------------------------------------------ manifest

def generator_config_doc(config: GeneratorConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v
            for k, v in asdict(config).items()}


def config_hash(config: GeneratorConfig) -> str:
    blob = json.dumps(generator_config_doc(config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def manifest_to_doc(suite_id: str, seeds_by_tier: dict,
                    config: GeneratorConfig) -> dict:
    return {"schema_version": SCHEMA_VERSION, "suite_id": suite_id,
            "counts": {tier: len(seeds) for tier, seeds in seeds_by_tier.items()},
            "seeds": {tier: list(seeds) for tier, seeds in seeds_by_tier.items()},
            "config_hash": config_hash(config),
            "generator_config": generator_config_doc(config)}


def assert_no_truth_fields(doc: dict) -> None:
    """Schema-level scan: no truth-side key anywhere in an outbound document."""
    def walk(node, path):
        if isinstance(node, dict):
            for key, val in node.items():
                if key in TRUTH_FIELD_NAMES:
                    raise AssertionError(f"truth field {key!r} at {path}")
                walk(val, f"{path}.{key}")
        elif isinstance(node, list):
            for i, val in enumerate(node):
                walk(val, f"{path}[{i}]")
    walk(doc, "$")


def assert_task_doc_shape(doc: dict) -> None:
    """Whitelist check for the exact agent-visible task payload keys."""
    extra = set(doc) - TASK_DOC_KEYS
    if extra:
        raise AssertionError(f"unexpected task payload keys: {sorted(extra)}")
