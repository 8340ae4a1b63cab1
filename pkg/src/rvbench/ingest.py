"""Archival RV data ingestion and anonymisation.

Converts published per-instrument RV tables into the task interface:
instrument names become generic identifiers (inst_A, inst_B, ...) in order
of first appearance, times are rebased to the first observation, and no
target-identifying metadata survives into the agent-visible dataset.
Ground truth comes from a sidecar document of published orbital elements.
"""
from __future__ import annotations

import csv
import io

import numpy as np

from .noise import GpSpec, NoiseSpec
from .orbits import PlanetElements
from .tasks import RvDataset, TaskBundle, assign_tier, score_difficulty

_COLUMNS = ("time", "rv", "sigma", "instrument")


class IngestionError(Exception):
    """Raw table is missing columns or otherwise unusable."""


class InvalidTruthError(Exception):
    """Sidecar truth is not a usable Keplerian solution."""


def parse_archive_table(text: str):
    """Parse a delimited table with columns time, rv, sigma, instrument.

    Accepts comma-, semicolon-, tab- or whitespace-delimited text with a
    header row naming the columns (case-insensitive, any order).
    """
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise IngestionError("empty table")
    if "," in lines[0] or ";" in lines[0] or "\t" in lines[0]:
        delim = "," if "," in lines[0] else (";" if ";" in lines[0] else "\t")
        rows = list(csv.reader(io.StringIO("\n".join(lines)), delimiter=delim))
    else:
        rows = [ln.split() for ln in lines]
    header = [h.strip().lower() for h in rows[0]]
    missing = [c for c in _COLUMNS if c not in header]
    if missing:
        raise IngestionError(f"missing column(s): {missing}")
    idx = {c: header.index(c) for c in _COLUMNS}
    records = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) < len(header):
            raise IngestionError(f"row {n}: expected {len(header)} fields")
        try:
            records.append((float(row[idx["time"]]), float(row[idx["rv"]]),
                            float(row[idx["sigma"]]),
                            str(row[idx["instrument"]]).strip()))
        except ValueError as exc:
            raise IngestionError(f"row {n}: {exc}") from exc
    if not records:
        raise IngestionError("table has a header but no data rows")
    return records


def _truth_planets_from_sidecar(planet_docs):
    planets, ks = [], []
    for i, d in enumerate(planet_docs):
        e = float(d["e"])
        if e > 0.99:
            raise InvalidTruthError(f"truth planet {i}: eccentricity {e} > 0.99")
        try:
            planets.append(PlanetElements(
                P_days=float(d["P_days"]), m_sin_i_mjup=float(d["m_sin_i_mjup"]),
                e=e, omega_rad=float(d["omega_rad"]), l_rad=float(d["l_rad"]),
                Omega_rad=float(d.get("Omega_rad", 0.0))))
        except (KeyError, ValueError) as exc:
            raise InvalidTruthError(f"truth planet {i}: {exc}") from exc
        ks.append(d.get("K_ms"))
    if any(k is not None for k in ks):
        if any(k is None for k in ks):
            raise InvalidTruthError("either all or no truth planets may carry K_ms")
        truth_k = tuple(float(k) for k in ks)
    else:
        truth_k = None
    return tuple(planets), truth_k


def ingest_archive(records, truth: dict, task_id: str = "archival") -> TaskBundle:
    """Build a TaskBundle from raw archival rows and a truth sidecar.

    records: iterable of (time, rv, sigma, instrument) rows.
    truth: sidecar dict with planets, star_mass_sun, and optionally
           offsets and a noise block (used only for difficulty scoring).
    """
    rows = sorted(records, key=lambda r: (r[0],))
    if not rows:
        raise IngestionError("no observations")
    for n, row in enumerate(rows):
        if len(row) != 4:
            raise IngestionError(f"row {n}: expected (time, rv, sigma, instrument)")
        if not np.isfinite(row[2]) or row[2] <= 0:
            raise IngestionError(f"row {n}: missing or non-positive sigma")

    name_map = {}
    for row in rows:
        if row[3] not in name_map:
            name_map[row[3]] = f"inst_{chr(ord('A') + len(name_map))}"
    labels = tuple(name_map[r[3]] for r in rows)

    t0 = rows[0][0]
    times = np.array([r[0] - t0 for r in rows])
    for i in range(1, times.size):
        if times[i] <= times[i - 1]:
            times[i] = times[i - 1] + 1e-6

    planets, truth_k = _truth_planets_from_sidecar(truth.get("planets", ()))
    if not planets:
        raise InvalidTruthError("sidecar lists no planets")
    try:
        star_mass = float(truth["star_mass_sun"])
    except KeyError as exc:
        raise InvalidTruthError("sidecar must provide star_mass_sun") from exc

    dataset = RvDataset(times_days=times,
                        rvs_ms=np.array([r[1] for r in rows]),
                        sigmas_ms=np.array([r[2] for r in rows]),
                        labels=labels, star_mass_sun=star_mass,
                        t_ref_days=0.0)

    noise_doc = truth.get("noise") or {}
    gp_doc = noise_doc.get("gp")
    noise = NoiseSpec(
        sigma_w_ms=float(noise_doc.get("sigma_w_ms",
                                       np.median(dataset.sigmas_ms))),
        jitter_ms=float(noise_doc.get("jitter_ms", 0.0)),
        gp=None if gp_doc is None else GpSpec(float(gp_doc["sigma_gp_ms"]),
                                              float(gp_doc["p_rot_days"])))

    offsets = {name_map[k]: float(v)
               for k, v in (truth.get("offsets") or {}).items()
               if k in name_map}

    # provisional bundle for rubric scoring, then attach the real breakdown
    provisional = TaskBundle(seed=None, dataset=dataset, truth_planets=planets,
                             truth_offsets=offsets, noise=noise,
                             difficulty=None, tier="easy", task_id=task_id,
                             truth_k_ms=truth_k)
    breakdown = score_difficulty(provisional)
    return TaskBundle(seed=None, dataset=dataset, truth_planets=planets,
                      truth_offsets=offsets, noise=noise,
                      difficulty=breakdown, tier=assign_tier(breakdown.d_total),
                      task_id=task_id, truth_k_ms=truth_k)
