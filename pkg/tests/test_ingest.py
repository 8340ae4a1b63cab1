import numpy as np
import pytest

from rvbench.documents import (
    bundle_from_docs,
    task_to_doc,
    truth_to_doc,
)
from rvbench.ingest import (
    IngestionError,
    InvalidTruthError,
    ingest_archive,
    parse_archive_table,
)

CSV = """time,rv,sigma,instrument
2450100.5,12.3,1.1,HIRES
2450101.5,-4.2,0.9,HARPS
2450102.5,3.3,1.0,HIRES
2450104.5,8.8,1.2,CORALIE
"""

WS = """# comment line
time rv sigma instrument
100.0 1.0 0.5 A
101.0 2.0 0.5 B
"""

TRUTH = {
    "planets": [{"P_days": 3.09, "m_sin_i_mjup": 0.68, "e": 0.01,
                 "omega_rad": 1.0, "l_rad": 2.0, "K_ms": 55.9}],
    "star_mass_sun": 1.05,
    "offsets": {"HIRES": 3.0, "HARPS": -10.0, "CORALIE": 0.5},
}


class TestParseTable:
    def test_csv_with_header(self):
        rows = parse_archive_table(CSV)
        assert len(rows) == 4
        assert rows[0] == (2450100.5, 12.3, 1.1, "HIRES")

    def test_whitespace_delimited_and_comments(self):
        rows = parse_archive_table(WS)
        assert rows == [(100.0, 1.0, 0.5, "A"), (101.0, 2.0, 0.5, "B")]

    def test_missing_sigma_column(self):
        with pytest.raises(IngestionError, match="sigma"):
            parse_archive_table("time,rv,instrument\n1,2,x\n")

    def test_empty_and_garbage(self):
        with pytest.raises(IngestionError):
            parse_archive_table("")
        with pytest.raises(IngestionError):
            parse_archive_table("time,rv,sigma,instrument\n1,2,notafloat,x\n")


class TestIngestArchive:
    def test_anonymisation_first_appearance_order(self):
        b = ingest_archive(parse_archive_table(CSV), TRUTH, task_id="real_001")
        assert b.dataset.labels == ("inst_A", "inst_B", "inst_A", "inst_C")
        assert set(b.truth_offsets) == {"inst_A", "inst_B", "inst_C"}
        assert b.truth_offsets["inst_A"] == 3.0   # HIRES seen first
        assert b.truth_offsets["inst_B"] == -10.0

    def test_times_rebased_to_zero(self):
        b = ingest_archive(parse_archive_table(CSV), TRUTH)
        assert b.dataset.times_days[0] == 0.0
        assert b.dataset.t_ref_days == 0.0
        assert np.all(np.diff(b.dataset.times_days) > 0)

    def test_no_target_metadata_in_task_doc(self):
        b = ingest_archive(parse_archive_table(CSV), TRUTH, task_id="real_001")
        doc = task_to_doc(b)
        text = str(doc)
        for name in ("HIRES", "HARPS", "CORALIE"):
            assert name not in text

    def test_round_trip_through_documents(self):
        b = ingest_archive(parse_archive_table(CSV), TRUTH, task_id="real_001")
        back = bundle_from_docs(task_to_doc(b), truth_to_doc(b))
        np.testing.assert_array_equal(back.dataset.times_days,
                                      b.dataset.times_days)
        np.testing.assert_array_equal(back.dataset.rvs_ms, b.dataset.rvs_ms)
        assert back.truth_planets == b.truth_planets
        assert back.truth_k_ms == b.truth_k_ms == (55.9,)

    def test_difficulty_scored_with_same_rubric(self):
        b = ingest_archive(parse_archive_table(CSV), TRUTH)
        assert 1 <= b.difficulty.d_total <= 10
        assert b.tier in ("easy", "medium", "hard")
        # published K drives the SNR factor: K=55.9 vs sigma ~1 -> bright
        assert b.difficulty.snr_value > 5

    def test_unsorted_rows_are_sorted(self):
        rows = [(5.0, 1.0, 0.5, "X"), (1.0, 2.0, 0.5, "Y"), (3.0, 0.0, 0.5, "X")]
        b = ingest_archive(rows, TRUTH | {"offsets": {}})
        assert list(b.dataset.times_days) == [0.0, 2.0, 4.0]
        # first appearance is judged after time-sorting: Y leads
        assert b.dataset.labels == ("inst_A", "inst_B", "inst_B")

    def test_duplicate_times_perturbed(self):
        rows = [(1.0, 1.0, 0.5, "X"), (1.0, 2.0, 0.5, "X"), (2.0, 0.0, 0.5, "X")]
        b = ingest_archive(rows, TRUTH | {"offsets": {}})
        assert np.all(np.diff(b.dataset.times_days) > 0)

    def test_bad_sigma_rejected(self):
        rows = [(1.0, 1.0, -0.5, "X")]
        with pytest.raises(IngestionError, match="sigma"):
            ingest_archive(rows, TRUTH)

    def test_extreme_eccentricity_rejected(self):
        truth = {"planets": [dict(TRUTH["planets"][0], e=0.995)],
                 "star_mass_sun": 1.0}
        with pytest.raises(InvalidTruthError, match="eccentricity"):
            ingest_archive(parse_archive_table(CSV), truth)

    def test_missing_star_mass_rejected(self):
        with pytest.raises(InvalidTruthError, match="star_mass"):
            ingest_archive(parse_archive_table(CSV),
                           {"planets": TRUTH["planets"]})

    def test_no_planets_rejected(self):
        with pytest.raises(InvalidTruthError, match="planets"):
            ingest_archive(parse_archive_table(CSV),
                           {"planets": [], "star_mass_sun": 1.0})
