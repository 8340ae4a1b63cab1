import json

import numpy as np
import pytest

from rvbench.documents import (
    SCHEMA_VERSION,
    SchemaError,
    assert_no_truth_fields,
    assert_task_doc_shape,
    bundle_from_docs,
    config_hash,
    dumps,
    manifest_to_doc,
    read_doc,
    report_from_doc,
    report_to_doc,
    result_to_doc,
    submission_from_doc,
    submission_to_doc,
    task_to_doc,
    truth_to_doc,
    write_doc,
)
from rvbench.grading import Submission, evaluate
from rvbench.tasks import GeneratorConfig, generate_task


@pytest.fixture(scope="module")
def bundle():
    return generate_task(321)


class TestTaskTruthRoundTrip:
    def test_bundle_round_trip(self, bundle):
        task_doc = task_to_doc(bundle)
        truth_doc = truth_to_doc(bundle)
        back = bundle_from_docs(task_doc, truth_doc)
        np.testing.assert_array_equal(back.dataset.times_days,
                                      bundle.dataset.times_days)
        np.testing.assert_array_equal(back.dataset.rvs_ms, bundle.dataset.rvs_ms)
        np.testing.assert_array_equal(back.dataset.sigmas_ms,
                                      bundle.dataset.sigmas_ms)
        assert back.dataset.labels == bundle.dataset.labels
        assert back.truth_planets == bundle.truth_planets
        assert back.truth_offsets == bundle.truth_offsets
        assert back.noise == bundle.noise
        assert back.difficulty == bundle.difficulty
        assert back.tier == bundle.tier and back.seed == bundle.seed

    def test_serialization_is_byte_stable(self, bundle):
        a = dumps(task_to_doc(bundle)) + dumps(truth_to_doc(bundle))
        b = dumps(task_to_doc(generate_task(321))) + \
            dumps(truth_to_doc(generate_task(321)))
        assert a == b

    def test_task_doc_is_truth_free(self, bundle):
        doc = task_to_doc(bundle)
        assert_no_truth_fields(doc)
        assert_task_doc_shape(doc)
        assert doc["schema_version"] == SCHEMA_VERSION
        # the one difficulty field is the integer total, never the breakdown
        assert isinstance(doc["difficulty"], int)

    def test_truth_doc_carries_breakdown_and_seed(self, bundle):
        doc = truth_to_doc(bundle)
        assert doc["seed"] == bundle.seed
        assert doc["difficulty"]["d_total"] == bundle.difficulty.d_total
        assert len(doc["planets"]) == len(bundle.truth_planets)

    def test_file_round_trip(self, bundle, tmp_path):
        path = tmp_path / "task.json"
        write_doc(path, task_to_doc(bundle))
        assert read_doc(path) == task_to_doc(bundle)

    def test_bad_json_raises_schema_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(SchemaError):
            read_doc(path)

    def test_version_mismatch(self, bundle):
        doc = task_to_doc(bundle)
        doc["schema_version"] = 99
        with pytest.raises(SchemaError, match="version"):
            bundle_from_docs(doc, truth_to_doc(bundle))


class TestSubmissionDocs:
    def test_round_trip_grades_identically(self, bundle):
        sub = Submission(tuple(p.as_rv_only() for p in bundle.truth_planets),
                         bundle.truth_offsets)
        back = submission_from_doc(submission_to_doc(sub))
        assert evaluate(back, bundle).passed
        assert back.planets == sub.planets

    def test_wire_format_has_five_planet_fields(self, bundle):
        sub = Submission(tuple(p.as_rv_only() for p in bundle.truth_planets))
        doc = submission_to_doc(sub)
        for planet in doc["planets"]:
            assert set(planet) == {"P_days", "m_sin_i_mjup", "e",
                                   "omega_rad", "l_rad"}
        assert "offsets" not in doc

    def test_missing_field_raises(self):
        with pytest.raises(SchemaError, match="planets"):
            submission_from_doc({"schema_version": 1})
        with pytest.raises(SchemaError, match="P_days"):
            submission_from_doc({"schema_version": 1,
                                 "planets": [{"m_sin_i_mjup": 1}]})


class TestReportDocs:
    def test_round_trip(self, bundle):
        sub = Submission(tuple(p.as_rv_only() for p in bundle.truth_planets),
                         bundle.truth_offsets)
        report = evaluate(sub, bundle)
        back = report_from_doc(report_to_doc(report))
        assert back == report
        # and the document is valid JSON with plain types
        json.dumps(report_to_doc(report))

    def test_result_doc(self, bundle):
        sub = Submission(tuple(p.as_rv_only() for p in bundle.truth_planets),
                         bundle.truth_offsets)
        report = evaluate(sub, bundle)
        doc = result_to_doc(bundle.task_id, bundle.tier, "env_done", report, 1)
        assert doc["report"]["passed"] == report.passed
        json.dumps(doc)


class TestManifest:
    def test_config_hash_stable_and_sensitive(self):
        a = config_hash(GeneratorConfig())
        assert a == config_hash(GeneratorConfig())
        assert a != config_hash(GeneratorConfig(gp_prob=0.5))

    def test_manifest_counts(self):
        doc = manifest_to_doc("suite-1", {"easy": [1, 2], "medium": [3],
                                          "hard": []}, GeneratorConfig())
        assert doc["counts"] == {"easy": 2, "medium": 1, "hard": 0}
        json.dumps(doc)


class TestTruthScan:
    def test_scan_catches_planted_fields(self):
        with pytest.raises(AssertionError, match="seed"):
            assert_no_truth_fields({"payload": {"nested": {"seed": 5}}})
        with pytest.raises(AssertionError, match="truth_planets"):
            assert_no_truth_fields({"a": [{"truth_planets": []}]})
        assert_no_truth_fields({"planets": [{"P_days": 1.0}]})  # agent's own
