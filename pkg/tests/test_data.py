import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from robustlens.data import (
    LESION_TAGS,
    SOFT_TISSUE_TAGS,
    BreastCase,
    ImageMeta,
    InvalidMetadataError,
    ParseError,
    PredictionRecord,
    PredictionSet,
    ReferentialError,
    RoiAnnotation,
    RoiBox,
    Subgroup,
    atomic_write_text,
    box_edge_ok,
    load_cases,
    load_image_metas,
    load_predictions,
    load_rois,
    save_cases,
    save_image_metas,
    save_predictions,
    save_rois,
    subgroup_assign,
    validate_design,
)


class TestSubgroupAssign:
    def test_nonbiopsied(self):
        assert subgroup_assign([], "nonbiopsied") is Subgroup.NONBIOPSIED
        # label wins even if caller passes tags
        assert subgroup_assign(["mass"], "nonbiopsied") is Subgroup.NONBIOPSIED

    def test_microcalc_only(self):
        assert subgroup_assign(["microcalcification"], "malignant") is Subgroup.UNAMBIGUOUS_MICROCALC

    def test_soft_tissue_only(self):
        for tag in SOFT_TISSUE_TAGS:
            assert subgroup_assign([tag], "benign") is Subgroup.UNAMBIGUOUS_SOFT_TISSUE
        assert subgroup_assign(["mass", "asymmetry"], "benign") is Subgroup.UNAMBIGUOUS_SOFT_TISSUE

    def test_both_kinds_is_ambiguous(self):
        assert subgroup_assign(["microcalcification", "mass"], "malignant") is Subgroup.AMBIGUOUS

    def test_occult_only(self):
        assert subgroup_assign(["occult"], "malignant") is Subgroup.OCCULT

    def test_empty_tags_on_biopsied_rejected(self):
        with pytest.raises(InvalidMetadataError):
            subgroup_assign([], "malignant")

    @given(st.sets(st.sampled_from(sorted(LESION_TAGS)), min_size=1))
    def test_every_tag_set_maps_to_exactly_one_subgroup(self, tags):
        sg = subgroup_assign(tags, "malignant")
        has_mc = "microcalcification" in tags
        has_soft = bool(tags & SOFT_TISSUE_TAGS)
        if has_mc and has_soft:
            assert sg is Subgroup.AMBIGUOUS
        elif has_mc:
            assert sg is Subgroup.UNAMBIGUOUS_MICROCALC
        elif has_soft:
            assert sg is Subgroup.UNAMBIGUOUS_SOFT_TISSUE
        else:
            assert sg is Subgroup.OCCULT


class TestBreastCase:
    def test_valid(self):
        c = BreastCase("c1", "e1", "left", "malignant", frozenset({"mass"}))
        assert c.subgroup is Subgroup.UNAMBIGUOUS_SOFT_TISSUE

    def test_bad_side(self):
        with pytest.raises(InvalidMetadataError):
            BreastCase("c1", "e1", "up", "benign", frozenset({"mass"}))

    def test_bad_label(self):
        with pytest.raises(InvalidMetadataError):
            BreastCase("c1", "e1", "left", "maybe", frozenset({"mass"}))

    def test_unknown_tag(self):
        with pytest.raises(InvalidMetadataError):
            BreastCase("c1", "e1", "left", "benign", frozenset({"cyst"}))

    def test_nonbiopsied_with_tags_rejected(self):
        with pytest.raises(InvalidMetadataError):
            BreastCase("c1", "e1", "left", "nonbiopsied", frozenset({"mass"}))

    def test_biopsied_without_tags_rejected(self):
        with pytest.raises(InvalidMetadataError):
            BreastCase("c1", "e1", "left", "benign")


class TestPredictionRecord:
    def test_machine_soft_score_ok(self):
        PredictionRecord("m1", "machine", "c1", 0, 0.37)

    def test_human_score_must_be_binary(self):
        PredictionRecord("h1", "human", "c1", 0, 1.0)
        with pytest.raises(InvalidMetadataError):
            PredictionRecord("h1", "human", "c1", 0, 0.5)

    def test_score_range(self):
        with pytest.raises(InvalidMetadataError):
            PredictionRecord("m1", "machine", "c1", 0, 1.5)

    def test_negative_severity(self):
        with pytest.raises(InvalidMetadataError):
            PredictionRecord("m1", "machine", "c1", -1, 0.5)

    def test_bad_kind(self):
        with pytest.raises(InvalidMetadataError):
            PredictionRecord("m1", "alien", "c1", 0, 0.5)


def _cases():
    return [
        BreastCase("c1", "e1", "left", "malignant", frozenset({"mass"})),
        BreastCase("c2", "e1", "right", "benign", frozenset({"microcalcification"})),
    ]


class TestPredictionSet:
    def test_duplicate_triple_rejected(self):
        recs = [
            PredictionRecord("m1", "machine", "c1", 0, 0.1),
            PredictionRecord("m1", "machine", "c1", 0, 0.2),
        ]
        with pytest.raises(ReferentialError):
            PredictionSet(recs, _cases(), n_severities=3)

    def test_unknown_case_rejected(self):
        recs = [PredictionRecord("m1", "machine", "ghost", 0, 0.1)]
        with pytest.raises(ReferentialError):
            PredictionSet(recs, _cases(), n_severities=3)

    def test_severity_beyond_ladder_rejected(self):
        recs = [PredictionRecord("m1", "machine", "c1", 3, 0.1)]
        with pytest.raises(ReferentialError):
            PredictionSet(recs, _cases(), n_severities=3)

    def test_duplicate_case_id_rejected(self):
        with pytest.raises(ReferentialError):
            PredictionSet([], _cases() + [_cases()[0]], n_severities=3)

    def test_matrix_view(self):
        recs = [
            PredictionRecord("m1", "machine", "c1", 0, 0.1),
            PredictionRecord("m1", "machine", "c1", 1, 0.2),
            PredictionRecord("m2", "machine", "c1", 0, 0.9),
        ]
        ps = PredictionSet(recs, _cases(), n_severities=3)
        assert ps.matrix_view("m1") == {(0, "c1"): 0.1, (1, "c1"): 0.2}
        assert ps.readers == ["m1", "m2"]


class TestRoi:
    def test_edge_tolerance_bounds(self):
        assert box_edge_ok(250)
        assert box_edge_ok(200) and box_edge_ok(300)
        assert not box_edge_ok(199) and not box_edge_ok(301)

    def test_max_three_boxes(self):
        box = RoiBox(0, 0, 250, 250)
        RoiAnnotation("r1", "i1", [box] * 3)
        with pytest.raises(InvalidMetadataError):
            RoiAnnotation("r1", "i1", [box] * 4)

    def test_off_template_box_rejected(self):
        with pytest.raises(InvalidMetadataError):
            RoiAnnotation("r1", "i1", [RoiBox(0, 0, 100, 250)])


class TestValidateDesign:
    def _preds(self, triples):
        recs = [PredictionRecord(r, "human", c, s, 1.0) for r, c, s in triples]
        return PredictionSet(recs, _cases(), n_severities=4)

    def test_clean_design_ok(self):
        preds = self._preds([("h1", "c1", 2), ("h1", "c2", 2)])
        report = validate_design({("h1", "e1"): 2}, preds)
        assert report.ok

    def test_severity_mismatch_reported(self):
        preds = self._preds([("h1", "c1", 3), ("h1", "c2", 3)])
        report = validate_design({("h1", "e1"): 2}, preds)
        assert not report.ok
        assert report.severity_mismatches == [("h1", "e1", 3, 2)]

    def test_double_read_reported(self):
        preds = self._preds([("h1", "c1", 1), ("h1", "c1", 2), ("h1", "c2", 1)])
        report = validate_design({("h1", "e1"): 1}, preds)
        assert ("h1", "e1", 2) in report.read_count_violations

    def test_missing_read_reported(self):
        report = validate_design({("h1", "e1"): 0}, self._preds([]))
        assert report.read_count_violations == [("h1", "e1", 0)]

    def test_unassigned_read_reported(self):
        preds = self._preds([("h2", "c1", 0), ("h2", "c2", 0)])
        report = validate_design({}, preds)
        assert report.read_count_violations == [("h2", "e1", 1)]


class TestIo:
    def test_cases_round_trip(self, tmp_path):
        path = str(tmp_path / "cases.jsonl")
        save_cases(_cases(), path)
        assert load_cases(path) == _cases()

    def test_predictions_round_trip(self, tmp_path):
        recs = [PredictionRecord("m1", "machine", "c1", 1, 0.25)]
        ps = PredictionSet(recs, _cases(), n_severities=3)
        path = str(tmp_path / "preds.jsonl")
        save_predictions(ps, path)
        loaded = load_predictions(path, _cases(), n_severities=3)
        assert loaded.records == recs

    def test_rois_round_trip(self, tmp_path):
        anns = [RoiAnnotation("r1", "i1", [RoiBox(10, 20, 250, 260)])]
        path = str(tmp_path / "rois.jsonl")
        save_rois(anns, path)
        assert load_rois(path) == anns

    def test_image_metas_round_trip(self, tmp_path):
        metas = [ImageMeta("i1", "e1", "cc", 512, 256, 0.07)]
        path = str(tmp_path / "images.jsonl")
        save_image_metas(metas, path)
        assert load_image_metas(path) == metas

    def test_malformed_jsonl_raises_parse_error(self, tmp_path):
        path = tmp_path / "cases.jsonl"
        path.write_text('{"case_id": "c1"\n')
        with pytest.raises(ParseError):
            load_cases(str(path))

    def test_missing_field_raises_parse_error(self, tmp_path):
        path = tmp_path / "cases.jsonl"
        path.write_text(json.dumps({"case_id": "c1"}) + "\n")
        with pytest.raises(ParseError):
            load_cases(str(path))

    def test_atomic_write_replaces_whole_file(self, tmp_path):
        path = str(tmp_path / "f.txt")
        atomic_write_text(path, "first")
        atomic_write_text(path, "second")
        with open(path) as f:
            assert f.read() == "second"
        assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]

    def test_bad_mm_per_pixel_rejected(self):
        with pytest.raises(InvalidMetadataError):
            ImageMeta("i1", "e1", "cc", 512, 512, 0.0)
