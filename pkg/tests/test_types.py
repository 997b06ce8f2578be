import numpy as np
import pytest

from conftest import build_timeline, build_track
from encodekit.datamodel import (AlignmentReport, BoldRun, EncodingModel, Hyperparameters,
                                 Provenance, ReportMeta, RoiMask, StimulusTimeline,
                                 ValidationError, Word, check_mask_set, check_run_set,
                                 load_bold_run, load_masks, load_model, load_report,
                                 load_timeline, load_track, save_bold_run, save_masks,
                                 save_model, save_report, save_timeline, save_track)


class TestTimeline:
    def test_valid_construction(self):
        t = build_timeline([8, 8])
        assert t.n_words == 16 and t.n_runs == 2 and t.total_trs == 4

    def test_onsets_must_increase_within_run(self):
        words = (Word("a", 0.0, 0), Word("b", 1.0, 0), Word("c", 1.0, 0))
        with pytest.raises(ValidationError):
            StimulusTimeline(words, 2.0, (2,))

    def test_onsets_reset_between_runs(self):
        words = (Word("a", 0.0, 0), Word("b", 3.0, 0), Word("c", 0.5, 1))
        StimulusTimeline(words, 2.0, (2, 1))

    def test_run_ids_contiguous(self):
        words = (Word("a", 0.0, 0), Word("b", 0.5, 2))
        with pytest.raises(ValidationError):
            StimulusTimeline(words, 2.0, (1, 1, 1))

    def test_run_ids_non_decreasing(self):
        words = (Word("a", 0.0, 1), Word("b", 0.0, 0))
        with pytest.raises(ValidationError):
            StimulusTimeline(words, 2.0, (1, 1))

    def test_onset_inside_run_span(self):
        words = (Word("a", 0.0, 0), Word("b", 4.0, 0))
        with pytest.raises(ValidationError):
            StimulusTimeline(words, 2.0, (2,))  # span is [0, 4)

    def test_no_words_rejected(self):
        with pytest.raises(ValidationError):
            StimulusTimeline((), 2.0, (1,))

    def test_bad_tr_duration(self):
        with pytest.raises(ValidationError):
            StimulusTimeline((Word("a", 0.0, 0),), 0.0, (1,))

    def test_with_texts_preserves_structure(self):
        t = build_timeline([4])
        s = t.with_texts(["w", "x", "y", "z"])
        assert s.texts() == ["w", "x", "y", "z"]
        assert [w.onset_s for w in s.words] == [w.onset_s for w in t.words]

    def test_round_trip(self, tmp_path):
        t = build_timeline([8, 4], texts=[f"tok{i}" for i in range(12)])
        save_timeline(t, tmp_path / "t.ekc")
        back = load_timeline(tmp_path / "t.ekc")
        assert back == t


class TestTrack:
    def test_positive_log_prob_rejected(self):
        t = build_timeline([4])
        with pytest.raises(ValidationError):
            build_track(t, log_probs=np.array([0.0, -1.0, 0.5, -2.0]))

    def test_absent_slots_are_zeroed(self):
        t = build_timeline([4])
        present = np.array([False, True, True, True])
        track = build_track(t, log_probs=np.array([123.0, -1.0, -1.0, -2.0]),
                            log_prob_present=present)
        assert track.log_probs[0] == 0.0

    def test_length_mismatch(self):
        t = build_timeline([4])
        track = build_track(t)
        with pytest.raises(ValidationError):
            track.check_matches(build_timeline([6]))

    def test_bad_context_window(self):
        t = build_timeline([4])
        with pytest.raises(ValidationError):
            build_track(t, context_window=0)

    def test_bad_eval_range(self):
        t = build_timeline([4])
        with pytest.raises(ValidationError):
            build_track(t, eval_word_range=(3, 9))

    def test_round_trip(self, tmp_path):
        t = build_timeline([8])
        track = build_track(t, d=5, eval_word_range=(2, 8),
                            model_tag="stimulus-tuned", scramble_tag="plan7", layer=6)
        save_track(track, tmp_path / "x.ekc")
        back = load_track(tmp_path / "x.ekc")
        assert back.model_tag == "stimulus-tuned" and back.layer == 6
        assert back.eval_word_range == (2, 8)
        assert np.array_equal(back.embeddings, track.embeddings)
        assert np.array_equal(back.log_prob_present, track.log_prob_present)


class TestBoldRun:
    def test_duplicate_voxel_ids(self):
        with pytest.raises(ValidationError):
            BoldRun("P01", 0, np.zeros((4, 2), dtype=np.float32), ("v1", "v1"))

    def test_tr_count_checked_against_timeline(self):
        t = build_timeline([8])  # 2 TRs
        run = BoldRun("P01", 0, np.zeros((3, 2), dtype=np.float32), ("v1", "v2"))
        with pytest.raises(ValidationError):
            run.check_matches(t)

    def test_run_set_voxel_consistency(self):
        a = BoldRun("P01", 0, np.zeros((2, 2), dtype=np.float32), ("v1", "v2"))
        b = BoldRun("P01", 1, np.zeros((2, 2), dtype=np.float32), ("v1", "v3"))
        with pytest.raises(ValidationError):
            check_run_set([a, b])
        c = BoldRun("P01", 1, np.zeros((2, 2), dtype=np.float32), ("v1", "v2"))
        assert check_run_set([a, c]) == ("v1", "v2")

    def test_round_trip(self, tmp_path, rng):
        data = rng.standard_normal((4, 3)).astype(np.float32)
        run = BoldRun("P02", 1, data, ("va", "vb", "vc"))
        save_bold_run(run, tmp_path / "b.ekc")
        back = load_bold_run(tmp_path / "b.ekc")
        assert back.participant_id == "P02" and back.run_id == 1
        assert np.array_equal(back.data, data)


class TestModelAndReport:
    def test_model_requires_finite(self):
        w = np.zeros((2, 2), dtype=np.float32)
        w[0, 0] = np.nan
        with pytest.raises(ValidationError):
            EncodingModel("P01", 0, w, np.zeros(2, dtype=np.float32),
                          Hyperparameters(1e-3, 0.0, 5))

    def test_model_round_trip(self, tmp_path, rng):
        model = EncodingModel("P01", 2, rng.standard_normal((6, 3)).astype(np.float32),
                              rng.standard_normal(3).astype(np.float32),
                              Hyperparameters(3e-4, 1e-6, 17),
                              Provenance("baseline", "none", 42))
        save_model(model, tmp_path / "m.ekc")
        back = load_model(tmp_path / "m.ekc")
        assert back.hyperparameters == model.hyperparameters
        assert back.provenance == model.provenance
        assert np.array_equal(back.weights, model.weights)

    def test_report_significance_respects_threshold(self):
        meta = ReportMeta("P01", "baseline", "none", (0, 1), 0.05, bh_threshold=0.01)
        with pytest.raises(ValidationError):
            AlignmentReport(("v1", "v2"), np.array([0.5, 0.2]), np.array([0.02, 0.5]),
                            np.array([True, False]), meta)

    def test_report_round_trip(self, tmp_path):
        meta = ReportMeta("P01", "baseline", "none", (0, 1, 2, 3), 0.05,
                          bh_threshold=0.02, n_undefined=1)
        report = AlignmentReport(("v1", "v2", "v3"),
                                 np.array([0.5, np.nan, -0.1]),
                                 np.array([0.01, np.nan, 0.9]),
                                 np.array([True, False, False]), meta)
        save_report(report, tmp_path / "r.ekc")
        back = load_report(tmp_path / "r.ekc")
        assert back.meta == meta
        assert back.significant_voxels() == {"v1"}
        assert np.isnan(back.correlations[1])

    def test_out_of_range_correlation_rejected(self):
        meta = ReportMeta("P01", "baseline", "none", (0, 1), 0.05, 0.0)
        with pytest.raises(ValidationError):
            AlignmentReport(("v1",), np.array([1.5]), np.array([0.5]),
                            np.array([False]), meta)


class TestMasks:
    def test_duplicate_names_rejected(self):
        with pytest.raises(ValidationError):
            check_mask_set([RoiMask("a", frozenset({"v1"})), RoiMask("a", frozenset({"v2"}))])

    def test_round_trip(self, tmp_path):
        masks = (RoiMask("IFG", frozenset({"v1", "v2"})), RoiMask("AG", frozenset({"v3"})))
        save_masks(masks, tmp_path / "m.json")
        back = load_masks(tmp_path / "m.json")
        assert {m.name: m.voxel_ids for m in back} == {m.name: m.voxel_ids for m in masks}
