import numpy as np
import pytest

from encodekit.datamodel import ValidationError
from encodekit.encoder import FoldSpec, evaluate_fold, make_folds, train_head
from encodekit.featurize import featurize_track
from encodekit.lmtasks import make_scramble_plan, scrambled_timeline
from encodekit.stats import benjamini_hochberg, one_sample_t_greater, pearson_columns
from encodekit.synth import (SynthSpec, default_masks, embeddings_for_words, generate,
                             sigma_for_mean_ceiling, track_for_timeline, write_dataset)

SMALL = dict(participants=1, runs=4, trs_per_run=40, d=8, voxels=20, vocab_size=10)


class TestGenerate:
    def test_bitwise_deterministic(self):
        spec = SynthSpec(**SMALL, noise_sigma=0.5, seed=9)
        a = generate(spec)
        b = generate(SynthSpec(**SMALL, noise_sigma=0.5, seed=9))
        assert a.track.embeddings.tobytes() == b.track.embeddings.tobytes()
        assert a.timeline == b.timeline
        for pid in a.bold_runs:
            for rid in a.bold_runs[pid]:
                assert (a.bold_runs[pid][rid].data.tobytes()
                        == b.bold_runs[pid][rid].data.tobytes())

    def test_recording_timing(self):
        spec = SynthSpec(**SMALL, noise_sigma=0.0)
        data = generate(spec)
        t = data.timeline
        assert t.tr_duration_s == 2.0
        assert t.n_words == 4 * 40 * 4  # 4 words per TR
        assert t.words[1].onset_s - t.words[0].onset_s == 0.5

    def test_noise_ceiling_matches_empirical_correlation(self):
        spec = SynthSpec(participants=1, runs=4, trs_per_run=200, d=8, voxels=30,
                         vocab_size=10, noise_sigma=0.8, seed=3)
        data = generate(spec)
        max_lag = max(spec.lags)
        sig = np.concatenate([data.signal[r][max_lag:] for r in range(4)])
        noisy = np.concatenate([data.bold_runs["P01"][r].data[max_lag:].astype(np.float64)
                                for r in range(4)])
        emp = pearson_columns(sig, noisy)
        # analytic ceiling within sampling error of the realized correlation
        assert np.nanmax(np.abs(emp - data.noise_ceiling)) < 0.12
        assert abs(np.nanmean(emp) - data.noise_ceiling.mean()) < 0.03

    def test_sigma_for_mean_ceiling_hits_target(self):
        spec = SynthSpec(**SMALL, noise_sigma=0.0, seed=5)
        sigma = sigma_for_mean_ceiling(spec, 0.5)
        data = generate(SynthSpec(**{**SMALL, "noise_sigma": sigma, "seed": 5}))
        assert data.noise_ceiling.mean() == pytest.approx(0.5, abs=1e-6)

    def test_noiseless_data_is_fit_to_near_one(self):
        # short windows and two lags keep the design well-conditioned
        spec = SynthSpec(**SMALL, noise_sigma=0.0, seed=7, window_size=4, lags=(1, 2))
        data = generate(spec)
        design = featurize_track(data.track, data.timeline, spec.lags)
        bold = list(data.bold_runs["P01"].values())
        res = train_head(design, bold, FoldSpec("P01", 3, (0, 1, 2)), 2e-2, 0.0, 0,
                         max_epochs=300, batch_size=32, patience=300)
        corr = evaluate_fold(res.model, design, bold)
        assert np.nanmin(corr) >= 0.999
        assert np.all(data.noise_ceiling == 1.0)

    def test_zero_signal_fraction_gives_zero_ceiling(self):
        spec = SynthSpec(**SMALL, noise_sigma=0.5, zero_signal_fraction=0.5, seed=1)
        data = generate(spec)
        n_zero = int(round(0.5 * spec.voxels))
        assert (data.voxel_gains == 0).sum() == n_zero
        assert ((data.noise_ceiling == 0) == (data.voxel_gains == 0)).all()

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            SynthSpec(participants=0)
        with pytest.raises(ValidationError):
            SynthSpec(order_sensitivity=1.5)
        with pytest.raises(ValidationError):
            SynthSpec(noise_sigma=-1.0)
        with pytest.raises(ValidationError):
            SynthSpec(true_lag_weights=np.zeros((3, 3)))


class TestOrderSensitivity:
    def test_zero_sensitivity_embeddings_invariant_under_scrambling(self):
        spec = SynthSpec(**SMALL, noise_sigma=0.0, order_sensitivity=0.0, seed=11)
        data = generate(spec)
        plan = make_scramble_plan(data.timeline, spec.window_size, seed=77)
        scrambled = scrambled_timeline(data.timeline, plan)
        emb_s = embeddings_for_words(spec, scrambled)
        assert emb_s.tobytes() == data.track.embeddings.tobytes()

    def test_zero_sensitivity_alignment_indistinguishable(self):
        # paired fold-mean differences are identically zero by construction
        spec = SynthSpec(**SMALL, noise_sigma=0.5, order_sensitivity=0.0, seed=11)
        data = generate(spec)
        plan = make_scramble_plan(data.timeline, spec.window_size, seed=77)
        track_s = track_for_timeline(spec, scrambled_timeline(data.timeline, plan),
                                     scramble_tag="plan77")
        bold = list(data.bold_runs["P01"].values())
        diffs = []
        for fold in make_folds("P01", 4)[:2]:
            corr = {}
            for tag, track in (("none", data.track), ("scr", track_s)):
                design = featurize_track(track, data.timeline)
                res = train_head(design, bold, fold, 3e-3, 0.0, 13,
                                 max_epochs=15, batch_size=32)
                corr[tag] = evaluate_fold(res.model, design, bold)
            diffs.append(np.nanmean(corr["none"]) - np.nanmean(corr["scr"]))
        assert np.allclose(diffs, 0.0, atol=1e-12)

    def test_positive_sensitivity_perturbs_embeddings(self):
        spec = SynthSpec(**SMALL, noise_sigma=0.0, order_sensitivity=0.5, seed=11)
        data = generate(spec)
        plan = make_scramble_plan(data.timeline, spec.window_size, seed=77)
        emb_s = embeddings_for_words(spec, scrambled_timeline(data.timeline, plan))
        n_os = spec.d // 2
        # order-insensitive half untouched, order-sensitive half perturbed
        assert np.array_equal(emb_s[:, :spec.d - n_os],
                              data.track.embeddings[:, :spec.d - n_os])
        assert not np.array_equal(emb_s[:, spec.d - n_os:],
                                  data.track.embeddings[:, spec.d - n_os:])


class TestFdrOnPipeline:
    def test_fdr_among_rejections_controlled(self):
        # 100 voxels, half with zero true weights; each participant is an
        # independent noise replicate of the same ground truth
        reps = 12
        rng = np.random.default_rng(0)
        W = rng.standard_normal((16, 100)) / 4.0
        W[:, 50:] = 0.0
        spec = SynthSpec(participants=reps, runs=4, trs_per_run=60, d=8, voxels=100,
                         vocab_size=10, lags=(1, 2), true_lag_weights=W,
                         noise_sigma=1.0, seed=21)
        data = generate(spec)
        design = featurize_track(data.track, data.timeline)
        fdps = []
        for pid in data.participant_ids():
            bold = list(data.bold_runs[pid].values())
            fold_corr = []
            for fold in make_folds(pid, 4):
                res = train_head(design, bold, fold, 5e-3, 0.0, 17,
                                 max_epochs=12, batch_size=32)
                fold_corr.append(evaluate_fold(res.model, design, bold))
            matrix = np.stack(fold_corr, axis=1)
            pvals = np.array([one_sample_t_greater(matrix[v]) for v in range(100)])
            reject, _ = benjamini_hochberg(pvals, 0.05)
            if reject.any():
                fdps.append(reject[50:].sum() / reject.sum())
            else:
                fdps.append(0.0)
        mean_fdp = float(np.mean(fdps))
        tol = 3 * float(np.std(fdps)) / np.sqrt(reps) + 1e-9
        assert mean_fdp <= 0.05 + tol, f"FDR {mean_fdp:.3f} over reps {fdps}"


class TestDatasetWriting:
    def test_write_dataset_produces_loadable_manifest(self, tmp_path):
        from encodekit.datamodel import load_manifest
        spec = SynthSpec(**SMALL, noise_sigma=0.3, seed=2)
        path = write_dataset(generate(spec), tmp_path / "ds")
        manifest = load_manifest(path)
        assert manifest.participants() == ["P01"]
        assert len(manifest.tracks) == 1
        assert manifest.masks is not None

    def test_default_masks_partition_voxels(self):
        spec = SynthSpec(**SMALL, noise_sigma=0.0)
        masks = default_masks(spec, n_rois=4)
        all_ids = set()
        for m in masks:
            assert not all_ids & m.voxel_ids
            all_ids |= m.voxel_ids
        assert len(all_ids) == spec.voxels
