"""Manifest-driven pipeline: featurize -> train -> eval -> stats -> report.

Stages persist everything under ``out/<model>__<scramble>/<participant>/
fold<r>/`` with a top-level ``summary.csv``.  Each stage output carries a
stamp file recording a digest of its input file contents and
configuration; re-runs skip stages whose stamps match (idempotence), and
``force=True`` ignores stamps.

Determinism: per-cell seeds derive from (manifest seed, condition,
participant, fold) via SeedSequence, and cross-fold aggregation always
reads inputs in sorted (participant, fold) order, so results do not
depend on scheduling or ``--jobs``.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import (ManifestError, RunManifest, load_bold_run, load_masks, load_model,
                        load_report, load_timeline, load_track, pack_meta, read_container,
                        save_model, save_report, unpack_meta, write_container)
from .datamodel.container import META_TENSOR
from .encoder import (FoldSpec, Provenance, SearchSpace, evaluate_fold, random_search,
                      save_trial_log)
from .featurize import featurize_track, load_design, save_design
from .lmtasks import track_perplexity
from .report import contrast_bar_chart, write_contrast_csv, write_perplexity_csv, write_summary_csv
from .stats import (SELECTION_ALL, SELECTION_REFERENCE, cross_perturbation_contrast,
                    roi_percent_change, voxel_significance)

BASELINE_TAG = "baseline"
TUNED_TAG = "stimulus-tuned"
UNSCRAMBLED_TAG = "none"

_STAGE_ORDER = {"featurize": 0, "train": 1, "eval": 2, "stats": 3, "all": 4}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    out_dir: Path
    stages_run: list[str] = field(default_factory=list)
    n_models: int = 0
    summary_rows: list[dict] = field(default_factory=list)


def _digest(parts: list) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stamp_path(output: Path) -> Path:
    return output.with_name(output.name + ".stamp.json")


def _is_fresh(outputs: list[Path], digest: str) -> bool:
    if not all(p.exists() for p in outputs):
        return False
    stamp = _stamp_path(outputs[0])
    if not stamp.exists():
        return False
    try:
        return json.loads(stamp.read_text())["digest"] == digest
    except (json.JSONDecodeError, KeyError):
        return False


def _write_stamp(outputs: list[Path], digest: str) -> None:
    _stamp_path(outputs[0]).write_text(json.dumps({"digest": digest}) + "\n")


def _cell_seed(seed: int, *names) -> int:
    keys = [seed] + [zlib.crc32(str(n).encode("utf-8")) for n in names]
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


def _train_cell(design_path: str, bold_paths: list[str], participant: str,
                heldout: int, train_runs: tuple[int, ...], search_dict: dict,
                seed: int, model_tag: str, scramble_tag: str, cell_dir: str) -> dict:
    """One (condition, participant, fold) search; file-based so it can run in a worker."""
    design = load_design(design_path)
    bold = [load_bold_run(p) for p in bold_paths]
    fold = FoldSpec(participant, heldout, train_runs)
    space = SearchSpace.from_dict(search_dict)
    result = random_search(design, bold, fold, space, seed,
                           provenance=Provenance(model_tag, scramble_tag, seed))
    cell = Path(cell_dir)
    cell.mkdir(parents=True, exist_ok=True)
    save_model(result.model, cell / "model.ekc")
    save_trial_log(result, cell / "trials.json")
    corr = evaluate_fold(result.model, design, bold)
    write_container({
        "correlations": corr,
        META_TENSOR: pack_meta({"kind": "fold_correlations",
                                "participant_id": participant,
                                "heldout_run": heldout,
                                "voxel_ids": list(bold[0].voxel_ids)}),
    }, cell / "corr.ekc")
    hp = result.model.hyperparameters
    return {"participant": participant, "heldout_run": heldout,
            "learning_rate": hp.learning_rate, "weight_decay": hp.weight_decay,
            "epochs_trained": hp.epochs_trained}


def run_pipeline(manifest: RunManifest, jobs: int = 1, until: str = "all",
                 force: bool = False) -> PipelineResult:
    if until not in _STAGE_ORDER:
        raise ManifestError(f"unknown stage {until!r}; use one of {sorted(_STAGE_ORDER)}")
    limit = _STAGE_ORDER[until]
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = PipelineResult(out_dir=out)
    try:
        _run_stages(manifest, jobs, limit, force, result)
    except Exception as exc:
        report = {"stage": getattr(exc, "stage", "unknown"),
                  "error": type(exc).__name__, "message": str(exc)}
        (out / "error.json").write_text(json.dumps(report, indent=2) + "\n")
        if isinstance(exc, StageError):
            raise
        raise StageError(report["stage"], exc) from exc
    return result


def _run_stages(manifest: RunManifest, jobs: int, limit: int, force: bool,
                result: PipelineResult) -> None:
    out = result.out_dir
    timeline = load_timeline(manifest.timeline)
    timeline_digest = _file_digest(manifest.timeline)
    search_dict = dict(manifest.search)
    participants = manifest.participants()
    runs = manifest.runs_of(participants[0])

    # featurize: one design per condition
    design_paths: dict[str, Path] = {}
    for track_ref in manifest.tracks:
        cond_dir = out / track_ref.condition
        cond_dir.mkdir(parents=True, exist_ok=True)
        design_path = cond_dir / "design.ekc"
        design_paths[track_ref.condition] = design_path
        digest = _digest(["featurize", timeline_digest, _file_digest(track_ref.path),
                          list(manifest.lags)])
        if force or not _is_fresh([design_path], digest):
            stage = f"featurize:{track_ref.condition}"
            try:
                track = load_track(track_ref.path)
                track.check_matches(timeline)
                save_design(featurize_track(track, timeline, manifest.lags), design_path)
            except Exception as exc:
                raise StageError(stage, exc) from exc
            _write_stamp([design_path], digest)
            result.stages_run.append(stage)
    if limit < _STAGE_ORDER["train"]:
        return

    # train: one random search per (condition, participant, heldout run)
    bold_digests = {pid: {rid: _file_digest(p) for rid, p in manifest.bold[pid].items()}
                    for pid in participants}
    pending = []
    for track_ref in manifest.tracks:
        cond = track_ref.condition
        for pid in participants:
            for heldout in runs:
                cell_dir = out / cond / pid / f"fold{heldout}"
                outputs = [cell_dir / "model.ekc", cell_dir / "trials.json",
                           cell_dir / "corr.ekc"]
                digest = _digest(["train", _file_digest(design_paths[cond]),
                                  sorted(bold_digests[pid].items()), search_dict,
                                  manifest.seed, cond, pid, heldout])
                if not force and _is_fresh(outputs, digest):
                    continue
                seed = _cell_seed(manifest.seed, cond, pid, heldout)
                train_runs = tuple(r for r in runs if r != heldout)
                bold_paths = [str(manifest.bold[pid][r]) for r in sorted(manifest.bold[pid])]
                stage = f"train:{cond}:{pid}:fold{heldout}"
                pending.append((stage, digest, outputs,
                                (str(design_paths[cond]), bold_paths, pid, heldout,
                                 train_runs, search_dict, seed, track_ref.model_tag,
                                 track_ref.scramble_tag, str(cell_dir))))
    if pending:
        try:
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    futures = [pool.submit(_train_cell, *args) for _, _, _, args in pending]
                    for fut in futures:
                        fut.result()
            else:
                for _, _, _, args in pending:
                    _train_cell(*args)
        except Exception as exc:
            raise StageError("train", exc) from exc
        for stage, digest, outputs, _args in pending:
            _write_stamp(outputs, digest)
            result.stages_run.append(stage)
    result.n_models = len(manifest.tracks) * len(participants) * len(runs)
    if limit < _STAGE_ORDER["eval"]:
        return

    # eval: per-participant significance reports and per-condition perplexity
    for track_ref in manifest.tracks:
        cond = track_ref.condition
        for pid in participants:
            report_path = out / cond / pid / "report.ekc"
            corr_paths = [out / cond / pid / f"fold{r}" / "corr.ekc" for r in runs]
            digest = _digest(["eval", [_file_digest(p) for p in corr_paths], manifest.alpha])
            if not force and _is_fresh([report_path], digest):
                continue
            stage = f"eval:{cond}:{pid}"
            try:
                columns = []
                voxel_ids = None
                for cp in corr_paths:
                    t = read_container(cp)
                    meta = unpack_meta(t[META_TENSOR])
                    if voxel_ids is None:
                        voxel_ids = tuple(meta["voxel_ids"])
                    columns.append(t["correlations"])
                matrix = np.stack(columns, axis=1)
                report = voxel_significance(matrix, voxel_ids, manifest.alpha,
                                            participant_id=pid,
                                            model_tag=track_ref.model_tag,
                                            scramble_tag=track_ref.scramble_tag,
                                            folds=tuple(runs))
                save_report(report, report_path)
            except Exception as exc:
                raise StageError(stage, exc) from exc
            _write_stamp([report_path], digest)
            result.stages_run.append(stage)

    perplexity_path = out / "perplexity.csv"
    digest = _digest(["perplexity", [_file_digest(t.path) for t in manifest.tracks]])
    if force or not _is_fresh([perplexity_path], digest):
        try:
            rows = []
            for track_ref in manifest.tracks:
                track = load_track(track_ref.path)
                base = {"condition": track_ref.condition, "model_tag": track_ref.model_tag,
                        "scramble_tag": track_ref.scramble_tag}
                rows.append({**base, "scope": "all",
                             "perplexity": track_perplexity(track, word_range=(0, track.n_words))})
                if track.eval_word_range is not None:
                    rows.append({**base, "scope": "eval_range",
                                 "perplexity": track_perplexity(track)})
                for run in range(timeline.n_runs):
                    idx = timeline.word_indices_of_run(run)
                    rng = (int(idx[0]), int(idx[-1]) + 1)
                    rows.append({**base, "scope": f"run{run}",
                                 "perplexity": track_perplexity(track, word_range=rng)})
            write_perplexity_csv(rows, perplexity_path)
        except Exception as exc:
            raise StageError("perplexity", exc) from exc
        _write_stamp([perplexity_path], digest)
        result.stages_run.append("perplexity")
    if limit < _STAGE_ORDER["stats"]:
        return

    # stats: ROI contrasts and the cross-perturbation map (needs masks)
    if manifest.masks is not None:
        _contrast_stage(manifest, result, force)
    if limit < _STAGE_ORDER["all"]:
        return

    # summary
    summary_path = out / "summary.csv"
    model_files = sorted(str(p) for p in out.glob("*__*/*/fold*/model.ekc"))
    digest = _digest(["summary", [(_file_digest(p)) for p in model_files], manifest.alpha])
    if force or not _is_fresh([summary_path], digest):
        try:
            rows = _summary_rows(manifest, out, participants, runs)
            write_summary_csv(rows, summary_path)
            result.summary_rows = rows
        except Exception as exc:
            raise StageError("summary", exc) from exc
        _write_stamp([summary_path], digest)
        result.stages_run.append("summary")
    else:
        result.summary_rows = _summary_rows(manifest, out, participants, runs)


def _contrast_pairs(manifest: RunManifest) -> dict[str, tuple]:
    """Canonical contrasts present in this manifest, keyed by output name."""
    by_pair = {(t.model_tag, t.scramble_tag): t for t in manifest.tracks}
    base = [t for (m, s), t in by_pair.items() if m == BASELINE_TAG and s == UNSCRAMBLED_TAG]
    tuned = [t for (m, s), t in by_pair.items() if m == TUNED_TAG and s == UNSCRAMBLED_TAG]
    base_scr = [t for (m, s), t in by_pair.items() if m == BASELINE_TAG and s != UNSCRAMBLED_TAG]
    tuned_scr = [t for (m, s), t in by_pair.items() if m == TUNED_TAG and s != UNSCRAMBLED_TAG]
    pairs = {}
    if tuned and base:
        pairs["stimulus_tuning_gain"] = (tuned[0], base[0])
    if base and base_scr:
        pairs["scrambling_drop_baseline"] = (base[0], base_scr[0])
    if tuned and tuned_scr:
        pairs["scrambling_drop_stimulus_tuned"] = (tuned[0], tuned_scr[0])
    if base and base_scr and tuned and tuned_scr:
        pairs["cross_perturbation"] = (base[0], base_scr[0], tuned[0], tuned_scr[0])
    return pairs


def _contrast_stage(manifest: RunManifest, result: PipelineResult, force: bool) -> None:
    out = result.out_dir
    contrast_dir = out / "contrasts"
    pairs = _contrast_pairs(manifest)
    if not pairs:
        return
    participants = manifest.participants()

    def reports_of(track_ref) -> list:
        return [load_report(out / track_ref.condition / pid / "report.ekc")
                for pid in participants]

    report_files = sorted(str(p) for p in out.glob("*__*/*/report.ekc"))
    digest = _digest(["contrasts", [_file_digest(p) for p in report_files],
                      _file_digest(manifest.masks), sorted(pairs)])
    outputs = [contrast_dir / f"{name}__{sel}.csv"
               for name in pairs for sel in ("significant", "all")]
    if not force and _is_fresh(outputs, digest):
        return
    try:
        contrast_dir.mkdir(parents=True, exist_ok=True)
        masks = load_masks(manifest.masks)
        for name, tracks in pairs.items():
            for sel_name, selection in (("significant", SELECTION_REFERENCE),
                                        ("all", SELECTION_ALL)):
                if name == "cross_perturbation":
                    delta_maps, table = cross_perturbation_contrast(
                        reports_of(tracks[0]), reports_of(tracks[1]),
                        reports_of(tracks[2]), reports_of(tracks[3]),
                        masks, selection)
                    if sel_name == "significant":
                        for pid, (voxel_ids, delta) in delta_maps.items():
                            write_container({
                                "delta": delta,
                                META_TENSOR: pack_meta({"kind": "cross_delta",
                                                        "participant_id": pid,
                                                        "voxel_ids": list(voxel_ids)}),
                            }, contrast_dir / f"cross_delta__{pid}.ekc")
                else:
                    table = roi_percent_change(reports_of(tracks[0]), reports_of(tracks[1]),
                                               masks, selection)
                csv_path = contrast_dir / f"{name}__{sel_name}.csv"
                write_contrast_csv(table, csv_path)
                contrast_bar_chart(table, csv_path.with_suffix(".svg"),
                                   f"{name} ({sel_name} voxels)")
    except Exception as exc:
        raise StageError("contrasts", exc) from exc
    _write_stamp(outputs, digest)
    result.stages_run.append("contrasts")


def _summary_rows(manifest: RunManifest, out: Path, participants, runs) -> list[dict]:
    rows = []
    for track_ref in manifest.tracks:
        cond = track_ref.condition
        for pid in participants:
            report = load_report(out / cond / pid / "report.ekc")
            n_sig = int(report.significant.sum())
            for heldout in runs:
                cell = out / cond / pid / f"fold{heldout}"
                model = load_model(cell / "model.ekc")
                corr = read_container(cell / "corr.ekc")["correlations"]
                finite = corr[np.isfinite(corr)]
                rows.append({
                    "condition": cond,
                    "model_tag": track_ref.model_tag,
                    "scramble_tag": track_ref.scramble_tag,
                    "participant": pid,
                    "heldout_run": heldout,
                    "mean_correlation": f"{finite.mean():.6f}" if finite.size else "nan",
                    "n_significant": n_sig,
                    "n_voxels": corr.size,
                    "learning_rate": f"{model.hyperparameters.learning_rate:.8g}",
                    "weight_decay": f"{model.hyperparameters.weight_decay:.8g}",
                    "epochs_trained": model.hyperparameters.epochs_trained,
                })
    return rows
