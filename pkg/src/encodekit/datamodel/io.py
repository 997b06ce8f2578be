"""Container-backed persistence for the domain types.

One EKC1 file per artifact; array fields become tensors and everything
else rides in the canonical-JSON ``meta`` tensor under a ``kind`` key.
Loaders run the full constructor validation, so a file that loads is a
file that satisfies the type invariants.

ROI masks are plain JSON (``{"masks": [{"name", "voxel_ids"}]}``); they
are hand-curated inputs, not pipeline products.
"""

from __future__ import annotations

import json

import numpy as np

from .container import META_TENSOR, HeaderError, pack_meta, read_container, unpack_meta, write_container
from .types import (AlignmentReport, BoldRun, EmbeddingTrack, EncodingModel, Hyperparameters,
                    Provenance, ReportMeta, RoiMask, StimulusTimeline, ValidationError, Word,
                    check_mask_set)


def _meta_for(tensors: dict, kind: str) -> dict:
    meta = unpack_meta(tensors[META_TENSOR])
    got = meta.get("kind")
    if got != kind:
        raise ValidationError(f"expected a {kind!r} container, found kind {got!r}")
    return meta


def save_timeline(timeline: StimulusTimeline, path) -> None:
    write_container({
        "onset_s": np.array([w.onset_s for w in timeline.words], dtype=np.float64),
        "run_id": np.array([w.run_id for w in timeline.words], dtype=np.int64),
        "run_tr_counts": np.array(timeline.run_tr_counts, dtype=np.int64),
        META_TENSOR: pack_meta({
            "kind": "timeline",
            "tr_duration_s": timeline.tr_duration_s,
            "words": timeline.texts(),
        }),
    }, path)


def load_timeline(path) -> StimulusTimeline:
    t = read_container(path)
    meta = _meta_for(t, "timeline")
    words = tuple(Word(text, float(on), int(rid)) for text, on, rid
                  in zip(meta["words"], t["onset_s"], t["run_id"]))
    return StimulusTimeline(words=words,
                            tr_duration_s=float(meta["tr_duration_s"]),
                            run_tr_counts=tuple(int(c) for c in t["run_tr_counts"]))


def save_track(track: EmbeddingTrack, path) -> None:
    meta = {
        "kind": "track",
        "model_tag": track.model_tag,
        "scramble_tag": track.scramble_tag,
        "layer": track.layer,
        "context_window": track.context_window,
        "eval_word_range": list(track.eval_word_range) if track.eval_word_range else None,
    }
    write_container({
        "embeddings": track.embeddings,
        "log_probs": track.log_probs,
        "log_prob_present": track.log_prob_present.astype(np.uint8),
        META_TENSOR: pack_meta(meta),
    }, path)


def load_track(path) -> EmbeddingTrack:
    t = read_container(path)
    meta = _meta_for(t, "track")
    rng = meta.get("eval_word_range")
    return EmbeddingTrack(
        model_tag=str(meta["model_tag"]),
        scramble_tag=str(meta["scramble_tag"]),
        layer=int(meta["layer"]),
        embeddings=t["embeddings"],
        log_probs=t["log_probs"],
        log_prob_present=t["log_prob_present"].astype(bool),
        context_window=int(meta["context_window"]),
        eval_word_range=tuple(rng) if rng else None,
    )


def save_bold_run(run: BoldRun, path) -> None:
    write_container({
        "data": run.data,
        META_TENSOR: pack_meta({
            "kind": "bold_run",
            "participant_id": run.participant_id,
            "run_id": run.run_id,
            "voxel_ids": list(run.voxel_ids),
        }),
    }, path)


def load_bold_run(path) -> BoldRun:
    t = read_container(path)
    meta = _meta_for(t, "bold_run")
    return BoldRun(participant_id=str(meta["participant_id"]),
                   run_id=int(meta["run_id"]),
                   data=t["data"],
                   voxel_ids=tuple(meta["voxel_ids"]))


def save_model(model: EncodingModel, path) -> None:
    write_container({
        "weights": model.weights,
        "bias": model.bias,
        META_TENSOR: pack_meta({
            "kind": "encoding_model",
            "participant_id": model.participant_id,
            "heldout_run": model.heldout_run,
            "hyperparameters": {
                "learning_rate": model.hyperparameters.learning_rate,
                "weight_decay": model.hyperparameters.weight_decay,
                "epochs_trained": model.hyperparameters.epochs_trained,
            },
            "provenance": {
                "model_tag": model.provenance.model_tag,
                "scramble_tag": model.provenance.scramble_tag,
                "seed": model.provenance.seed,
            },
        }),
    }, path)


def load_model(path) -> EncodingModel:
    t = read_container(path)
    meta = _meta_for(t, "encoding_model")
    hp = meta["hyperparameters"]
    pv = meta["provenance"]
    return EncodingModel(
        participant_id=str(meta["participant_id"]),
        heldout_run=int(meta["heldout_run"]),
        weights=t["weights"],
        bias=t["bias"],
        hyperparameters=Hyperparameters(float(hp["learning_rate"]),
                                        float(hp["weight_decay"]),
                                        int(hp["epochs_trained"])),
        provenance=Provenance(str(pv["model_tag"]), str(pv["scramble_tag"]), int(pv["seed"])),
    )


def save_report(report: AlignmentReport, path) -> None:
    write_container({
        "correlations": report.correlations,
        "p_values": report.p_values,
        "significant": report.significant.astype(np.uint8),
        META_TENSOR: pack_meta({
            "kind": "alignment_report",
            "voxel_ids": list(report.voxel_ids),
            "participant_id": report.meta.participant_id,
            "model_tag": report.meta.model_tag,
            "scramble_tag": report.meta.scramble_tag,
            "folds": list(report.meta.folds),
            "alpha": report.meta.alpha,
            "bh_threshold": report.meta.bh_threshold,
            "n_undefined": report.meta.n_undefined,
        }),
    }, path)


def load_report(path) -> AlignmentReport:
    t = read_container(path)
    meta = _meta_for(t, "alignment_report")
    rm = ReportMeta(participant_id=str(meta["participant_id"]),
                    model_tag=str(meta["model_tag"]),
                    scramble_tag=str(meta["scramble_tag"]),
                    folds=tuple(meta["folds"]),
                    alpha=float(meta["alpha"]),
                    bh_threshold=float(meta["bh_threshold"]),
                    n_undefined=int(meta["n_undefined"]))
    return AlignmentReport(voxel_ids=tuple(meta["voxel_ids"]),
                           correlations=t["correlations"],
                           p_values=t["p_values"],
                           significant=t["significant"].astype(bool),
                           meta=rm)


def save_masks(masks, path) -> None:
    check_mask_set(masks)
    doc = {"masks": [{"name": m.name, "voxel_ids": sorted(m.voxel_ids)} for m in masks]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_masks(path) -> tuple[RoiMask, ...]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise HeaderError(f"{path}: mask file is not valid JSON: {exc}") from exc
    masks = tuple(RoiMask(str(m["name"]), frozenset(m["voxel_ids"])) for m in doc["masks"])
    check_mask_set(masks)
    return masks
