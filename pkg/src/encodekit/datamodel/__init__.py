from .container import (BadMagicError, ContainerError, DuplicateNameError, HeaderError,
                        TruncatedError, UnknownDtypeError, pack_meta, read_container,
                        unpack_meta, write_container)
from .io import (load_bold_run, load_masks, load_model, load_report, load_timeline,
                 load_track, save_bold_run, save_masks, save_model, save_report,
                 save_timeline, save_track)
from .manifest import ManifestError, RunManifest, TrackRef, load_manifest, validate_manifest
from .types import (AlignmentReport, BoldRun, EmbeddingTrack, EncodingModel, Hyperparameters,
                    Provenance, ReportMeta, RoiMask, StimulusTimeline, ValidationError, Word,
                    check_mask_set, check_run_set)

__all__ = [
    "AlignmentReport", "BadMagicError", "BoldRun", "ContainerError", "DuplicateNameError",
    "EmbeddingTrack", "EncodingModel", "HeaderError", "Hyperparameters", "ManifestError",
    "Provenance", "ReportMeta", "RoiMask", "RunManifest", "StimulusTimeline", "TrackRef",
    "TruncatedError", "UnknownDtypeError", "ValidationError", "Word",
    "check_mask_set", "check_run_set",
    "load_bold_run", "load_manifest", "load_masks", "load_model", "load_report",
    "load_timeline", "load_track", "pack_meta", "read_container", "save_bold_run",
    "save_masks", "save_model", "save_report", "save_timeline", "save_track",
    "unpack_meta", "validate_manifest", "write_container",
]
