"""Run manifest: one JSON document describing a full analysis.

Schema (paths are resolved relative to the manifest file's directory):

    {
      "timeline": "timeline.ekc",
      "bold": {"P01": {"0": "P01_run0.ekc", ...}, ...},
      "masks": "masks.json",                      # optional
      "tracks": [{"model_tag": "baseline", "scramble_tag": "none",
                  "path": "baseline.track.ekc"}, ...],
      "lags": [1, 2, 3, 4, 5],
      "search": {"trials": 100, "max_epochs": 40, "batch_size": 32,
                 "lr_min": 1e-6, "lr_max": 1e-2,
                 "wd_min": 0.0, "wd_max": 1e-5, "patience": 3},
      "alpha": 0.05,
      "seed": 0,
      "out_dir": "out"
    }

Every run of every participant must reference an existing file; tag pairs
must be unique.  ``search`` and ``lags`` may be omitted to get the
default protocol (5 lags, 100-trial search).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .types import ValidationError


class ManifestError(ValidationError):
    """Manifest fails validation (missing file, bad field, duplicate tag)."""


@dataclass(frozen=True)
class TrackRef:
    model_tag: str
    scramble_tag: str
    path: Path

    @property
    def condition(self) -> str:
        return f"{self.model_tag}__{self.scramble_tag}"


@dataclass(frozen=True)
class RunManifest:
    timeline: Path
    bold: dict[str, dict[int, Path]]
    tracks: tuple[TrackRef, ...]
    lags: tuple[int, ...] = (1, 2, 3, 4, 5)
    search: dict = field(default_factory=dict)
    alpha: float = 0.05
    seed: int = 0
    out_dir: Path = Path("out")
    masks: Path | None = None

    def participants(self) -> list[str]:
        return sorted(self.bold)

    def runs_of(self, participant: str) -> list[int]:
        return sorted(self.bold[participant])


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    base = path.parent

    def resolve(p) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    try:
        timeline = resolve(doc["timeline"])
        bold = {str(pid): {int(rid): resolve(rp) for rid, rp in runs.items()}
                for pid, runs in doc["bold"].items()}
        tracks = tuple(TrackRef(str(t["model_tag"]), str(t["scramble_tag"]), resolve(t["path"]))
                       for t in doc["tracks"])
    except (KeyError, TypeError, AttributeError) as exc:
        raise ManifestError(f"{path}: missing or malformed required field: {exc}") from exc

    manifest = RunManifest(
        timeline=timeline,
        bold=bold,
        tracks=tracks,
        lags=tuple(int(v) for v in doc.get("lags", (1, 2, 3, 4, 5))),
        search=dict(doc.get("search", {})),
        alpha=float(doc.get("alpha", 0.05)),
        seed=int(doc.get("seed", 0)),
        out_dir=resolve(doc.get("out_dir", "out")),
        masks=resolve(doc["masks"]) if doc.get("masks") else None,
    )
    validate_manifest(manifest)
    return manifest


def validate_manifest(m: RunManifest) -> None:
    if not m.tracks:
        raise ManifestError("manifest lists no tracks")
    pairs = [(t.model_tag, t.scramble_tag) for t in m.tracks]
    if len(set(pairs)) != len(pairs):
        raise ManifestError(f"duplicate (model_tag, scramble_tag) pairs: {pairs}")
    if not m.bold:
        raise ManifestError("manifest lists no participants")
    run_sets = {pid: tuple(sorted(runs)) for pid, runs in m.bold.items()}
    expected = next(iter(run_sets.values()))
    for pid, rs in run_sets.items():
        if rs != expected:
            raise ManifestError(f"participant {pid} runs {rs} differ from {expected}")
        if rs != tuple(range(len(rs))):
            raise ManifestError(f"participant {pid} runs {rs} are not contiguous from 0")
    if len(expected) < 2:
        raise ManifestError("need at least 2 runs to form train/heldout folds")
    if not m.lags or list(m.lags) != sorted(set(m.lags)) or m.lags[0] < 1:
        raise ManifestError(f"lags must be strictly increasing integers >= 1, got {m.lags}")
    if not (0.0 < m.alpha < 1.0):
        raise ManifestError(f"alpha must be in (0, 1), got {m.alpha}")
    missing = []
    for p in [m.timeline, *(m.masks,) * bool(m.masks)]:
        if not Path(p).is_file():
            missing.append(str(p))
    for t in m.tracks:
        if not t.path.is_file():
            missing.append(str(t.path))
    for runs in m.bold.values():
        for rp in runs.values():
            if not Path(rp).is_file():
                missing.append(str(rp))
    if missing:
        raise ManifestError("manifest references missing files: " + ", ".join(missing))


def save_manifest_doc(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
