"""Mean-thickness ground truth from labeled layer masks.

A mask assigns each pixel a layer label (0 = background, 1..27 = internal
layers, top to bottom). The regression target for layer i is the number of
pixels carrying label i divided by the image width: the mean number of rows
per column. Layers absent from a mask get target 0, so every mask maps to a
fixed-length 27-vector.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, EmptyInputError

NUM_LAYERS = 27
DEFAULT_CM_PER_PIXEL = 4.0


@dataclass
class LayerMask:
    """H x W integer label image."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"mask must be 2-d and non-empty, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ContractError(f"mask labels must be integers, got dtype {arr.dtype}")
        if arr.min() < 0:
            raise ContractError("mask labels must be non-negative")
        self.labels = arr.astype(np.int64)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass
class ThicknessVector:
    """Per-layer mean thicknesses in pixels; entry i-1 is layer label i."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (NUM_LAYERS,):
            raise DimensionError(f"thickness vector must have {NUM_LAYERS} entries, "
                                 f"got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0:
            raise ContractError("thickness values must be finite and non-negative")
        self.values = arr


@dataclass
class DatasetIndex:
    """Paths + targets for one split of a corpus."""

    entries: list  # of (image_path, mask_path, ThicknessVector)
    split: str = "train"
    resolution_cm_per_pixel: float = DEFAULT_CM_PER_PIXEL

    def __len__(self):
        return len(self.entries)


def extract_thickness(mask: LayerMask) -> ThicknessVector:
    """Pixel count per label divided by image width, for labels 1..27."""
    counts = np.bincount(mask.labels.ravel(), minlength=NUM_LAYERS + 1)
    return ThicknessVector(counts[1:NUM_LAYERS + 1].astype(np.float64) / mask.width)


def max_layer_count(corpus) -> int:
    """Largest label present across a corpus of masks."""
    corpus = list(corpus)
    if not corpus:
        raise EmptyInputError("max_layer_count requires a non-empty corpus")
    return int(max(int(m.labels.max()) for m in corpus))


def pixels_to_cm(thickness_px: float, resolution_cm_per_pixel: float = DEFAULT_CM_PER_PIXEL) -> float:
    if thickness_px < 0:
        raise ContractError(f"thickness must be non-negative, got {thickness_px}")
    if resolution_cm_per_pixel <= 0:
        raise ContractError(f"resolution must be positive, got {resolution_cm_per_pixel}")
    return thickness_px * resolution_cm_per_pixel


def validate_mask(mask: LayerMask) -> list[str]:
    """Warnings for suspicious masks; never raises on valid label images."""
    warnings = []
    present = np.unique(mask.labels)
    layers = present[present > 0]

    over = layers[layers > NUM_LAYERS]
    if over.size:
        warnings.append(f"labels above {NUM_LAYERS}: {', '.join(str(int(v)) for v in over)}")

    in_range = set(int(v) for v in layers if v <= NUM_LAYERS)
    if in_range:
        missing = [k for k in range(1, max(in_range)) if k not in in_range]
        if missing:
            warnings.append("non-contiguous labeling: missing "
                            f"{', '.join(f'label {k}' for k in missing)}")

    for label in sorted(in_range):
        per_col = (mask.labels == label).sum(axis=0)
        empty = int((per_col == 0).sum())
        if empty > mask.width / 2:
            warnings.append(f"sparse layer {label}: absent from {empty} of "
                            f"{mask.width} columns")
    return warnings


# ---------------------------------------------------------------------------
# file formats

def thickness_csv_header() -> list[str]:
    return ["id"] + [f"t{i:02d}" for i in range(1, NUM_LAYERS + 1)]


def write_thickness_csv(path, rows):
    """rows: iterable of (id, ThicknessVector)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(thickness_csv_header())
        for sample_id, tv in rows:
            writer.writerow([sample_id] + [f"{v:.10g}" for v in tv.values])


def read_thickness_csv(path) -> dict[str, ThicknessVector]:
    out = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != thickness_csv_header():
            raise ContractError(f"{path}: unexpected thickness CSV header")
        for row in reader:
            out[row[0]] = ThicknessVector(np.array([float(v) for v in row[1:]]))
    return out


def load_manifest(path, split: str) -> DatasetIndex:
    """Read a dataset manifest (JSON list of {id, image, mask, split}).

    Targets are recomputed from the masks; paths are resolved relative to
    the manifest's directory. An object form {samples: [...],
    resolution_cm_per_pixel: r} is also accepted.
    """
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    resolution = DEFAULT_CM_PER_PIXEL
    if isinstance(doc, dict):
        resolution = float(doc.get("resolution_cm_per_pixel", DEFAULT_CM_PER_PIXEL))
        samples = doc["samples"]
    else:
        samples = doc

    from . import pgm  # local import to keep groundtruth usable without I/O

    entries = []
    for rec in samples:
        if rec["split"] != split:
            continue
        image_path = path.parent / rec["image"]
        mask_path = path.parent / rec["mask"]
        target = extract_thickness(LayerMask(pgm.load_mask(mask_path)))
        entries.append((image_path, mask_path, target))
    return DatasetIndex(entries=entries, split=split, resolution_cm_per_pixel=resolution)
