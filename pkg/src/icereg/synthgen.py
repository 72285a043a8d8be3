"""Synthetic layered echogram-like scenes with exact thickness oracles.

Each scene is a stack of undulating layer bands: per-layer thicknesses are
drawn uniformly around a mean, boundaries follow a sinusoid with per-layer
phase, and the rendered mask is the ground truth (targets come from the
mask, so target == extract_thickness(mask) exactly). Image appearance
(brightness bands, depth attenuation, additive noise) is drawn from RNG
substreams independent of the geometry, so changing the noise level never
changes the mask or the target.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pgm
from .errors import ConfigurationError
from .groundtruth import (DatasetIndex, LayerMask, ThicknessVector,
                          extract_thickness, write_thickness_csv)
from .rng import Rng

_BACKGROUND_BRIGHTNESS = 0.04


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 128
    num_layers: int = 12
    mean_layer_thickness_px: float = 3.0
    thickness_jitter: float = 0.3
    undulation_amplitude_px: float = 2.0
    undulation_wavelength_px: float = 64.0
    noise_sigma: float = 0.08
    attenuation_per_row: float = 0.004

    def validate(self):
        if self.height < 1 or self.width < 1:
            raise ConfigurationError("scene dimensions must be positive")
        if not (1 <= self.num_layers <= 27):
            raise ConfigurationError(f"num_layers must be in 1..27, got {self.num_layers}")
        if not (0 <= self.thickness_jitter < 1):
            raise ConfigurationError("thickness_jitter must be in [0,1)")
        if self.mean_layer_thickness_px <= 0 or self.undulation_wavelength_px <= 0:
            raise ConfigurationError("thickness and wavelength must be positive")
        if self.undulation_amplitude_px < 0 or self.noise_sigma < 0:
            raise ConfigurationError("amplitude and noise sigma must be non-negative")
        if not (0 <= self.attenuation_per_row < 1):
            raise ConfigurationError("attenuation_per_row must be in [0,1)")
        stack = (self.num_layers * self.mean_layer_thickness_px
                 * (1 + self.thickness_jitter) + self.undulation_amplitude_px)
        if stack >= self.height:
            raise ConfigurationError(
                f"layers cannot fit: num_layers*mean*(1+jitter)+amplitude = "
                f"{stack:.2f} must be < height {self.height}")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "SceneSpec":
        spec = cls(**doc)
        spec.validate()
        return spec


@dataclass
class SyntheticSample:
    image: np.ndarray  # H x W float32 in [0,1]
    mask: LayerMask
    target: ThicknessVector
    seed: int


def _boundaries(spec: SceneSpec, rng: Rng) -> np.ndarray:
    """Integer boundary rows, shape (num_layers+1, width), monotone per column."""
    n = spec.num_layers
    lo = spec.mean_layer_thickness_px * (1 - spec.thickness_jitter)
    hi = spec.mean_layer_thickness_px * (1 + spec.thickness_jitter)
    thicknesses = rng.substream("thickness").uniform(n, lo, hi)
    phases = rng.substream("phase").uniform(n + 1, 0.0, 2 * np.pi)

    x = np.arange(spec.width, dtype=np.float64)
    top = spec.undulation_amplitude_px + 1.0
    offsets = top + np.concatenate([[0.0], np.cumsum(thicknesses)])
    waves = spec.undulation_amplitude_px * np.sin(
        2 * np.pi * x[None, :] / spec.undulation_wavelength_px + phases[:, None])
    b = np.rint(offsets[:, None] + waves).astype(np.int64)
    b = np.maximum.accumulate(b, axis=0)  # monotone non-decreasing down the stack
    return np.clip(b, 0, spec.height)


def generate_scene(spec: SceneSpec, seed: int) -> SyntheticSample:
    """Deterministic sample from (spec, seed)."""
    spec.validate()
    rng = Rng(seed)
    b = _boundaries(spec, rng)

    rows = np.arange(spec.height, dtype=np.int64)[:, None]
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    for i in range(1, spec.num_layers + 1):
        labels[(rows >= b[i - 1][None, :]) & (rows < b[i][None, :])] = i
    mask = LayerMask(labels)

    # alternating bright/dark reflectivity bands, one draw per layer
    bru = rng.substream("brightness").uniform(spec.num_layers)
    brightness = np.where(np.arange(spec.num_layers) % 2 == 0,
                          0.60 + 0.30 * bru, 0.10 + 0.25 * bru)
    lut = np.concatenate([[_BACKGROUND_BRIGHTNESS], brightness])
    image = lut[labels]
    image = image * (1 - spec.attenuation_per_row) ** rows.astype(np.float64)
    noise = rng.substream("noise").normal(spec.height * spec.width)
    image = image + spec.noise_sigma * noise.reshape(spec.height, spec.width)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    return SyntheticSample(image=image, mask=mask,
                           target=extract_thickness(mask), seed=seed)


def analytic_layer_means(spec: SceneSpec, seed: int) -> np.ndarray:
    """Column-averaged boundary differences before integer rounding.

    Independent of the mask rendering path; used as an oracle for the
    extracted targets (they agree to within the 1 px rounding slack).
    """
    rng = Rng(seed)
    n = spec.num_layers
    lo = spec.mean_layer_thickness_px * (1 - spec.thickness_jitter)
    hi = spec.mean_layer_thickness_px * (1 + spec.thickness_jitter)
    thicknesses = rng.substream("thickness").uniform(n, lo, hi)
    phases = rng.substream("phase").uniform(n + 1, 0.0, 2 * np.pi)
    x = np.arange(spec.width, dtype=np.float64)
    top = spec.undulation_amplitude_px + 1.0
    offsets = top + np.concatenate([[0.0], np.cumsum(thicknesses)])
    waves = spec.undulation_amplitude_px * np.sin(
        2 * np.pi * x[None, :] / spec.undulation_wavelength_px + phases[:, None])
    b = offsets[:, None] + waves
    return np.diff(b, axis=0).mean(axis=1)


def generate_dataset(spec: SceneSpec, n_train: int, n_test: int, base_seed: int,
                     out_dir) -> tuple[DatasetIndex, DatasetIndex]:
    """Write a synthetic corpus (PGM images/masks, CSV targets, manifest).

    Sample i uses seed base_seed + i; train samples come first, so the
    train and test seed ranges are disjoint.
    """
    spec.validate()
    if n_train < 0 or n_test < 0:
        raise ConfigurationError("sample counts must be non-negative")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    manifest = []
    csv_rows = []
    indices = {"train": DatasetIndex([], "train"), "test": DatasetIndex([], "test")}
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        sample = generate_scene(spec, base_seed + i)
        sample_id = f"{split}_{i:05d}"
        image_rel = f"images/{sample_id}.pgm"
        mask_rel = f"masks/{sample_id}.pgm"
        pgm.save_image(out_dir / image_rel, sample.image)
        pgm.save_mask(out_dir / mask_rel, sample.mask.labels)
        manifest.append({"id": sample_id, "image": image_rel,
                         "mask": mask_rel, "split": split})
        csv_rows.append((sample_id, sample.target))
        indices[split].entries.append((out_dir / image_rel, out_dir / mask_rel,
                                       sample.target))

    write_thickness_csv(out_dir / "thickness.csv", csv_rows)
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out_dir / "scene_spec.json", "w") as f:
        json.dump(spec.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    return indices["train"], indices["test"]
