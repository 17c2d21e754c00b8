"""Patch corpus: data model, synthetic generator, sampling, splits, disk format.

The synthetic generator stands in for a (non-distributable) microscopy corpus.
Each class renders as a cell-body texture: dark Gaussian blobs on a light
background whose density, blob radius and horizontal layering period sit on
class-specific ladders. Adjacent classes are spaced at least ``separation``
times the per-patch jitter on every ladder, so classes are separable by
construction. A per-brain global gain/offset simulates inter-brain appearance
variability.

On disk a corpus is a directory holding ``manifest.json`` (UTF-8 sidecar) and
``patches.bin`` (packed little-endian uint8, one row-major square patch per
entry, intensities quantized by round(x * 255)).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

MANIFEST_NAME = "manifest.json"
STORE_NAME = "patches.bin"

_BRAIN_STREAM = 0xB6A1  # rng stream tags, arbitrary but fixed
_PATCH_STREAM = 0x9A7C


@dataclass(frozen=True)
class Patch:
    """Square single-channel image with intensities in [0, 1]."""

    pixels: np.ndarray
    resolution_um: float = 2.0

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise ConfigError(f"patch must be square, got shape {self.pixels.shape}")
        if self.pixels.shape[0] < 8:
            raise ConfigError(f"patch side must be >= 8, got {self.pixels.shape[0]}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ConfigError(
                f"patch intensities must lie in [0, 1], got range "
                f"[{self.pixels.min():.3f}, {self.pixels.max():.3f}]"
            )

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class LabeledPatch:
    patch: Patch
    label: int
    brain_id: int
    section_id: int


@dataclass(frozen=True)
class ManifestEntry:
    offset: int
    label: int
    brain_id: int
    section_id: int
    side: int


@dataclass(frozen=True)
class CorpusManifest:
    class_count: int
    class_names: tuple[str, ...]
    entries: tuple[ManifestEntry, ...]
    resolution_um: float
    generator_seed: int

    def sections(self) -> list[int]:
        return sorted({e.section_id for e in self.entries})

    def sections_of_brain(self, brain_id: int) -> set[int]:
        return {e.section_id for e in self.entries if e.brain_id == brain_id}


@dataclass(frozen=True)
class SplitSpec:
    train_sections: frozenset[int]
    test_sections: frozenset[int]
    holdout_brain: int | None = None

    def __post_init__(self):
        if self.train_sections & self.test_sections:
            raise ConfigError("train and test sections overlap")

    def to_json(self) -> str:
        return json.dumps(
            {
                "train_sections": sorted(self.train_sections),
                "test_sections": sorted(self.test_sections),
                "holdout_brain": self.holdout_brain,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        d = json.loads(text)
        return cls(
            train_sections=frozenset(d["train_sections"]),
            test_sections=frozenset(d["test_sections"]),
            holdout_brain=d.get("holdout_brain"),
        )


@dataclass(frozen=True)
class CorpusConfig:
    classes: int
    patches_per_class: int
    side: int
    brains: int = 3
    sections_per_brain: int = 4
    seed: int = 0
    resolution_um: float = 2.0
    # separability knobs: parameter ladders and how tight the per-patch jitter is
    separation: float = 3.0
    density_range: tuple[float, float] = (0.0012, 0.0048)
    radius_range: tuple[float, float] = (1.6, 3.2)
    period_range: tuple[float, float] = (8.0, 28.0)
    band_strength: float = 1.0
    background: float = 0.88
    blob_depth: float = 0.6
    pixel_noise: float = 0.008
    brain_gain_jitter: float = 0.015
    brain_offset_jitter: float = 0.008

    def validate(self) -> None:
        if self.classes < 1:
            raise ConfigError(f"classes must be >= 1, got {self.classes}")
        if self.patches_per_class < 1:
            raise ConfigError(f"patches_per_class must be >= 1, got {self.patches_per_class}")
        if self.side < 32:
            raise ConfigError(f"patch side must be >= 32, got {self.side}")
        if self.brains < 1 or self.sections_per_brain < 1:
            raise ConfigError("brains and sections_per_brain must be >= 1")
        if self.separation <= 0:
            raise ConfigError(f"separation must be positive, got {self.separation}")


class Corpus:
    """Immutable manifest plus the packed uint8 patch store."""

    def __init__(self, manifest: CorpusManifest, store: np.ndarray):
        self.manifest = manifest
        self.store = store

    def __len__(self) -> int:
        return len(self.manifest.entries)

    def patch_pixels(self, index: int) -> np.ndarray:
        e = self.manifest.entries[index]
        raw = self.store[e.offset : e.offset + e.side * e.side]
        return (raw.astype(np.float32) / 255.0).reshape(e.side, e.side)

    def labeled_patch(self, index: int) -> LabeledPatch:
        e = self.manifest.entries[index]
        return LabeledPatch(
            patch=Patch(self.patch_pixels(index), self.manifest.resolution_um),
            label=e.label,
            brain_id=e.brain_id,
            section_id=e.section_id,
        )

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.manifest.entries], dtype=np.int64)


def _class_ladder(lo: float, hi: float, classes: int) -> np.ndarray:
    t = (np.arange(classes) + 0.5) / classes
    return lo + (hi - lo) * t


def _render_patch(
    config: CorpusConfig,
    density: float,
    radius: float,
    period: float,
    gain: float,
    offset: float,
    rng: np.random.Generator,
) -> np.ndarray:
    side = config.side
    img = np.full((side, side), config.background, dtype=np.float64)
    n_blobs = int(round(density * side * side))
    win = int(math.ceil(3.0 * radius))
    ax = np.arange(-win, win + 1, dtype=np.float64)
    # accepted y positions concentrate in horizontal bands of the class period
    placed = 0
    while placed < n_blobs:
        y = rng.uniform(0.0, side)
        x = rng.uniform(0.0, side)
        band = 0.5 * (1.0 + math.cos(2.0 * math.pi * y / period))
        keep = rng.uniform() < (1.0 - config.band_strength) + config.band_strength * band
        if not keep:
            continue
        depth = config.blob_depth * rng.uniform(0.8, 1.2)
        cy, cx = int(round(y)), int(round(x))
        fy, fx = y - cy, x - cx
        blob = np.exp(-((ax[:, None] - fy) ** 2 + (ax[None, :] - fx) ** 2) / (2.0 * radius**2))
        y0, y1 = max(0, cy - win), min(side, cy + win + 1)
        x0, x1 = max(0, cx - win), min(side, cx + win + 1)
        img[y0:y1, x0:x1] -= depth * blob[y0 - (cy - win) : y1 - (cy - win), x0 - (cx - win) : x1 - (cx - win)]
        placed += 1
    img = gain * img + offset
    if config.pixel_noise > 0:
        img += rng.normal(0.0, config.pixel_noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic_corpus(config: CorpusConfig) -> Corpus:
    """Render a class-separable corpus, deterministic for a fixed seed."""
    config.validate()
    c = config.classes
    densities = _class_ladder(*config.density_range, c)
    radii = _class_ladder(*config.radius_range, c)
    periods = _class_ladder(*config.period_range, c)
    # per-patch jitter half-width: adjacent-class spacing / (2 * separation)
    jitter = {
        "density": (config.density_range[1] - config.density_range[0]) / c / (2 * config.separation),
        "radius": (config.radius_range[1] - config.radius_range[0]) / c / (2 * config.separation),
        "period": (config.period_range[1] - config.period_range[0]) / c / (2 * config.separation),
    }

    brain_params = {}
    for b in range(config.brains):
        rng = np.random.default_rng([config.seed, _BRAIN_STREAM, b])
        brain_params[b] = (
            1.0 + rng.uniform(-config.brain_gain_jitter, config.brain_gain_jitter),
            rng.uniform(-config.brain_offset_jitter, config.brain_offset_jitter),
        )

    n_sections = config.brains * config.sections_per_brain
    by_section: dict[int, list[tuple[int, int]]] = {s: [] for s in range(n_sections)}
    for label in range(c):
        for j in range(config.patches_per_class):
            by_section[(j + label) % n_sections].append((label, j))

    entries: list[ManifestEntry] = []
    chunks: list[np.ndarray] = []
    offset = 0
    side = config.side
    for section in range(n_sections):
        brain = section // config.sections_per_brain
        gain, shift = brain_params[brain]
        for label, j in by_section[section]:
            rng = np.random.default_rng([config.seed, _PATCH_STREAM, label, j])
            pixels = _render_patch(
                config,
                density=densities[label] + rng.uniform(-jitter["density"], jitter["density"]),
                radius=radii[label] + rng.uniform(-jitter["radius"], jitter["radius"]),
                period=periods[label] + rng.uniform(-jitter["period"], jitter["period"]),
                gain=gain,
                offset=shift,
                rng=rng,
            )
            chunks.append(np.round(pixels * 255.0).astype(np.uint8).ravel())
            entries.append(ManifestEntry(offset, label, brain, section, side))
            offset += side * side
    store = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint8)
    manifest = CorpusManifest(
        class_count=c,
        class_names=tuple(f"class_{i}" for i in range(c)),
        entries=tuple(entries),
        resolution_um=config.resolution_um,
        generator_seed=config.seed,
    )
    return Corpus(manifest, store)


def save_corpus(corpus: Corpus, path: str) -> None:
    """Write manifest.json + patches.bin; intensities must lie in [0, 1]."""
    os.makedirs(path, exist_ok=True)
    m = corpus.manifest
    doc = {
        "class_count": m.class_count,
        "class_names": list(m.class_names),
        "resolution_um": m.resolution_um,
        "generator_seed": m.generator_seed,
        "entries": [[e.offset, e.label, e.brain_id, e.section_id, e.side] for e in m.entries],
    }
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    corpus.store.astype("<u1").tofile(os.path.join(path, STORE_NAME))


def load_corpus(path: str) -> Corpus:
    """Read and validate a corpus directory; round-trips save_corpus exactly."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path, encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        entries = tuple(ManifestEntry(*[int(v) for v in row]) for row in doc["entries"])
        manifest = CorpusManifest(
            class_count=int(doc["class_count"]),
            class_names=tuple(doc["class_names"]),
            entries=entries,
            resolution_um=float(doc["resolution_um"]),
            generator_seed=int(doc["generator_seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed manifest {manifest_path}: {exc}") from exc
    store = np.fromfile(os.path.join(path, STORE_NAME), dtype="<u1")
    validate_corpus(manifest, store)
    return Corpus(manifest, store)


def validate_corpus(manifest: CorpusManifest, store: np.ndarray) -> None:
    if len(manifest.class_names) != manifest.class_count:
        raise FormatError(
            f"manifest lists {len(manifest.class_names)} class names for "
            f"{manifest.class_count} classes"
        )
    prev_key = None
    for i, e in enumerate(manifest.entries):
        if not 0 <= e.label < manifest.class_count:
            raise FormatError(f"entry {i}: label {e.label} out of range [0, {manifest.class_count})")
        if e.offset < 0 or e.offset + e.side * e.side > store.size:
            raise FormatError(
                f"entry {i}: offset {e.offset} + {e.side * e.side} pixels exceeds store size {store.size}"
            )
        key = (e.section_id, e.offset)
        if prev_key is not None and key < prev_key:
            raise FormatError(f"entry {i}: entries not sorted by (section_id, offset)")
        prev_key = key
    intervals = sorted(
        (e.offset, e.offset + e.side * e.side, i) for i, e in enumerate(manifest.entries)
    )
    for (_, end, _), (start, _, index) in zip(intervals, intervals[1:]):
        if start < end:
            raise FormatError(f"entry {index}: offset {start} overlaps another entry")


def split_by_section(
    manifest: CorpusManifest,
    train_fraction: float,
    seed: int = 0,
    holdout_brain: int | None = None,
) -> SplitSpec:
    """Partition section ids (never individual patches) into train/test sets."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    held = manifest.sections_of_brain(holdout_brain) if holdout_brain is not None else set()
    sections = [s for s in manifest.sections() if s not in held]
    if len(sections) < 2:
        raise ConfigError(f"need >= 2 splittable sections, got {len(sections)}")
    order = np.random.default_rng(seed).permutation(len(sections))
    n_train = int(len(sections) * train_fraction + 1e-9)
    if n_train == 0 or n_train == len(sections):
        raise ConfigError(
            f"train_fraction {train_fraction} leaves an empty train or test set "
            f"over {len(sections)} sections"
        )
    shuffled = [sections[i] for i in order]
    return SplitSpec(
        train_sections=frozenset(shuffled[:n_train]),
        test_sections=frozenset(shuffled[n_train:]),
        holdout_brain=holdout_brain,
    )


def sample_balanced_epoch(
    manifest: CorpusManifest, split: SplitSpec, per_class: int, seed: int
) -> list[int]:
    """Entry indices for one class-balanced epoch (exactly per_class per class).

    Classes with at least per_class training patches contribute a subset drawn
    without replacement; smaller classes are oversampled by whole copies plus a
    partial draw, so every patch of an undersized class appears at least once.
    """
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    by_label: dict[int, list[int]] = {label: [] for label in range(manifest.class_count)}
    for i, e in enumerate(manifest.entries):
        if e.section_id in split.train_sections:
            by_label[e.label].append(i)
    picks: list[int] = []
    for label in range(manifest.class_count):
        avail = by_label[label]
        if not avail:
            raise ConfigError(
                f"class {manifest.class_names[label]} has no patches in the train split"
            )
        copies, remainder = divmod(per_class, len(avail))
        picks.extend(avail * copies)
        if remainder:
            picks.extend(rng.permutation(avail)[:remainder].tolist())
    order = rng.permutation(len(picks))
    return [picks[i] for i in order]
