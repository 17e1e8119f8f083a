"""Manifest ingestion, label filtering, and seeded stratified k-fold splits.

The manifest is CSV with header
``id,image_path,labels,lx,ly,rx,ry,nx,ny,bx,by,bw,bh``; the labels cell
holds one or more ';'-separated emotion names, and the landmark/box cells
may be empty. Fold assignment shuffles each class with a xoshiro256**
stream derived from (seed, class name), so plans are reproducible across
platforms and independent of record order.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

from .errors import ManifestError
from .image import BoundingBox, FaceLandmarks, Point


class EmotionLabel(Enum):
    HAPPINESS = "Happiness"
    SADNESS = "Sadness"
    SURPRISE = "Surprise"
    FEAR = "Fear"
    ANGER = "Anger"
    DISGUST = "Disgust"
    CONTEMPT = "Contempt"
    NEUTRAL = "Neutral"
    # Ingestion-only markers; never present in a filtered manifest.
    OTHER = "Other"
    UNCERTAIN = "Uncertain"


# Class column order used in tables, charts and reports.
EMOTION_ORDER = (
    EmotionLabel.HAPPINESS,
    EmotionLabel.SADNESS,
    EmotionLabel.SURPRISE,
    EmotionLabel.FEAR,
    EmotionLabel.ANGER,
    EmotionLabel.DISGUST,
    EmotionLabel.CONTEMPT,
    EmotionLabel.NEUTRAL,
)

EKMAN_PLUS_NEUTRAL = frozenset(EMOTION_ORDER)

_MARKERS = frozenset({EmotionLabel.OTHER, EmotionLabel.UNCERTAIN})

_LABEL_BY_NAME = {label.value.lower(): label for label in EmotionLabel}

MANIFEST_COLUMNS = ("id", "image_path", "labels", "lx", "ly", "rx", "ry", "nx", "ny", "bx", "by", "bw", "bh")
_MINIMAL_COLUMNS = MANIFEST_COLUMNS[:3]


def parse_label(token: str) -> EmotionLabel:
    label = _LABEL_BY_NAME.get(token.strip().lower())
    if label is None:
        raise ManifestError(f"unknown label token {token.strip()!r}")
    return label


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: str
    raw_labels: tuple[EmotionLabel, ...]
    landmarks: FaceLandmarks | None = None
    box: BoundingBox | None = None

    @property
    def single_label(self) -> EmotionLabel:
        if len(self.raw_labels) != 1:
            raise ManifestError(f"record {self.id!r} carries {len(self.raw_labels)} labels")
        return self.raw_labels[0]


@dataclass(frozen=True)
class Manifest:
    records: tuple[SampleRecord, ...]
    label_universe: frozenset[EmotionLabel] = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.records)

    def ordered_classes(self) -> tuple[EmotionLabel, ...]:
        return tuple(label for label in EMOTION_ORDER if label in self.label_universe)


def _parse_floats(cells: list[str], names: tuple[str, ...], line_no: int):
    present = [c.strip() != "" for c in cells]
    if not any(present):
        return None
    if not all(present):
        raise ManifestError(f"line {line_no}: columns {names} must be all set or all empty")
    try:
        return [float(c) for c in cells]
    except ValueError as exc:
        raise ManifestError(f"line {line_no}: non-numeric value in {names}: {exc}") from None


def parse_manifest(path) -> Manifest:
    """Read a manifest CSV into records plus the observed label universe."""
    with open(path, "r", encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file (missing header)") from None
        header = tuple(h.strip() for h in header)
        if header not in (MANIFEST_COLUMNS, _MINIMAL_COLUMNS):
            raise ManifestError(
                f"{path}: header must be {','.join(MANIFEST_COLUMNS)} "
                f"(landmark/box columns may be omitted entirely), got {','.join(header)}"
            )
        has_geometry = header == MANIFEST_COLUMNS

        records: list[SampleRecord] = []
        seen: set[str] = set()
        universe: set[EmotionLabel] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise ManifestError(f"line {line_no}: expected {len(header)} cells, got {len(row)}")
            rec_id = row[0].strip()
            if not rec_id:
                raise ManifestError(f"line {line_no}: empty id")
            if rec_id in seen:
                raise ManifestError(f"line {line_no}: duplicate id {rec_id!r}")
            seen.add(rec_id)

            tokens = [t for t in row[2].split(";") if t.strip()]
            if not tokens:
                raise ManifestError(f"line {line_no}: no labels")
            try:
                labels = tuple(parse_label(t) for t in tokens)
            except ManifestError as exc:
                raise ManifestError(f"line {line_no}: {exc}") from None
            universe.update(label for label in labels if label not in _MARKERS)

            landmarks = None
            box = None
            if has_geometry:
                lm_vals = _parse_floats(row[3:9], ("lx", "ly", "rx", "ry", "nx", "ny"), line_no)
                if lm_vals is not None:
                    landmarks = FaceLandmarks(
                        Point(lm_vals[0], lm_vals[1]),
                        Point(lm_vals[2], lm_vals[3]),
                        Point(lm_vals[4], lm_vals[5]),
                    )
                box_vals = _parse_floats(row[9:13], ("bx", "by", "bw", "bh"), line_no)
                if box_vals is not None:
                    box = BoundingBox(*box_vals)
            records.append(SampleRecord(rec_id, row[1].strip(), labels, landmarks, box))

    return Manifest(records=tuple(records), label_universe=frozenset(universe))


def filter_single_label(m: Manifest, allowed=EKMAN_PLUS_NEUTRAL) -> Manifest:
    """Keep records with exactly one label, that label in `allowed`."""
    allowed = frozenset(allowed)
    kept = tuple(
        rec for rec in m.records
        if len(rec.raw_labels) == 1 and rec.raw_labels[0] in allowed
    )
    universe = frozenset(rec.raw_labels[0] for rec in kept)
    return Manifest(records=kept, label_universe=universe)


def class_counts(m: Manifest) -> dict[EmotionLabel, int]:
    """Per-class record counts of a single-label manifest."""
    counts: Counter = Counter(rec.single_label for rec in m.records)
    return {label: counts.get(label, 0) for label in m.ordered_classes()}


# --- deterministic PRNG (xoshiro256**, splitmix64 seeding) -----------------

_M64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31), state


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _M64
    return h


class Xoshiro256StarStar:
    """xoshiro256** generator; byte-stable shuffles on every platform."""

    def __init__(self, seed: int):
        state = seed & _M64
        self._s = []
        for _ in range(4):
            out, state = _splitmix64(state)
            self._s.append(out)
        if all(v == 0 for v in self._s):
            self._s[0] = 1

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & _M64

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (self._rotl((s1 * 5) & _M64, 7) * 9) & _M64
        t = (s1 << 17) & _M64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = (_M64 + 1) - ((_M64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < threshold:
                return u % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def _class_stream(seed: int, label: EmotionLabel) -> Xoshiro256StarStar:
    return Xoshiro256StarStar((seed & _M64) ^ _fnv1a64(label.value.encode("utf-8")))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignment: dict[str, int]

    def fold_ids(self, fold: int) -> tuple[str, ...]:
        return tuple(i for i, f in self.assignment.items() if f == fold)

    def to_json(self) -> str:
        return json.dumps(
            {"k": self.k, "seed": self.seed, "assignment": self.assignment},
            sort_keys=True, indent=2,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        obj = json.loads(text)
        return cls(k=int(obj["k"]), seed=int(obj["seed"]),
                   assignment={str(k): int(v) for k, v in obj["assignment"].items()})


def stratified_kfold(m: Manifest, k: int, seed: int) -> FoldPlan:
    """Assign every record to one of k folds, balanced per class.

    Each class's ids are sorted, shuffled with that class's PRNG stream,
    and dealt round-robin from a stream-chosen starting fold, so per-class
    fold sizes never differ by more than one and the plan depends only on
    the id set, k, and seed.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if not m.records:
        raise ValueError("manifest is empty")

    by_class: dict[EmotionLabel, list[str]] = {}
    for rec in m.records:
        by_class.setdefault(rec.single_label, []).append(rec.id)

    assignment: dict[str, int] = {}
    for label in sorted(by_class, key=lambda l: l.value):
        ids = sorted(by_class[label])
        rng = _class_stream(seed, label)
        rng.shuffle(ids)
        offset = rng.below(k)
        for t, rec_id in enumerate(ids):
            assignment[rec_id] = (offset + t) % k
    return FoldPlan(k=k, seed=seed, assignment=assignment)
