"""Movement-level feature extraction and corpus feature-matrix assembly.

Five feature families are computed per movement: basic summary, interval,
exposition, development and recapitulation.  The full set holds 1182
features (22 + 392 + 240 + 288 + 240).  Sonata-style segment features are
computed for segment lengths 8..18 on both pitch and duration tracks;
pitch segments are first re-expressed relative to their opening note so
transposed phrases compare equal.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .score import (
    Composer,
    EncodedMovement,
    MovementMeta,
    VOICE_ORDER,
    note_sequence,
    onset_grid,
)
from .segments import SegmentConfig, weighted_quantile

logger = logging.getLogger(__name__)

CATEGORIES = ("basic", "interval", "exposition", "development", "recapitulation")
TRACKS = ("pitch", "duration")
VOICE_LABELS = tuple(v.value for v in VOICE_ORDER)
VOICE_PAIRS = (
    ("Violin1", "Violin2"),
    ("Violin1", "Viola"),
    ("Violin1", "Cello"),
    ("Violin2", "Viola"),
    ("Violin2", "Cello"),
    ("Viola", "Cello"),
)

SIGN_LABELS = ("ascending", "descending", "constant")
MODE_LABELS = ("perfect", "minor", "major", "dimaug")
# interval classes 0..11 map to P1 m2 M2 m3 M3 P4 d5/A4 P5 m6 M6 m7 M7
MODE_OF_CLASS = (0, 1, 2, 1, 2, 0, 3, 0, 1, 2, 1, 2)

#: Overlap-count thresholds for exposition and recapitulation features.
OVERLAP_THRESHOLDS = (Fraction(7, 10), Fraction(9, 10), Fraction(1))
#: Cut for the "high proportion of minor thirds" segment count.
MINOR_THIRD_HIGH = Fraction(3, 5)
#: Quantiles defining the development standard-deviation thresholds.
DEV_QUANTILES = (0.70, 0.80, 0.90, 0.95)

THRESHOLD_READINGS = ("prose", "literal")


class EmptyVoice(ValueError):
    """A voice contains no notes, so its summaries are undefined."""


# ---------------------------------------------------------------------------
# Feature naming
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureName:
    category: str
    descriptor: str
    voice: str | None = None  # voice name or "VoiceA-VoiceB" pair
    track: str | None = None
    segment_length: int | None = None
    threshold: float | None = None

    @property
    def label(self) -> str:
        parts = [self.category, self.descriptor]
        if self.track is not None:
            parts.append(self.track)
        if self.voice is not None:
            parts.append(self.voice)
        if self.segment_length is not None:
            parts.append(f"m={self.segment_length}")
        return "|".join(parts)

    def __str__(self) -> str:
        return self.label


def _threshold_of(descriptor: str) -> float | None:
    if descriptor.startswith("count_t") or descriptor.startswith("count_q"):
        return float(descriptor[7:])
    if descriptor == "minor3_count_zero":
        return 0.0
    if descriptor == "minor3_count_high":
        return float(MINOR_THIRD_HIGH)
    return None


def parse_label(label: str) -> FeatureName:
    parts = label.split("|")
    if len(parts) < 2 or parts[0] not in CATEGORIES:
        raise ValueError(f"unparseable feature label {label!r}")
    category, descriptor = parts[0], parts[1]
    voice = track = None
    segment_length = None
    for token in parts[2:]:
        if token.startswith("m="):
            segment_length = int(token[2:])
        elif token in TRACKS:
            track = token
        else:
            voice = token
    return FeatureName(
        category=category,
        descriptor=descriptor,
        voice=voice,
        track=track,
        segment_length=segment_length,
        threshold=_threshold_of(descriptor),
    )


_BASIC_DESCRIPTORS = ("note_count", "mean_duration", "sd_duration", "mean_pitch", "sd_pitch")
_MINOR3_DESCRIPTORS = (
    "minor3_min",
    "minor3_q1",
    "minor3_median",
    "minor3_q3",
    "minor3_max",
    "minor3_mean",
    "minor3_sd",
    "minor3_count_zero",
    "minor3_count_high",
)


@lru_cache(maxsize=8)
def _feature_names_cached(lengths: tuple[int, ...], quantiles: tuple[float, ...]):
    names: list[FeatureName] = []

    def add(category, descriptor, **kw):
        names.append(
            FeatureName(category, descriptor, threshold=_threshold_of(descriptor), **kw)
        )

    for v in VOICE_LABELS:
        for desc in _BASIC_DESCRIPTORS:
            add("basic", desc, voice=v)
    add("basic", "simultaneous_notes")
    add("basic", "simultaneous_rests")

    for v in VOICE_LABELS:
        for c in range(12):
            add("interval", f"class_{c}", voice=v)
        for s in SIGN_LABELS:
            add("interval", f"sign_{s}", voice=v)
        for mode in MODE_LABELS:
            add("interval", f"mode_{mode}", voice=v)
    for v in VOICE_LABELS:
        for desc in ("mean_semitone", "sd_semitone", "mean_duration_diff", "sd_duration_diff"):
            add("interval", desc, voice=v)
    for a, b in VOICE_PAIRS:
        pair = f"{a}-{b}"
        add("interval", "pair_mean_semitone", voice=pair)
        add("interval", "pair_sd_semitone", voice=pair)
        for c in range(12):
            add("interval", f"pair_class_{c}", voice=pair)
    for v in VOICE_LABELS:
        for m in lengths:
            for desc in _MINOR3_DESCRIPTORS:
                add("interval", desc, voice=v, segment_length=m)

    overlap_descs = ["max_overlap", "max_location"] + [
        f"count_t{float(t):g}" for t in OVERLAP_THRESHOLDS
    ]
    dev_descs = ["max_sd", "max_location"] + [f"count_q{q:.2f}" for q in quantiles]
    for category, descs in (
        ("exposition", overlap_descs),
        ("development", dev_descs),
        ("recapitulation", overlap_descs),
    ):
        for v in VOICE_LABELS:
            for m in lengths:
                for track in TRACKS:
                    for desc in descs:
                        add(category, desc, voice=v, track=track, segment_length=m)

    # keep Table-1 category order: basic, interval, exposition, development, recap
    order = {c: i for i, c in enumerate(CATEGORIES)}
    names.sort(key=lambda fn: order[fn.category])
    return tuple(names)


def feature_names(
    config: SegmentConfig = SegmentConfig(), quantiles: tuple[float, ...] = DEV_QUANTILES
) -> tuple[FeatureName, ...]:
    """The full ordered feature registry for one segment configuration."""
    return _feature_names_cached(tuple(config.lengths), tuple(quantiles))


# ---------------------------------------------------------------------------
# Feature matrix
# ---------------------------------------------------------------------------


@dataclass
class FeatureMatrix:
    """Named n x p matrix of movement feature values; NaN marks missing."""

    rows: tuple[MovementMeta, ...]
    columns: tuple[FeatureName, ...]
    values: np.ndarray

    def __post_init__(self):
        self.rows = tuple(self.rows)
        self.columns = tuple(self.columns)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.rows), len(self.columns)):
            raise ValueError(
                f"value shape {self.values.shape} does not match "
                f"{len(self.rows)} rows x {len(self.columns)} columns"
            )
        labels = self.labels
        if len(set(labels)) != len(labels):
            raise ValueError("duplicated feature names")

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.columns)

    @property
    def mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def column_index(self, label: str) -> int:
        by_label = getattr(self, "_label_index", None)
        if by_label is None:
            by_label = {lbl: j for j, lbl in enumerate(self.labels)}
            object.__setattr__(self, "_label_index", by_label)
        try:
            return by_label[label]
        except KeyError:
            raise KeyError(f"no feature column {label!r}") from None

    def select_columns(self, indices) -> "FeatureMatrix":
        indices = list(indices)
        return FeatureMatrix(
            rows=self.rows,
            columns=tuple(self.columns[j] for j in indices),
            values=self.values[:, indices].copy(),
        )

    def select_rows(self, indices) -> "FeatureMatrix":
        indices = list(indices)
        return FeatureMatrix(
            rows=tuple(self.rows[i] for i in indices),
            columns=self.columns,
            values=self.values[indices, :].copy(),
        )

    def category_indices(self, categories) -> list[int]:
        wanted = set(categories)
        return [j for j, c in enumerate(self.columns) if c.category in wanted]

    def labels_of_category(self, category: str) -> list[str]:
        return [c.label for c in self.columns if c.category == category]

    def to_csv(self, features_path, meta_path) -> None:
        with open(features_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source_path", *self.labels])
            for meta, row in zip(self.rows, self.values):
                writer.writerow(
                    [meta.source_path] + [_format_value(x) for x in row]
                )
        with open(meta_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source_path", "composer", "quartet_id", "set_id", "movement_number"])
            for meta in self.rows:
                writer.writerow(
                    [
                        meta.source_path,
                        int(meta.composer),
                        meta.quartet_id,
                        meta.set_id,
                        meta.movement_number,
                    ]
                )

    @classmethod
    def from_csv(cls, features_path, meta_path) -> "FeatureMatrix":
        metas: dict[str, MovementMeta] = {}
        with open(meta_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                meta = MovementMeta(
                    composer=Composer(int(row["composer"])),
                    quartet_id=row["quartet_id"],
                    set_id=row.get("set_id", ""),
                    movement_number=int(row["movement_number"]),
                    source_path=row["source_path"],
                )
                metas[meta.source_path] = meta
        with open(features_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0] != "source_path":
                raise ValueError("feature CSV must start with a source_path column")
            columns = tuple(parse_label(lbl) for lbl in header[1:])
            rows: list[MovementMeta] = []
            data: list[list[float]] = []
            for rec in reader:
                path = rec[0]
                if path not in metas:
                    raise ValueError(f"feature row {path!r} missing from metadata sidecar")
                rows.append(metas[path])
                data.append([float(x) if x != "" else float("nan") for x in rec[1:]])
        return cls(rows=tuple(rows), columns=columns, values=np.array(data, dtype=float))


def _format_value(x: float) -> str:
    if np.isnan(x):
        return ""
    return f"{x:.12g}"


# ---------------------------------------------------------------------------
# Per-voice preparation
# ---------------------------------------------------------------------------


@dataclass
class _VoiceData:
    pcs: np.ndarray  # pitch classes 1..12, rests removed
    abs_pitch: np.ndarray  # absolute pitches 1..132
    dur_float: np.ndarray
    dur_codes: np.ndarray  # integer codes, equal exact durations share a code
    dur_num: np.ndarray  # integer numerators over the voice's common denominator
    dur_den: int

    @property
    def m_notes(self) -> int:
        return len(self.pcs)


def _voice_data(movement: EncodedMovement) -> dict[str, _VoiceData]:
    out = {}
    for track in movement.voices:
        durations = note_sequence(track, "duration")
        code_of: dict[Fraction, int] = {}
        codes = np.array(
            [code_of.setdefault(d, len(code_of)) for d in durations], dtype=np.int64
        )
        den = math.lcm(*(d.denominator for d in durations)) if durations else 1
        nums = [int(d * den) for d in durations]
        if nums and max(abs(k) for k in nums) > 1 << 20:
            # degenerate tuplet denominators; exact variance would overflow
            logger.warning("huge duration denominators; development sds lose exactness")
            den = 0
            nums = [0] * len(durations)
        out[track.voice.value] = _VoiceData(
            pcs=np.array(note_sequence(track, "pitch_class"), dtype=np.int64),
            abs_pitch=np.array(note_sequence(track, "absolute_pitch"), dtype=np.int64),
            dur_float=np.array([float(d) for d in durations], dtype=float),
            dur_codes=codes,
            dur_num=np.array(nums, dtype=np.int64),
            dur_den=den,
        )
    return out


def _exact_window_sd(windows: np.ndarray, denominator: int = 1) -> np.ndarray:
    """Sample sd per integer window via the exact variance identity.

    The variance of k/denominator values is (m * sum(k^2) - (sum k)^2)
    over (denominator^2 * m * (m - 1)); computing it in integers makes the
    result bitwise identical for any reordering of equal value multisets,
    so location tie-breaking is exact.
    """
    m = windows.shape[1]
    s1 = windows.sum(axis=1, dtype=np.int64)
    s2 = (windows.astype(np.int64) ** 2).sum(axis=1)
    num = m * s2 - s1**2
    den = denominator * denominator * m * (m - 1)
    return np.sqrt(num / den)


def _sliding(arr: np.ndarray, m: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(arr, m)


def _relative_windows(pcs: np.ndarray, m: int) -> np.ndarray:
    """Windows of pitch classes, each re-expressed relative to its first note."""
    w = _sliding(pcs, m)
    return (w - w[:, :1]) % 12 + 1


def _sd(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float("nan")
    return float(np.std(x, ddof=1))


# ---------------------------------------------------------------------------
# Basic summary features (22)
# ---------------------------------------------------------------------------


def basic_summary(movement: EncodedMovement) -> dict[str, float]:
    """Per-voice note counts and duration/pitch summaries plus the two
    all-four-voices simultaneity proportions."""
    feats: dict[str, float] = {}
    for track in movement.voices:
        v = track.voice.value
        notes = [e for e in track.events if not e.is_rest]
        if not notes:
            raise EmptyVoice(f"voice {v} has no notes")
        durs = [float(e.duration) for e in notes]
        pcs = [e.pitch_class for e in notes]
        feats[f"basic|note_count|{v}"] = float(len(notes))
        feats[f"basic|mean_duration|{v}"] = float(np.mean(durs))
        feats[f"basic|sd_duration|{v}"] = _sd(durs)
        feats[f"basic|mean_pitch|{v}"] = float(np.mean(pcs))
        feats[f"basic|sd_pitch|{v}"] = _sd(pcs)

    grid = onset_grid(movement)
    starts = [dict(pairs) for pairs in grid.values()]
    all_onsets = set()
    for d in starts:
        all_onsets.update(d)
    n_onsets = len(all_onsets)
    all_note = sum(
        1 for t in all_onsets if all(t in d and not d[t] for d in starts)
    )
    all_rest = sum(1 for t in all_onsets if all(t in d and d[t] for d in starts))
    feats["basic|simultaneous_notes"] = all_note / n_onsets if n_onsets else float("nan")
    feats["basic|simultaneous_rests"] = all_rest / n_onsets if n_onsets else float("nan")
    return feats


# ---------------------------------------------------------------------------
# Interval features (392 = 176 pairwise + 216 minor-third segment)
# ---------------------------------------------------------------------------


def pairwise_interval_features(
    movement: EncodedMovement, signed_differences: bool = True
) -> dict[str, float]:
    """Consecutive-note interval features on the full 1..132 pitch scale.

    Per voice: the 12 interval-class proportions, 3 sign proportions,
    4 mode proportions and the mean/sd of semitone and duration steps;
    per voice pair, differences of the semitone summaries and of the class
    proportions.  Voices with fewer than two notes are missing-masked.
    """
    feats: dict[str, float] = {}
    stats: dict[str, dict | None] = {}
    data = _voice_data(movement)
    for v in VOICE_LABELS:
        vd = data[v]
        if vd.m_notes < 2:
            stats[v] = None
            for c in range(12):
                feats[f"interval|class_{c}|{v}"] = float("nan")
            for s in SIGN_LABELS:
                feats[f"interval|sign_{s}|{v}"] = float("nan")
            for mode in MODE_LABELS:
                feats[f"interval|mode_{mode}|{v}"] = float("nan")
            for desc in ("mean_semitone", "sd_semitone", "mean_duration_diff", "sd_duration_diff"):
                feats[f"interval|{desc}|{v}"] = float("nan")
            continue
        steps = np.diff(vd.abs_pitch)
        dur_steps = np.diff(vd.dur_float)
        if not signed_differences:
            steps_stat, dur_stat = np.abs(steps), np.abs(dur_steps)
        else:
            steps_stat, dur_stat = steps, dur_steps
        classes = np.abs(steps) % 12
        class_props = np.bincount(classes, minlength=12) / len(classes)
        mode_props = np.zeros(4)
        for c in range(12):
            mode_props[MODE_OF_CLASS[c]] += class_props[c]
        sem_mean = float(np.mean(steps_stat))
        sem_sd = _sd(steps_stat)
        for c in range(12):
            feats[f"interval|class_{c}|{v}"] = float(class_props[c])
        feats[f"interval|sign_ascending|{v}"] = float(np.mean(steps > 0))
        feats[f"interval|sign_descending|{v}"] = float(np.mean(steps < 0))
        feats[f"interval|sign_constant|{v}"] = float(np.mean(steps == 0))
        for mi, mode in enumerate(MODE_LABELS):
            feats[f"interval|mode_{mode}|{v}"] = float(mode_props[mi])
        feats[f"interval|mean_semitone|{v}"] = sem_mean
        feats[f"interval|sd_semitone|{v}"] = sem_sd
        feats[f"interval|mean_duration_diff|{v}"] = float(np.mean(dur_stat))
        feats[f"interval|sd_duration_diff|{v}"] = _sd(dur_stat)
        stats[v] = {"class_props": class_props, "sem_mean": sem_mean, "sem_sd": sem_sd}

    for a, b in VOICE_PAIRS:
        pair = f"{a}-{b}"
        sa, sb = stats[a], stats[b]
        if sa is None or sb is None:
            feats[f"interval|pair_mean_semitone|{pair}"] = float("nan")
            feats[f"interval|pair_sd_semitone|{pair}"] = float("nan")
            for c in range(12):
                feats[f"interval|pair_class_{c}|{pair}"] = float("nan")
            continue
        feats[f"interval|pair_mean_semitone|{pair}"] = sa["sem_mean"] - sb["sem_mean"]
        feats[f"interval|pair_sd_semitone|{pair}"] = sa["sem_sd"] - sb["sem_sd"]
        for c in range(12):
            feats[f"interval|pair_class_{c}|{pair}"] = float(
                sa["class_props"][c] - sb["class_props"][c]
            )
    return feats


def minor_third_segment_features(
    movement: EncodedMovement, config: SegmentConfig = SegmentConfig()
) -> dict[str, float]:
    """Summary statistics of per-segment minor-third proportions.

    Within each length-m window the proportion of notes at a 3-semitone
    class distance from the window's first note, summarised by seven order
    statistics plus counts of all-zero and high-proportion segments.
    """
    feats: dict[str, float] = {}
    data = _voice_data(movement)
    for v in VOICE_LABELS:
        ap = data[v].abs_pitch
        for m in config.lengths:
            base = f"|{v}|m={m}"
            if len(ap) < m:
                for desc in _MINOR3_DESCRIPTORS:
                    feats[f"interval|{desc}{base}"] = float("nan")
                continue
            w = _sliding(ap, m)
            counts = (np.abs(w[:, 1:] - w[:, :1]) % 12 == 3).sum(axis=1)
            props = counts / (m - 1)
            feats[f"interval|minor3_min{base}"] = float(props.min())
            feats[f"interval|minor3_q1{base}"] = float(np.percentile(props, 25))
            feats[f"interval|minor3_median{base}"] = float(np.percentile(props, 50))
            feats[f"interval|minor3_q3{base}"] = float(np.percentile(props, 75))
            feats[f"interval|minor3_max{base}"] = float(props.max())
            feats[f"interval|minor3_mean{base}"] = float(props.mean())
            feats[f"interval|minor3_sd{base}"] = _sd(props)
            feats[f"interval|minor3_count_zero{base}"] = float((counts == 0).sum())
            high = MINOR_THIRD_HIGH
            feats[f"interval|minor3_count_high{base}"] = float(
                (counts * high.denominator >= high.numerator * (m - 1)).sum()
            )
    return feats


# ---------------------------------------------------------------------------
# Sonata-style overlap features (exposition 240, recapitulation 240)
# ---------------------------------------------------------------------------


def _track_windows(vd: _VoiceData, track: str, m: int) -> np.ndarray | None:
    seq = vd.pcs if track == "pitch" else vd.dur_codes
    if len(seq) < m:
        return None
    if track == "pitch":
        return _relative_windows(seq, m)
    return _sliding(seq, m)


def _overlap_stats(wmat: np.ndarray, last_start: int) -> dict[str, float] | None:
    """Overlap of the opening window against windows starting at 2..last_start.

    Ties on the maximum take the later segment.  Counts compare the exact
    match fraction against the OVERLAP_THRESHOLDS.
    """
    total, m = wmat.shape
    if last_start < 2:
        return None
    matches = (wmat[1:last_start] == wmat[0]).sum(axis=1)
    best = int(matches.max())
    pos = int(np.nonzero(matches == best)[0][-1])
    out = {
        "max_overlap": best / m,
        "max_location": (pos + 2) / total,
    }
    for t in OVERLAP_THRESHOLDS:
        out[f"count_t{float(t):g}"] = float(
            (matches * t.denominator >= t.numerator * m).sum()
        )
    return out


_OVERLAP_DESCS = ("max_overlap", "max_location", "count_t0.7", "count_t0.9", "count_t1")


def exposition_features(
    movement: EncodedMovement, config: SegmentConfig = SegmentConfig()
) -> dict[str, float]:
    """Overlap of the opening segment against segments in the first half.

    The first half covers segments starting at or before ceil(M/2); a voice
    needs at least two segments there, otherwise its cells are masked.
    """
    feats: dict[str, float] = {}
    data = _voice_data(movement)
    for v in VOICE_LABELS:
        vd = data[v]
        half = (vd.m_notes + 1) // 2
        for m in config.lengths:
            for track in TRACKS:
                base = f"|{track}|{v}|m={m}"
                wmat = _track_windows(vd, track, m)
                stats = None
                if wmat is not None:
                    stats = _overlap_stats(wmat, min(half, wmat.shape[0]))
                for desc in _OVERLAP_DESCS:
                    feats[f"exposition|{desc}{base}"] = (
                        stats[desc] if stats is not None else float("nan")
                    )
    return feats


def recapitulation_features(
    movement: EncodedMovement, config: SegmentConfig = SegmentConfig()
) -> dict[str, float]:
    """Overlap of the opening segment against all subsequent segments."""
    feats: dict[str, float] = {}
    data = _voice_data(movement)
    for v in VOICE_LABELS:
        vd = data[v]
        for m in config.lengths:
            for track in TRACKS:
                base = f"|{track}|{v}|m={m}"
                wmat = _track_windows(vd, track, m)
                stats = None
                if wmat is not None:
                    stats = _overlap_stats(wmat, wmat.shape[0])
                for desc in _OVERLAP_DESCS:
                    feats[f"recapitulation|{desc}{base}"] = (
                        stats[desc] if stats is not None else float("nan")
                    )
    return feats


# ---------------------------------------------------------------------------
# Development features (288) and their corpus-level thresholds
# ---------------------------------------------------------------------------


def _dev_window_sds(vd: _VoiceData, track: str, m: int) -> np.ndarray | None:
    """Per-window standard deviations for the development feature family."""
    if track == "pitch":
        if len(vd.pcs) < m:
            return None
        return _exact_window_sd(_relative_windows(vd.pcs, m))
    if len(vd.dur_float) < m:
        return None
    if vd.dur_den:
        return _exact_window_sd(_sliding(vd.dur_num, m), vd.dur_den)
    return _sliding(vd.dur_float, m).std(axis=1, ddof=1)


@dataclass(frozen=True)
class DevelopmentThresholds:
    """Thresholds s(q) per (voice, segment length, track), ordered by quantile."""

    quantiles: tuple[float, ...]
    table: dict

    def get(self, voice: str, m: int, track: str) -> tuple[float, ...]:
        return self.table[(voice, m, track)]

    def to_json(self) -> dict:
        out: dict = {}
        for (voice, m, track), vals in sorted(self.table.items(), key=lambda kv: str(kv[0])):
            out.setdefault(track, {}).setdefault(str(m), {})[voice] = {
                f"{q:.2f}": v for q, v in zip(self.quantiles, vals)
            }
        return {"quantiles": [f"{q:.2f}" for q in self.quantiles], "thresholds": out}

    @classmethod
    def from_json(cls, payload: dict) -> "DevelopmentThresholds":
        quantiles = tuple(float(q) for q in payload["quantiles"])
        table = {}
        for track, by_m in payload["thresholds"].items():
            for m, by_voice in by_m.items():
                for voice, by_q in by_voice.items():
                    table[(voice, int(m), track)] = tuple(
                        float(by_q[f"{q:.2f}"]) for q in quantiles
                    )
        return cls(quantiles=quantiles, table=table)


@dataclass
class DevelopmentSdPool:
    """Per-movement window standard deviations, pooled for threshold setting.

    Rows align with the corpus used to build the pool; this is what allows
    recomputing thresholds on training folds only (leakage-audit mode).
    """

    lengths: tuple[int, ...]
    quantiles: tuple[float, ...]
    sds: dict  # (voice, m, track) -> list of per-movement float arrays

    @property
    def n(self) -> int:
        return len(next(iter(self.sds.values())))

    def thresholds(self, rows=None, reading: str = "prose") -> DevelopmentThresholds:
        if reading not in THRESHOLD_READINGS:
            raise ValueError(f"reading must be one of {THRESHOLD_READINGS}")
        if rows is None:
            rows = range(self.n)
        rows = list(rows)
        table = {}
        for key, arrays in self.sds.items():
            vals, wts = [], []
            for i in rows:
                a = arrays[i]
                if a.size:
                    vals.append(a)
                    wts.append(np.full(a.size, 1.0 / a.size))
            if not vals:
                table[key] = tuple(float("nan") for _ in self.quantiles)
                continue
            v = np.concatenate(vals)
            w = np.concatenate(wts)
            if reading == "prose":
                # weighted quantile of the raw sd values, weights 1/(M_i - m + 1)
                order = np.argsort(v, kind="stable")
                sv, sw = v[order].tolist(), w[order].tolist()
                table[key] = tuple(
                    float(weighted_quantile(sv, sw, q)) for q in self.quantiles
                )
            else:
                # literal reading: plain quantile of the scaled values
                table[key] = tuple(
                    float(np.percentile(v * w, 100.0 * q)) for q in self.quantiles
                )
        return DevelopmentThresholds(quantiles=self.quantiles, table=table)

    def count_labels(self) -> list[str]:
        return [
            f"development|count_q{q:.2f}|{track}|{v}|m={m}"
            for v in VOICE_LABELS
            for m in self.lengths
            for track in TRACKS
            for q in self.quantiles
        ]

    def count_columns(self, thresholds: DevelopmentThresholds) -> np.ndarray:
        """Threshold-count feature block for all pooled movements."""
        labels = self.count_labels()
        out = np.full((self.n, len(labels)), np.nan)
        col = 0
        for v in VOICE_LABELS:
            for m in self.lengths:
                for track in TRACKS:
                    thr = thresholds.get(v, m, track)
                    arrays = self.sds[(v, m, track)]
                    for qi in range(len(self.quantiles)):
                        if not np.isnan(thr[qi]):
                            for i, a in enumerate(arrays):
                                if a.size:
                                    out[i, col + qi] = float((a >= thr[qi]).sum())
                    col += len(self.quantiles)
        return out


def build_development_pool(
    corpus,
    config: SegmentConfig = SegmentConfig(),
    quantiles: tuple[float, ...] = DEV_QUANTILES,
) -> DevelopmentSdPool:
    sds: dict = {
        (v, m, track): []
        for v in VOICE_LABELS
        for m in config.lengths
        for track in TRACKS
    }
    for movement in corpus:
        data = _voice_data(movement)
        for v in VOICE_LABELS:
            for m in config.lengths:
                for track in TRACKS:
                    arr = _dev_window_sds(data[v], track, m)
                    sds[(v, m, track)].append(
                        arr if arr is not None else np.empty(0, dtype=float)
                    )
    return DevelopmentSdPool(lengths=tuple(config.lengths), quantiles=tuple(quantiles), sds=sds)


def compute_development_thresholds(
    corpus,
    config: SegmentConfig = SegmentConfig(),
    quantiles: tuple[float, ...] = DEV_QUANTILES,
    reading: str = "prose",
) -> DevelopmentThresholds:
    """Pool window standard deviations over the whole corpus and take the
    weighted quantiles that become the development count thresholds."""
    if not corpus:
        raise ValueError("corpus is empty")
    return build_development_pool(corpus, config, quantiles).thresholds(reading=reading)


def development_features(
    movement: EncodedMovement,
    thresholds: DevelopmentThresholds,
    config: SegmentConfig = SegmentConfig(),
) -> dict[str, float]:
    """Within-window variability features.

    Per voice, window length and track: the maximum window standard
    deviation, its location (ties take the first occurrence) and counts of
    windows at or above each quantile threshold.
    """
    feats: dict[str, float] = {}
    data = _voice_data(movement)
    for v in VOICE_LABELS:
        vd = data[v]
        for m in config.lengths:
            for track in TRACKS:
                base = f"|{track}|{v}|m={m}"
                sds = _dev_window_sds(vd, track, m)
                if sds is None:
                    feats[f"development|max_sd{base}"] = float("nan")
                    feats[f"development|max_location{base}"] = float("nan")
                    for q in thresholds.quantiles:
                        feats[f"development|count_q{q:.2f}{base}"] = float("nan")
                    continue
                total = len(sds)
                pos = int(np.argmax(sds))  # first occurrence on ties
                feats[f"development|max_sd{base}"] = float(sds[pos])
                feats[f"development|max_location{base}"] = (pos + 1) / total
                thr = thresholds.get(v, m, track)
                for qi, q in enumerate(thresholds.quantiles):
                    feats[f"development|count_q{q:.2f}{base}"] = (
                        float((sds >= thr[qi]).sum())
                        if not np.isnan(thr[qi])
                        else float("nan")
                    )
    return feats


# ---------------------------------------------------------------------------
# Corpus assembly and filtering
# ---------------------------------------------------------------------------


def movement_features(
    movement: EncodedMovement,
    thresholds: DevelopmentThresholds,
    config: SegmentConfig = SegmentConfig(),
    signed_differences: bool = True,
) -> dict[str, float]:
    """All features of one movement, keyed by canonical label."""
    feats = basic_summary(movement)
    feats.update(pairwise_interval_features(movement, signed_differences))
    feats.update(minor_third_segment_features(movement, config))
    feats.update(exposition_features(movement, config))
    feats.update(development_features(movement, thresholds, config))
    feats.update(recapitulation_features(movement, config))
    return feats


def extract_all(
    corpus,
    config: SegmentConfig = SegmentConfig(),
    *,
    thresholds: DevelopmentThresholds | None = None,
    threshold_reading: str = "prose",
    signed_differences: bool = True,
    quantiles: tuple[float, ...] = DEV_QUANTILES,
) -> FeatureMatrix:
    """Assemble the corpus feature matrix.

    A two-pass computation: development thresholds are pooled over the whole
    corpus first, then every movement's features are evaluated against them.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus is empty")
    if any(m.meta is None for m in corpus):
        raise ValueError("every movement needs metadata for matrix assembly")
    if thresholds is None:
        thresholds = compute_development_thresholds(
            corpus, config, quantiles, reading=threshold_reading
        )
    names = feature_names(config, quantiles)
    labels = [fn.label for fn in names]
    values = np.empty((len(corpus), len(labels)))
    for i, movement in enumerate(corpus):
        feats = movement_features(movement, thresholds, config, signed_differences)
        if set(feats) != set(labels):
            raise AssertionError("computed features do not match the registry")
        values[i] = [feats[lbl] for lbl in labels]
    return FeatureMatrix(
        rows=tuple(m.meta for m in corpus), columns=names, values=values
    )


def near_zero_variance_filter(
    matrix: FeatureMatrix, freq_cut: float = 95.0 / 5.0, unique_cut: float = 10.0
) -> FeatureMatrix:
    """Drop columns with (near-)zero variability and columns with missing values.

    A column is near-zero-variance when the frequency ratio of its most
    common to second most common value reaches freq_cut and the percentage
    of unique values is below unique_cut, or when it is constant.
    """
    if matrix.n < 2:
        raise ValueError("variance filtering needs at least two rows")
    keep: list[int] = []
    for j in range(matrix.p):
        col = matrix.values[:, j]
        if np.isnan(col).any():
            continue
        counts = Counter(col.tolist())
        if len(counts) <= 1:
            continue
        (_, c1), (_, c2) = counts.most_common(2)
        freq_ratio = c1 / c2
        pct_unique = 100.0 * len(counts) / matrix.n
        if freq_ratio >= freq_cut and pct_unique < unique_cut:
            continue
        keep.append(j)
    return matrix.select_columns(keep)
