"""Brute-force reference computations the feature tests check against.

Everything here recomputes feature definitions directly with plain loops,
independently of the library's vectorized implementations.
"""

import math
from fractions import Fraction

import numpy as np

MODE_OF_CLASS = (0, 1, 2, 1, 2, 0, 3, 0, 1, 2, 1, 2)
MODE_LABELS = ("perfect", "minor", "major", "dimaug")
VOICES = ("Violin1", "Violin2", "Viola", "Cello")
PAIRS = (
    ("Violin1", "Violin2"),
    ("Violin1", "Viola"),
    ("Violin1", "Cello"),
    ("Violin2", "Viola"),
    ("Violin2", "Cello"),
    ("Viola", "Cello"),
)


def notes_of(movement, voice):
    track = [t for t in movement.voices if t.voice.value == voice][0]
    return [e for e in track.events if not e.is_rest]


def mean(xs):
    return math.fsum(xs) / len(xs)


def sample_sd(xs):
    if len(xs) < 2:
        return float("nan")
    mu = mean(xs)
    return math.sqrt(math.fsum((x - mu) ** 2 for x in xs) / (len(xs) - 1))


def rel_transform(values):
    return [(v - values[0]) % 12 + 1 for v in values]


def basic_summary_oracle(movement):
    out = {}
    for v in VOICES:
        notes = notes_of(movement, v)
        durs = [float(e.duration) for e in notes]
        pcs = [e.pitch_class for e in notes]
        out[f"basic|note_count|{v}"] = float(len(notes))
        out[f"basic|mean_duration|{v}"] = mean(durs)
        out[f"basic|sd_duration|{v}"] = sample_sd(durs)
        out[f"basic|mean_pitch|{v}"] = mean(pcs)
        out[f"basic|sd_pitch|{v}"] = sample_sd(pcs)
    starts = []
    for track in movement.voices:
        starts.append({e.onset: e.is_rest for e in track.events})
    union = set()
    for d in starts:
        union |= set(d)
    all_note = sum(1 for t in union if all(t in d and not d[t] for d in starts))
    all_rest = sum(1 for t in union if all(t in d and d[t] for d in starts))
    out["basic|simultaneous_notes"] = all_note / len(union)
    out["basic|simultaneous_rests"] = all_rest / len(union)
    return out


def pairwise_oracle(movement, signed=True):
    out = {}
    per = {}
    for v in VOICES:
        notes = notes_of(movement, v)
        ap = [e.absolute_pitch for e in notes]
        du = [float(e.duration) for e in notes]
        if len(ap) < 2:
            per[v] = None
            continue
        steps = [b - a for a, b in zip(ap, ap[1:])]
        dsteps = [b - a for a, b in zip(du, du[1:])]
        if not signed:
            steps_stat = [abs(s) for s in steps]
            dsteps_stat = [abs(s) for s in dsteps]
        else:
            steps_stat, dsteps_stat = steps, dsteps
        n = len(steps)
        cls = [abs(s) % 12 for s in steps]
        cls_prop = [sum(1 for c in cls if c == k) / n for k in range(12)]
        for k in range(12):
            out[f"interval|class_{k}|{v}"] = cls_prop[k]
        out[f"interval|sign_ascending|{v}"] = sum(1 for s in steps if s > 0) / n
        out[f"interval|sign_descending|{v}"] = sum(1 for s in steps if s < 0) / n
        out[f"interval|sign_constant|{v}"] = sum(1 for s in steps if s == 0) / n
        for mi, lbl in enumerate(MODE_LABELS):
            out[f"interval|mode_{lbl}|{v}"] = sum(
                cls_prop[k] for k in range(12) if MODE_OF_CLASS[k] == mi
            )
        out[f"interval|mean_semitone|{v}"] = mean(steps_stat)
        out[f"interval|sd_semitone|{v}"] = sample_sd(steps_stat)
        out[f"interval|mean_duration_diff|{v}"] = mean(dsteps_stat)
        out[f"interval|sd_duration_diff|{v}"] = sample_sd(dsteps_stat)
        per[v] = (cls_prop, out[f"interval|mean_semitone|{v}"], out[f"interval|sd_semitone|{v}"])
    for a, b in PAIRS:
        pair = f"{a}-{b}"
        if per.get(a) is None or per.get(b) is None:
            continue
        pa, pb = per[a], per[b]
        out[f"interval|pair_mean_semitone|{pair}"] = pa[1] - pb[1]
        out[f"interval|pair_sd_semitone|{pair}"] = pa[2] - pb[2]
        for k in range(12):
            out[f"interval|pair_class_{k}|{pair}"] = pa[0][k] - pb[0][k]
    return out


def minor3_oracle(movement, lengths):
    out = {}
    for v in VOICES:
        ap = [e.absolute_pitch for e in notes_of(movement, v)]
        for m in lengths:
            base = f"|{v}|m={m}"
            if len(ap) < m:
                continue
            counts = []
            for s in range(len(ap) - m + 1):
                win = ap[s : s + m]
                counts.append(sum(1 for x in win[1:] if abs(x - win[0]) % 12 == 3))
            props = [c / (m - 1) for c in counts]
            out[f"interval|minor3_min{base}"] = min(props)
            out[f"interval|minor3_q1{base}"] = float(np.percentile(props, 25))
            out[f"interval|minor3_median{base}"] = float(np.percentile(props, 50))
            out[f"interval|minor3_q3{base}"] = float(np.percentile(props, 75))
            out[f"interval|minor3_max{base}"] = max(props)
            out[f"interval|minor3_mean{base}"] = mean(props)
            out[f"interval|minor3_sd{base}"] = sample_sd(props)
            out[f"interval|minor3_count_zero{base}"] = float(sum(1 for c in counts if c == 0))
            out[f"interval|minor3_count_high{base}"] = float(
                sum(1 for c in counts if Fraction(c, m - 1) >= Fraction(3, 5))
            )
    return out


def _overlap_oracle(windows_list, last_start, m):
    """Opening window vs windows starting 2..last_start; ties take the later one."""
    if last_start < 2:
        return None
    opening = windows_list[0]
    fracs = []
    for s in range(2, last_start + 1):
        win = windows_list[s - 1]
        fracs.append(Fraction(sum(1 for a, b in zip(opening, win) if a == b), m))
    best = max(fracs)
    best_start = max(s for s, f in zip(range(2, last_start + 1), fracs) if f == best)
    total = len(windows_list)
    return {
        "max_overlap": float(best),
        "max_location": best_start / total,
        "count_t0.7": float(sum(1 for f in fracs if f >= Fraction(7, 10))),
        "count_t0.9": float(sum(1 for f in fracs if f >= Fraction(9, 10))),
        "count_t1": float(sum(1 for f in fracs if f >= 1)),
    }


def _voice_windows(movement, voice, track, m):
    notes = notes_of(movement, voice)
    if track == "pitch":
        seq = [e.pitch_class for e in notes]
    else:
        seq = [e.duration for e in notes]  # exact Fractions
    if len(seq) < m:
        return None
    wins = [seq[s : s + m] for s in range(len(seq) - m + 1)]
    if track == "pitch":
        wins = [rel_transform(w) for w in wins]
    return wins


def exposition_oracle(movement, lengths):
    out = {}
    for v in VOICES:
        n_notes = len(notes_of(movement, v))
        half = (n_notes + 1) // 2
        for m in lengths:
            for track in ("pitch", "duration"):
                wins = _voice_windows(movement, v, track, m)
                if wins is None:
                    continue
                stats = _overlap_oracle(wins, min(half, len(wins)), m)
                if stats is None:
                    continue
                for k, val in stats.items():
                    out[f"exposition|{k}|{track}|{v}|m={m}"] = val
    return out


def recapitulation_oracle(movement, lengths):
    out = {}
    for v in VOICES:
        for m in lengths:
            for track in ("pitch", "duration"):
                wins = _voice_windows(movement, v, track, m)
                if wins is None:
                    continue
                stats = _overlap_oracle(wins, len(wins), m)
                if stats is None:
                    continue
                for k, val in stats.items():
                    out[f"recapitulation|{k}|{track}|{v}|m={m}"] = val
    return out


def exact_sample_sd(values):
    """Sample sd of exact (int or Fraction) values: sqrt of the exact variance."""
    m = len(values)
    s1 = sum(values)
    s2 = sum(x * x for x in values)
    var = (m * s2 - s1 * s1) / (m * (m - 1))  # exact until the final conversion
    return math.sqrt(var)


def development_oracle(movement, thresholds, lengths):
    out = {}
    for v in VOICES:
        notes = notes_of(movement, v)
        for m in lengths:
            for track in ("pitch", "duration"):
                base = f"|{track}|{v}|m={m}"
                if track == "pitch":
                    seq = [e.pitch_class for e in notes]
                else:
                    seq = [e.duration for e in notes]  # exact Fractions
                if len(seq) < m:
                    continue
                sds = []
                for s in range(len(seq) - m + 1):
                    win = seq[s : s + m]
                    if track == "pitch":
                        win = rel_transform(win)
                    sds.append(exact_sample_sd(win))
                best = max(sds)
                first = min(i for i, x in enumerate(sds) if x == best)
                out[f"development|max_sd{base}"] = best
                out[f"development|max_location{base}"] = (first + 1) / len(sds)
                thr = thresholds.get(v, m, track)
                for qi, q in enumerate(thresholds.quantiles):
                    out[f"development|count_q{q:.2f}{base}"] = float(
                        sum(1 for x in sds if x >= thr[qi])
                    )
    return out


def weighted_quantile_oracle(values, weights, q):
    """Prefix-sum scan for the lower weighted quantile."""
    pairs = sorted(zip(values, weights), key=lambda p: p[0])
    total = math.fsum(w for _, w in pairs)
    acc = 0.0
    i = 0
    while i < len(pairs):
        v = pairs[i][0]
        while i < len(pairs) and pairs[i][0] == v:
            acc += pairs[i][1]
            i += 1
        if acc / total >= q:
            return v
    return pairs[-1][0]
