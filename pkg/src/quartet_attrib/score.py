"""**kern score parsing into per-voice pitch and duration tracks.

A movement is represented as four monophonic voices in the fixed order
Violin 1, Violin 2, Viola, Cello.  Each voice is a sequence of events
carrying an absolute pitch (1..132, middle C = 49), a pitch class
(1..12 with 1 = C, 0 for rests) and a duration expressed as the exact
fraction of one bar under the meter in force at the event's bar.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from fractions import Fraction
from pathlib import Path

logger = logging.getLogger(__name__)

# Absolute pitch of C4.  The 1..132 range spans C0..B10 (11 octaves); only
# differences and mod-12 classes are consumed downstream, so any affine
# semitone mapping would do, but this constant is fixed for reproducibility.
MIDDLE_C = 49


class Composer(IntEnum):
    """Class labels used throughout: Mozart = 0, Haydn = 1."""

    MOZART = 0
    HAYDN = 1


class Voice(Enum):
    VIOLIN1 = "Violin1"
    VIOLIN2 = "Violin2"
    VIOLA = "Viola"
    CELLO = "Cello"


#: Fixed voice order of EncodedMovement.voices.
VOICE_ORDER = (Voice.VIOLIN1, Voice.VIOLIN2, Voice.VIOLA, Voice.CELLO)


class KernError(ValueError):
    """Base class for **kern parsing failures."""


class MalformedKern(KernError):
    """Unparseable token or spine structure."""


class WrongVoiceCount(KernError):
    """File does not contain exactly four note-bearing spines."""


class MissingMeter(KernError):
    """A note or rest appears before any time signature."""


@dataclass(frozen=True)
class MovementMeta:
    composer: Composer
    quartet_id: str
    movement_number: int
    set_id: str = ""
    source_path: str = ""

    def __post_init__(self):
        if int(self.composer) not in (0, 1):
            raise ValueError(f"composer label must be 0 or 1, got {self.composer}")
        if self.movement_number < 1:
            raise ValueError("movement_number must be >= 1")


@dataclass(frozen=True)
class Event:
    absolute_pitch: int  # 0 for rests
    pitch_class: int  # 0 for rests, else 1..12 (1 = C)
    duration: Fraction  # fraction of one bar; merged ties may exceed 1
    bar_index: int
    onset: Fraction  # bar index plus within-bar offset at the event start

    @property
    def is_rest(self) -> bool:
        return self.absolute_pitch == 0


@dataclass(frozen=True)
class VoiceTrack:
    voice: Voice
    events: tuple[Event, ...]


@dataclass(frozen=True)
class EncodedMovement:
    meta: MovementMeta | None
    voices: tuple[VoiceTrack, VoiceTrack, VoiceTrack, VoiceTrack]

    def __post_init__(self):
        if len(self.voices) != 4:
            raise ValueError("a movement holds exactly four voices")
        got = tuple(t.voice for t in self.voices)
        if got != VOICE_ORDER:
            raise ValueError(f"voices must be ordered {VOICE_ORDER}, got {got}")

    def voice(self, voice: Voice) -> VoiceTrack:
        return self.voices[VOICE_ORDER.index(voice)]


# ---------------------------------------------------------------------------
# Token-level parsing
# ---------------------------------------------------------------------------

_METER_RE = re.compile(r"^\*M(\d+)/(\d+)")
_DUR_RE = re.compile(r"(\d+)(?:%(\d+))?(\.*)")
_PITCH_RE = re.compile(r"([a-gA-G]+)(#+|-+|n)?")

_PC_BASE = {"c": 0, "d": 2, "e": 4, "f": 5, "g": 7, "a": 9, "b": 11}


def pitch_class_of(absolute_pitch: int) -> int:
    """Map an absolute pitch (1..132) to its pitch class (1..12); 0 stays 0."""
    if absolute_pitch == 0:
        return 0
    return (absolute_pitch - 1) % 12 + 1


def _token_duration(sub: str) -> Fraction | None:
    """Duration of one note token in whole notes, or None if it has none."""
    m = _DUR_RE.search(sub)
    if m is None:
        return None
    digits, denom, dots = m.group(1), m.group(2), m.group(3)
    if set(digits) == {"0"}:
        base = Fraction(2 ** len(digits))  # breve family: 0 = 2 wholes, 00 = 4
    else:
        base = Fraction(1, int(digits))
        if denom:
            base *= int(denom)  # recip a%b lasts b/a whole notes
    k = len(dots)
    return base * (Fraction(2) - Fraction(1, 2**k))


def _token_pitch(sub: str, lineno: int) -> int:
    m = _PITCH_RE.search(sub)
    if m is None:
        raise MalformedKern(f"line {lineno}: no pitch in token {sub!r}")
    letters, acc = m.group(1), m.group(2) or ""
    if len(set(letters.lower())) != 1:
        raise MalformedKern(f"line {lineno}: mixed pitch letters in {sub!r}")
    letter = letters[0]
    octave = 3 + len(letters) if letter.islower() else 4 - len(letters)
    midi = 12 * (octave + 1) + _PC_BASE[letter.lower()]
    if acc.startswith("#"):
        midi += len(acc)
    elif acc.startswith("-"):
        midi -= len(acc)
    absolute = midi - 11  # places C4 at MIDDLE_C
    if not 1 <= absolute <= 132:
        raise MalformedKern(f"line {lineno}: pitch {sub!r} outside the 1..132 range")
    return absolute


@dataclass
class _VoiceState:
    meter_bar: Fraction | None = None  # bar length in whole notes
    events: list[Event] = field(default_factory=list)
    offset: Fraction = Fraction(0)  # within-bar position from raw token durations
    clock: Fraction = Fraction(0)  # cumulative bar fractions from movement start
    tie: dict | None = None


def _flush_tie(st: _VoiceState, src: str) -> None:
    tie = st.tie
    st.tie = None
    if tie is None:
        return
    if tie["duration"] > 1:
        logger.warning(
            "%s: tied note of duration %s exceeds one bar (stored unclamped)",
            src,
            tie["duration"],
        )
    st.events.append(
        Event(
            absolute_pitch=tie["pitch"],
            pitch_class=pitch_class_of(tie["pitch"]),
            duration=tie["duration"],
            bar_index=tie["bar_index"],
            onset=tie["onset"],
        )
    )


def _process_token(tok: str, st: _VoiceState, bar_index: int, lineno: int, src: str) -> bool:
    """Consume one data token for one voice.  Returns True if time advanced."""
    if "q" in tok or "Q" in tok:
        return False  # grace notes carry no duration; dropped
    subs = [s for s in tok.split(" ") if s]
    notes: list[tuple[int, Fraction, str]] = []
    rest: tuple[Fraction, str] | None = None
    for sub in subs:
        dur = _token_duration(sub)
        if "r" in sub:
            if dur is None:
                raise MalformedKern(f"line {lineno}: rest without duration in {tok!r}")
            if rest is None:
                rest = (dur, sub)
            continue
        if dur is None:
            raise MalformedKern(f"line {lineno}: note without duration in {tok!r}")
        notes.append((_token_pitch(sub, lineno), dur, sub))
    if notes:
        # Multiple stops: retain only the highest of simultaneous notes.
        pitch, dur, sub = max(notes)
    elif rest is not None:
        dur, sub = rest
        pitch = 0
    else:
        raise MalformedKern(f"line {lineno}: unparseable token {tok!r}")

    if st.meter_bar is None:
        raise MissingMeter(f"line {lineno}: note before any time signature")
    frac = dur / st.meter_bar
    onset = st.clock
    opens = "[" in sub
    closes = "]" in sub
    cont = "_" in sub

    if st.tie is not None:
        if (cont or closes) and pitch == st.tie["pitch"]:
            st.tie["duration"] += frac
            if closes:
                _flush_tie(st, src)
            st.offset += frac
            st.clock += frac
            return True
        logger.warning("%s: line %d: tie broken by a non-matching event", src, lineno)
        _flush_tie(st, src)

    if opens and not closes:
        st.tie = {"pitch": pitch, "duration": frac, "bar_index": bar_index, "onset": onset}
    else:
        if (cont or closes) and not opens:
            logger.warning("%s: line %d: stray tie marker", src, lineno)
        st.events.append(
            Event(
                absolute_pitch=pitch,
                pitch_class=pitch_class_of(pitch),
                duration=frac,
                bar_index=bar_index,
                onset=onset,
            )
        )
    st.offset += frac
    st.clock += frac
    return True


def _apply_manipulators(tokens: list[str], cols: list[int | None]) -> list[int | None]:
    out: list[int | None] = []
    i = 0
    while i < len(tokens):
        tok, spine = tokens[i], cols[i]
        if tok == "*-":
            i += 1
        elif tok == "*^":
            out.extend([spine, spine])
            i += 1
        elif tok == "*v":
            j = i
            while j < len(tokens) and tokens[j] == "*v" and cols[j] == spine:
                j += 1
            out.append(spine)
            i = max(j, i + 1)
        elif tok == "*x":
            if i + 1 < len(tokens) and tokens[i + 1] == "*x":
                out.extend([cols[i + 1], cols[i]])
                i += 2
            else:
                out.append(spine)
                i += 1
        elif tok == "*+":
            out.extend([spine, None])  # added spine is never note-bearing for us
            i += 1
        else:
            out.append(spine)
            i += 1
    return out


def parse_kern(file_content: str, meta: MovementMeta | None = None) -> EncodedMovement:
    """Parse a four-voice **kern score into an EncodedMovement.

    Within any chord only the top note is kept, grace notes are dropped,
    tied note groups are merged into single events, and every duration is
    stored as the exact fraction of a bar under the meter in force.  Spines
    other than the four **kern spines are ignored; when a kern spine splits,
    only its leftmost sub-spine is read so the rhythm stays well-formed.

    Raises MalformedKern, WrongVoiceCount or MissingMeter on structural
    problems.  Irregular bar sums are logged, not fatal.
    """
    src = meta.source_path if meta is not None else "<string>"
    cols: list[int | None] | None = None
    voices: list[_VoiceState] = []
    bar_index = 0
    seen_any_event = False
    events_in_bar = 0

    for lineno, line in enumerate(file_content.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("!"):
            continue  # global or local comments, reference records
        tokens = line.split("\t")

        if cols is None:
            if all(t.startswith("**") for t in tokens):
                cols = []
                nkern = 0
                for t in tokens:
                    if t == "**kern":
                        cols.append(nkern)
                        nkern += 1
                    else:
                        cols.append(None)
                if nkern != 4:
                    raise WrongVoiceCount(f"expected 4 **kern spines, found {nkern}")
                voices = [_VoiceState() for _ in range(4)]
                continue
            raise MalformedKern(f"line {lineno}: content before the **kern header")

        if len(tokens) != len(cols):
            raise MalformedKern(
                f"line {lineno}: expected {len(cols)} spines, got {len(tokens)}"
            )

        if all(t.startswith("*") for t in tokens):
            if any(t in ("*-", "*^", "*v", "*x", "*+") for t in tokens):
                cols = _apply_manipulators(tokens, cols)
                if not any(c is not None for c in cols):
                    break  # all spines terminated
                continue
            for tok, spine in zip(tokens, cols):
                if spine is None:
                    continue
                m = _METER_RE.match(tok)
                if m:
                    # a bar of num/den meter lasts num/den whole notes
                    voices[spine].meter_bar = Fraction(int(m.group(1)), int(m.group(2)))
            continue

        if tokens[0].startswith("="):
            if not seen_any_event:
                if bar_index == 0:
                    bar_index = 1  # explicit opening barline: no pickup bar
                continue
            if events_in_bar == 0:
                continue  # consecutive barlines
            for spine, st in enumerate(voices):
                if bar_index > 0 and st.offset not in (Fraction(0), Fraction(1)):
                    logger.warning(
                        "%s: bar %d of voice %d sums to %s, expected 1",
                        src,
                        bar_index,
                        spine,
                        st.offset,
                    )
                st.offset = Fraction(0)
            bar_index += 1
            events_in_bar = 0
            continue

        # data line: read each kern spine's leftmost active column
        first_col: dict[int, int] = {}
        for ci, spine in enumerate(cols):
            if spine is not None and spine not in first_col:
                first_col[spine] = ci
        for spine in range(4):
            ci = first_col.get(spine)
            if ci is None:
                continue
            tok = tokens[ci]
            if tok in (".", ""):
                continue
            if _process_token(tok, voices[spine], bar_index, lineno, src):
                events_in_bar += 1
                seen_any_event = True

    if cols is None:
        raise MalformedKern("no **kern exclusive interpretation found")
    for st in voices:
        if st.tie is not None:
            logger.warning("%s: unterminated tie at end of file", src)
            _flush_tie(st, src)

    # kern spines run low to high: Cello, Viola, Violin 2, Violin 1
    by_voice = dict(zip((Voice.CELLO, Voice.VIOLA, Voice.VIOLIN2, Voice.VIOLIN1), voices))
    tracks = tuple(
        VoiceTrack(voice=v, events=tuple(by_voice[v].events)) for v in VOICE_ORDER
    )
    return EncodedMovement(meta=meta, voices=tracks)


# ---------------------------------------------------------------------------
# Track views and corpus loading
# ---------------------------------------------------------------------------

NOTE_REPS = ("pitch_class", "absolute_pitch", "duration")


def note_sequence(track: VoiceTrack, rep: str):
    """Feature-facing view of a voice with rests removed.

    rep is one of "pitch_class", "absolute_pitch" or "duration".  The
    returned length is the movement-voice note count M.
    """
    if rep not in NOTE_REPS:
        raise ValueError(f"rep must be one of {NOTE_REPS}, got {rep!r}")
    notes = [e for e in track.events if not e.is_rest]
    if rep == "pitch_class":
        return [e.pitch_class for e in notes]
    if rep == "absolute_pitch":
        return [e.absolute_pitch for e in notes]
    return [e.duration for e in notes]


def onset_grid(movement: EncodedMovement) -> dict[Voice, list[tuple[Fraction, bool]]]:
    """Per-voice (onset_time, is_rest) pairs, rests included.

    Onset times are cumulative bar fractions from the movement start
    (bar index plus within-bar offset).
    """
    return {
        track.voice: [(e.onset, e.is_rest) for e in track.events]
        for track in movement.voices
    }


def movement_to_json(movement: EncodedMovement) -> dict:
    """JSON-safe dump of a parsed movement, for debugging."""
    meta = movement.meta
    return {
        "meta": None
        if meta is None
        else {
            "composer": int(meta.composer),
            "quartet_id": meta.quartet_id,
            "set_id": meta.set_id,
            "movement_number": meta.movement_number,
            "source_path": meta.source_path,
        },
        "voices": {
            t.voice.value: [
                {
                    "absolute_pitch": e.absolute_pitch,
                    "pitch_class": e.pitch_class,
                    "duration": str(e.duration),
                    "bar_index": e.bar_index,
                    "onset": str(e.onset),
                }
                for e in t.events
            ]
            for t in movement.voices
        },
    }


MANIFEST_FIELDS = ("path", "composer", "quartet_id", "set_id", "movement_number")

_COMPOSER_ALIASES = {
    "0": Composer.MOZART,
    "1": Composer.HAYDN,
    "mozart": Composer.MOZART,
    "haydn": Composer.HAYDN,
}


def _parse_composer(text: str) -> Composer:
    try:
        return _COMPOSER_ALIASES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown composer label {text!r}") from None


def read_manifest(manifest_path: str | Path) -> list[MovementMeta]:
    """Read the corpus manifest CSV (path, composer, quartet_id, set_id, movement_number)."""
    metas: list[MovementMeta] = []
    seen: set[str] = set()
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"path", "composer", "quartet_id", "movement_number"} - set(
            reader.fieldnames or []
        )
        if missing:
            raise ValueError(f"manifest is missing columns: {sorted(missing)}")
        for row in reader:
            path = row["path"].strip()
            if not path:
                continue
            if path in seen:
                raise ValueError(f"duplicate manifest path {path!r}")
            seen.add(path)
            metas.append(
                MovementMeta(
                    composer=_parse_composer(row["composer"]),
                    quartet_id=row["quartet_id"].strip(),
                    set_id=(row.get("set_id") or "").strip(),
                    movement_number=int(row["movement_number"]),
                    source_path=path,
                )
            )
    return metas


def discover_kern_files(corpus_root: str | Path) -> list[Path]:
    return sorted(Path(corpus_root).rglob("*.krn"))


def load_corpus(
    corpus_root: str | Path,
    manifest_path: str | Path,
    skip_bad: bool = False,
) -> tuple[list[EncodedMovement], list[tuple[str, str]]]:
    """Parse every manifest movement under corpus_root.

    Returns (movements, errors) where errors is a list of
    (manifest path, message) pairs.  With skip_bad the failing movements
    are dropped; otherwise callers should treat a non-empty error list as
    fatal.
    """
    root = Path(corpus_root)
    movements: list[EncodedMovement] = []
    errors: list[tuple[str, str]] = []
    for meta in read_manifest(manifest_path):
        path = Path(meta.source_path)
        if not path.is_absolute():
            path = root / path
        try:
            content = path.read_text(encoding="utf-8", errors="replace")
            movements.append(parse_kern(content, meta=meta))
        except (OSError, KernError, ValueError) as exc:
            errors.append((meta.source_path, str(exc)))
    if errors and not skip_bad:
        for path, msg in errors:
            logger.error("failed to parse %s: %s", path, msg)
    return movements, errors
