"""Read, validate, write, and mirror .sm stepcharts.

The supported grammar is the common .sm subset: ``#TAG:VALUE;`` header
tags (TITLE, MUSIC, OFFSET, BPMS, STOPS) followed by ``#NOTES:`` blocks
holding six colon separated fields (chart type, description, coarse
difficulty, integer meter, radar values, note data). Note data is a
comma separated list of measures, each measure a stack of 4 character
rows. A measure spans four beats, so row i of an N row measure sits at
beat 4*(m*N + i)/N for measure m. That expression is evaluated with a
single float division so the same grid position always produces the
same float, which is what makes write followed by parse an exact
round trip for charts on the 1/48 beat grid.

Sign convention: ``offset_s`` is the time in seconds of beat 0 in the
audio, the negation of the raw ``#OFFSET`` header value.

Note characters outside the four modeled states collapse onto them:
mines ('M') become empty, rolls ('4') become hold starts so their
releases stay paired, and lift/fake/keysound marks ('L', 'F', 'K')
degrade to empty with a warning. Any other character is an error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

from stepsmith.errors import SimfileError, SimfileWarning

COLUMN_NAMES = ("Left", "Down", "Up", "Right")
NUM_COLUMNS = 4
NUM_SYMBOLS = 256
COARSE_DIFFICULTIES = ("Beginner", "Easy", "Medium", "Hard", "Challenge")

# Rows-per-measure ladder the writer may emit, coarsest first. 192 rows
# per four-beat measure is the 1/48 beat grid, the finest spacing the
# writer can reproduce exactly.
SUBDIVISIONS = (4, 8, 12, 16, 24, 32, 48, 64, 96, 192)
SLOTS_PER_BEAT = 48
SLOTS_PER_MEASURE = 4 * SLOTS_PER_BEAT

_KEEP = {"0": 0, "1": 1, "2": 2, "3": 3}
_REMAP = {"M": 0, "4": 2}
_DEGRADE = ("L", "F", "K")


@dataclass(frozen=True)
class StepSymbol:
    """One row of arrows packed as a base 4 integer.

    Column order is (Left, Down, Up, Right) with Left most significant.
    Per column digits: 0 empty, 1 tap, 2 hold start, 3 hold release.
    """

    index: int

    def __post_init__(self):
        if not isinstance(self.index, int) or not 0 <= self.index < NUM_SYMBOLS:
            raise SimfileError(f"step symbol index {self.index!r} outside [0, 255]")

    @property
    def digits(self) -> tuple[int, int, int, int]:
        i = self.index
        return ((i >> 6) & 3, (i >> 4) & 3, (i >> 2) & 3, i & 3)

    @property
    def text(self) -> str:
        return "".join(str(d) for d in self.digits)

    @classmethod
    def from_digits(cls, digits: Iterable[int]) -> "StepSymbol":
        d = tuple(digits)
        if len(d) != NUM_COLUMNS or any(v not in (0, 1, 2, 3) for v in d):
            raise SimfileError(f"bad step digits {d!r}")
        return cls(d[0] * 64 + d[1] * 16 + d[2] * 4 + d[3])

    @classmethod
    def from_text(cls, text: str) -> "StepSymbol":
        if len(text) != NUM_COLUMNS or any(ch not in _KEEP for ch in text):
            raise SimfileError(f"bad step text {text!r}")
        return cls.from_digits(_KEEP[ch] for ch in text)


@dataclass(frozen=True)
class Chart:
    """A single dance-single difficulty: its rows plus the two ratings."""

    coarse_difficulty: str
    fine_difficulty: int
    rows: tuple  # of (beat: float, StepSymbol), strictly increasing in beat


@dataclass(frozen=True)
class Simfile:
    """One song's chart package: timing metadata plus its charts."""

    title: str
    music_path: str
    offset_s: float
    bpm_segments: tuple  # of (start_beat, bpm)
    stop_segments: tuple  # of (beat, duration_s)
    charts: tuple  # of Chart


def validate_chart(chart: Chart) -> None:
    """Raise SimfileError unless the chart satisfies its invariants."""
    if chart.coarse_difficulty not in COARSE_DIFFICULTIES:
        raise SimfileError(f"unknown coarse difficulty {chart.coarse_difficulty!r}")
    if not isinstance(chart.fine_difficulty, int) or chart.fine_difficulty < 1:
        raise SimfileError(f"fine difficulty {chart.fine_difficulty!r} must be an integer >= 1")
    prev = None
    open_since = [None] * NUM_COLUMNS  # beat at which an unreleased hold began
    for beat, sym in chart.rows:
        if beat < 0:
            raise SimfileError(f"row beat {beat!r} is negative")
        if prev is not None and beat <= prev:
            raise SimfileError(f"row beats not strictly increasing at beat {beat!r}")
        prev = beat
        if not isinstance(sym, StepSymbol):
            raise SimfileError(f"row at beat {beat!r} is not a StepSymbol")
        if sym.index == 0:
            raise SimfileError(f"empty row stored explicitly at beat {beat!r}")
        for col, d in enumerate(sym.digits):
            if open_since[col] is not None:
                if d == 3:
                    open_since[col] = None
                elif d != 0:
                    raise SimfileError(
                        f"note inside an open hold at beat {beat!r}, "
                        f"column {COLUMN_NAMES[col]}"
                    )
            else:
                if d == 3:
                    raise SimfileError(
                        f"hold release without a start at beat {beat!r}, "
                        f"column {COLUMN_NAMES[col]}"
                    )
                if d == 2:
                    open_since[col] = beat
    for col, since in enumerate(open_since):
        if since is not None:
            raise SimfileError(
                f"hold started at beat {since!r}, column {COLUMN_NAMES[col]}, never released"
            )


def validate_simfile(sim: Simfile) -> None:
    """Raise SimfileError unless the simfile satisfies its invariants."""
    if not sim.bpm_segments:
        raise SimfileError("bpm_segments must be nonempty")
    if sim.bpm_segments[0][0] != 0.0:
        raise SimfileError("first BPM segment must start at beat 0")
    prev = None
    for start, bpm in sim.bpm_segments:
        if prev is not None and start <= prev:
            raise SimfileError(f"BPM segment beats not strictly increasing at {start!r}")
        prev = start
        if not bpm > 0:
            raise SimfileError(f"non-positive BPM {bpm!r} at beat {start!r}")
    prev = None
    for beat, dur in sim.stop_segments:
        if prev is not None and beat <= prev:
            raise SimfileError(f"stop beats not strictly increasing at {beat!r}")
        prev = beat
        if dur < 0:
            raise SimfileError(f"negative stop duration {dur!r} at beat {beat!r}")
    for chart in sim.charts:
        validate_chart(chart)


def _strip_comments(source: str) -> str:
    return "\n".join(line.split("//", 1)[0] for line in source.splitlines())


def _tags(source: str) -> Iterator[tuple[str, str]]:
    """Yield (TAG, value) pairs; values may span lines."""
    pos = 0
    while True:
        start = source.find("#", pos)
        if start < 0:
            return
        colon = source.find(":", start)
        if colon < 0:
            raise SimfileError("header tag after '#' has no ':'")
        tag = source[start + 1 : colon].strip().upper()
        end = source.find(";", colon)
        if end < 0:
            raise SimfileError(f"unterminated #{tag}:...; block")
        yield tag, source[colon + 1 : end]
        pos = end + 1


def _to_float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SimfileError(f"bad float {text!r} in {what}") from None


def _parse_pairs(value: str, what: str) -> list:
    out = []
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise SimfileError(f"malformed {what} entry {item!r}")
        a, b = item.split("=", 1)
        out.append((_to_float(a.strip(), what), _to_float(b.strip(), what)))
    return out


def _parse_notes(value: str, degraded: set) -> Chart | None:
    parts = value.split(":")
    if len(parts) < 6:
        raise SimfileError("#NOTES block needs 6 colon separated fields")
    chart_type = parts[0].strip()
    coarse_raw = parts[2].strip()
    meter_raw = parts[3].strip()
    note_data = ":".join(parts[5:])

    if chart_type != "dance-single":
        warnings.warn(f"skipping unsupported chart type {chart_type!r}", SimfileWarning)
        return None
    coarse = next(
        (name for name in COARSE_DIFFICULTIES if name.lower() == coarse_raw.lower()),
        None,
    )
    if coarse is None:
        warnings.warn(f"skipping chart with difficulty {coarse_raw!r}", SimfileWarning)
        return None
    try:
        meter = int(meter_raw)
    except ValueError:
        meter = 0
    if meter < 1:
        warnings.warn(f"skipping chart with meter {meter_raw!r}", SimfileWarning)
        return None

    rows = []
    for m, measure in enumerate(note_data.split(",")):
        lines = [ln.strip() for ln in measure.splitlines()]
        lines = [ln for ln in lines if ln]
        n = len(lines)
        for i, line in enumerate(lines):
            if len(line) != NUM_COLUMNS:
                raise SimfileError(f"note row {line!r} is not {NUM_COLUMNS} characters")
            digits = []
            for ch in line:
                if ch in _KEEP:
                    digits.append(_KEEP[ch])
                elif ch in _REMAP:
                    digits.append(_REMAP[ch])
                elif ch in _DEGRADE:
                    digits.append(0)
                    degraded.add(ch)
                else:
                    raise SimfileError(f"invalid note character {ch!r}")
            sym = StepSymbol.from_digits(digits)
            if sym.index == 0:
                continue  # empty rows stay implicit
            rows.append((4.0 * (m * n + i) / n, sym))
    return Chart(coarse, meter, tuple(rows))


def parse_simfile(source: str) -> Simfile:
    """Parse .sm text into a validated Simfile.

    Raises SimfileError on grammar problems, invalid note characters,
    broken hold pairing, or non-positive BPM values. Unsupported charts
    (wrong type, unknown difficulty name) are skipped with a warning
    rather than failing the whole file.
    """
    text = _strip_comments(source)
    title = ""
    music = ""
    offset_raw = 0.0
    bpms = None
    stops: list = []
    charts = []
    degraded: set = set()
    for tag, value in _tags(text):
        if tag == "TITLE":
            title = value.strip()
        elif tag == "MUSIC":
            music = value.strip()
        elif tag == "OFFSET":
            offset_raw = _to_float(value.strip(), "OFFSET")
        elif tag == "BPMS":
            bpms = _parse_pairs(value, "BPMS")
        elif tag == "STOPS":
            stops = _parse_pairs(value, "STOPS")
        elif tag == "NOTES":
            chart = _parse_notes(value, degraded)
            if chart is not None:
                charts.append(chart)
        # all other tags are ignored
    if degraded:
        warnings.warn(
            "degraded note characters to empty: " + ", ".join(sorted(degraded)),
            SimfileWarning,
        )
    if not bpms:
        raise SimfileError("missing or empty #BPMS header")
    sim = Simfile(title, music, -offset_raw, tuple(bpms), tuple(stops), tuple(charts))
    validate_simfile(sim)
    return sim


_BANNED_IN_TEXT = ("#", ";", ":", ",", "//", "\n")


def _check_text_field(value: str, what: str) -> str:
    if value != value.strip() or any(tok in value for tok in _BANNED_IN_TEXT):
        raise SimfileError(f"{what} {value!r} cannot be represented in .sm text")
    return value


def _fmt(x: float) -> str:
    # repr() round-trips every float exactly through float().
    return repr(float(x))


def _write_notes(chart: Chart) -> str:
    slots = []
    for beat, sym in chart.rows:
        k = round(beat * SLOTS_PER_BEAT)
        # Accept only the canonical float for grid slot k; anything else
        # cannot survive a write/parse cycle bit for bit.
        if k < 0 or float(k) / SLOTS_PER_BEAT != beat:
            raise SimfileError(
                f"row beat {beat!r} is not representable at 1/{SLOTS_PER_BEAT} beat resolution"
            )
        slots.append((k, sym))
    n_measures = slots[-1][0] // SLOTS_PER_MEASURE + 1 if slots else 1
    by_measure: list = [[] for _ in range(n_measures)]
    for k, sym in slots:
        by_measure[k // SLOTS_PER_MEASURE].append((k % SLOTS_PER_MEASURE, sym))

    measures_text = []
    for measure_rows in by_measure:
        for n in SUBDIVISIONS:
            stride = SLOTS_PER_MEASURE // n
            if all(kk % stride == 0 for kk, _ in measure_rows):
                break
        lines = ["0" * NUM_COLUMNS] * n
        for kk, sym in measure_rows:
            lines[kk // stride] = sym.text
        measures_text.append("\n".join(lines))

    header = (
        "#NOTES:\n"
        "     dance-single:\n"
        "     :\n"
        f"     {chart.coarse_difficulty}:\n"
        f"     {chart.fine_difficulty}:\n"
        "     0,0,0,0,0:\n"
    )
    return header + "\n,\n".join(measures_text) + "\n;"


def write_simfile(sim: Simfile) -> str:
    """Render a Simfile back to .sm text.

    The emitted text parses back to an equal Simfile provided every row
    beat lies on the 1/48 beat grid; beats off that grid raise
    SimfileError. Each measure uses the coarsest row count that places
    all of its rows exactly.
    """
    validate_simfile(sim)
    _check_text_field(sim.title, "title")
    _check_text_field(sim.music_path, "music path")
    parts = [
        f"#TITLE:{sim.title};",
        f"#MUSIC:{sim.music_path};",
        f"#OFFSET:{_fmt(-sim.offset_s)};",
        "#BPMS:" + ",".join(f"{_fmt(b)}={_fmt(v)}" for b, v in sim.bpm_segments) + ";",
        "#STOPS:" + ",".join(f"{_fmt(b)}={_fmt(d)}" for b, d in sim.stop_segments) + ";",
    ]
    parts.extend(_write_notes(chart) for chart in sim.charts)
    return "\n".join(parts) + "\n"


_MIRROR_PERMS = {
    "LR": (3, 1, 2, 0),
    "UD": (0, 2, 1, 3),
    "Both": (3, 2, 1, 0),
}


def mirror(chart: Chart, axis: str) -> Chart:
    """Reflect a chart left/right, up/down, or both; beats are untouched."""
    try:
        perm = _MIRROR_PERMS[axis]
    except KeyError:
        raise SimfileError(f"mirror axis must be one of {tuple(_MIRROR_PERMS)}, got {axis!r}") from None
    rows = tuple(
        (beat, StepSymbol.from_digits(sym.digits[p] for p in perm))
        for beat, sym in chart.rows
    )
    return replace(chart, rows=rows)


def augment_dataset(charts: Iterable[Chart]) -> list:
    """Expand charts with their LR, UD, and combined mirrors (4x volume)."""
    charts = list(charts)
    out = list(charts)
    for axis in ("LR", "UD", "Both"):
        out.extend(mirror(c, axis) for c in charts)
    return out


def beat_to_time(sim: Simfile, beat: float) -> float:
    """Absolute time in seconds at which a beat occurs.

    Integrates 60/bpm across the BPM segments covering [0, beat], adds
    the full duration of every stop strictly before the beat, and
    shifts by offset_s. A row exactly at a stop's beat sounds before
    the pause, so that stop does not count.
    """
    if beat < 0:
        raise ValueError(f"beat must be >= 0, got {beat!r}")
    t = sim.offset_s
    segments = sim.bpm_segments
    for i, (start, bpm) in enumerate(segments):
        if start >= beat:
            break
        end = segments[i + 1][0] if i + 1 < len(segments) else beat
        t += (min(end, beat) - start) * 60.0 / bpm
    for stop_beat, duration in sim.stop_segments:
        if stop_beat >= beat:
            break
        t += duration
    return t
