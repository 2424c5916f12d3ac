"""Reference-frame designs for case-crossover analyses.

A reference frame is the set of days a case day is compared against
(the case day included).  Days are 1-based throughout.  Time-stratified
designs partition the retained days into disjoint frames; the
unidirectional and symmetric bidirectional designs give every day its own,
overlapping, frame.  Both kinds are represented by the same
:class:`ReferenceFrameSet`: ``frames[frame_of[t]]`` is the frame used for
case day ``t``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DESIGN_KINDS = ("time_stratified", "unidirectional", "symmetric_bidirectional")
WEEKDAYS = ("Sunday", "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday")


@dataclass(frozen=True)
class CalendarMask:
    """Days removed from the analysis (holidays, outages...)."""

    T: int
    excluded_days: frozenset = frozenset()

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError(f"study length must be positive, got T={self.T}")
        bad = [d for d in self.excluded_days if not 1 <= d <= self.T]
        if bad:
            raise ValueError(f"excluded days outside 1..{self.T}: {sorted(bad)[:5]}")
        object.__setattr__(self, "excluded_days", frozenset(int(d) for d in self.excluded_days))

    def retained(self) -> np.ndarray:
        days = np.arange(1, self.T + 1)
        if not self.excluded_days:
            return days
        return days[~np.isin(days, list(self.excluded_days))]

    @classmethod
    def from_json(cls, text: str, T: int, start_date: str | dt.date | None = None) -> "CalendarMask":
        """Parse a JSON array of day indices and/or ISO dates.

        ISO dates need ``start_date`` (the date of day 1).  Dates falling
        outside the study period are ignored, so a generic holiday list can
        be reused across studies.
        """
        entries = json.loads(text)
        if not isinstance(entries, list):
            raise ValueError("calendar mask must be a JSON array")
        if isinstance(start_date, str):
            start_date = dt.date.fromisoformat(start_date)
        days = set()
        for e in entries:
            if isinstance(e, bool):
                raise ValueError(f"invalid mask entry {e!r}")
            if isinstance(e, int):
                days.add(e)
            elif isinstance(e, str):
                if start_date is None:
                    raise ValueError("ISO dates in a calendar mask require a study start date")
                d = (dt.date.fromisoformat(e) - start_date).days + 1
                if 1 <= d <= T:
                    days.add(d)
            else:
                raise ValueError(f"invalid mask entry {e!r}")
        return cls(T, frozenset(days))

    @classmethod
    def from_file(cls, path, T: int, start_date=None) -> "CalendarMask":
        return cls.from_json(Path(path).read_text(), T, start_date)


@dataclass(frozen=True)
class ReferenceFrameSet:
    T: int
    frames: tuple  # tuple of sorted int arrays (1-based day indices)
    frame_of: dict  # day index -> frame id
    design_kind: str
    stratum_meta: tuple = field(default=())  # one dict per frame

    def __post_init__(self):
        if self.design_kind not in DESIGN_KINDS:
            raise ValueError(f"unknown design kind {self.design_kind!r}")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def is_partition(self) -> bool:
        return self.design_kind == "time_stratified"

    def frame_for(self, day: int) -> np.ndarray:
        return self.frames[self.frame_of[day]]

    def sizes(self) -> np.ndarray:
        return np.array([len(f) for f in self.frames], dtype=int)

    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """Frames as a (n_frames, max_size) array of 0-based indices plus a validity mask."""
        m = int(self.sizes().max()) if self.frames else 0
        idx = np.zeros((self.n_frames, m), dtype=np.intp)
        mask = np.zeros((self.n_frames, m), dtype=bool)
        for k, f in enumerate(self.frames):
            idx[k, : len(f)] = f - 1
            mask[k, : len(f)] = True
        return idx, mask

    def day_to_frame_array(self) -> np.ndarray:
        """Length-T array: frame id of each day (0-based position), -1 when excluded."""
        out = np.full(self.T, -1, dtype=np.intp)
        for d, k in self.frame_of.items():
            out[d - 1] = k
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["day_index", "frame_id"])
        for k, f in enumerate(self.frames):
            for d in f:
                w.writerow([int(d), k])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def weekday_of(days, day1_weekday: int = 0) -> np.ndarray:
    """Weekday index (0 = Sunday) of 1-based days, given the weekday of day 1."""
    return (np.asarray(days) - 1 + day1_weekday) % 7


def _mask_or_empty(T, mask):
    if mask is None:
        return CalendarMask(T)
    if mask.T != T:
        raise ValueError(f"mask covers {mask.T} days but T={T}")
    return mask


def build_time_stratified(
    T: int,
    window_days: int = 28,
    mask: CalendarMask | None = None,
    day1_weekday: int = 0,
    drop_partial: bool = False,
) -> ReferenceFrameSet:
    """Partition days into consecutive windows, then by weekday within each window.

    ``drop_partial`` removes every frame that lost a day to the mask instead
    of keeping the shrunken frame.
    """
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if window_days <= 0 or window_days % 7:
        raise ValueError(f"window_days must be a positive multiple of 7, got {window_days}")
    mask = _mask_or_empty(T, mask)
    excluded = mask.excluded_days
    frames, meta, frame_of = [], [], {}
    days = np.arange(1, T + 1)
    for w, start in enumerate(range(1, T + 1, window_days)):
        window = days[start - 1 : start - 1 + window_days]
        for offset in range(min(7, len(window))):
            members = window[offset::7]
            kept = np.array([d for d in members if d not in excluded], dtype=int)
            if len(kept) == 0 or (drop_partial and len(kept) < len(members)):
                continue
            k = len(frames)
            frames.append(kept)
            meta.append({"window": w, "weekday": int(weekday_of(members[0], day1_weekday))})
            for d in kept:
                frame_of[int(d)] = k
    return ReferenceFrameSet(T, tuple(frames), frame_of, "time_stratified", tuple(meta))


def _per_day_frames(T, offsets, mask, kind, day1_weekday, drop_partial):
    mask = _mask_or_empty(T, mask)
    excluded = mask.excluded_days
    frames, meta, frame_of = [], [], {}
    for t in mask.retained():
        cand = t + offsets
        cand = cand[(cand >= 1) & (cand <= T)]
        kept = np.array([d for d in cand if d not in excluded], dtype=int)
        if drop_partial and len(kept) < len(cand):
            continue
        k = len(frames)
        frames.append(kept)
        meta.append({"case_day": int(t), "weekday": int(weekday_of(t, day1_weekday))})
        frame_of[int(t)] = k
    return ReferenceFrameSet(T, tuple(frames), frame_of, kind, tuple(meta))


def build_unidirectional(T: int, k_weeks: int, mask: CalendarMask | None = None,
                         day1_weekday: int = 0, drop_partial: bool = False) -> ReferenceFrameSet:
    """Frame of day t is {t - 7 k_weeks, ..., t - 7, t} restricted to the study."""
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if k_weeks < 1:
        raise ValueError(f"k_weeks must be >= 1, got {k_weeks}")
    offsets = -7 * np.arange(k_weeks, -1, -1)
    return _per_day_frames(T, offsets, mask, "unidirectional", day1_weekday, drop_partial)


def build_symmetric_bidirectional(T: int, k_weeks: int, mask: CalendarMask | None = None,
                                  day1_weekday: int = 0, drop_partial: bool = False) -> ReferenceFrameSet:
    """Frame of day t is {t - 7 k_weeks, ..., t, ..., t + 7 k_weeks} restricted to the study."""
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if k_weeks < 1:
        raise ValueError(f"k_weeks must be >= 1, got {k_weeks}")
    offsets = 7 * np.arange(-k_weeks, k_weeks + 1)
    return _per_day_frames(T, offsets, mask, "symmetric_bidirectional", day1_weekday, drop_partial)


def build_design(kind: str, T: int, control_days: int = 3, mask: CalendarMask | None = None,
                 day1_weekday: int = 0, drop_partial: bool = False) -> ReferenceFrameSet:
    """Dispatch on the CLI design names.

    ``control_days`` counts comparison days per frame: a time-stratified
    design with 3 control days uses 4-week windows; a bidirectional design
    needs an even count (k weeks on each side).
    """
    kind = {"time-stratified": "time_stratified", "uni": "unidirectional",
            "bidir": "symmetric_bidirectional"}.get(kind, kind)
    if control_days < 1:
        raise ValueError(f"control_days must be >= 1, got {control_days}")
    if kind == "time_stratified":
        return build_time_stratified(T, 7 * (control_days + 1), mask, day1_weekday, drop_partial)
    if kind == "unidirectional":
        return build_unidirectional(T, control_days, mask, day1_weekday, drop_partial)
    if kind == "symmetric_bidirectional":
        if control_days % 2:
            raise ValueError("symmetric bidirectional designs need an even number of control days")
        return build_symmetric_bidirectional(T, control_days // 2, mask, day1_weekday, drop_partial)
    raise ValueError(f"unknown design {kind!r}")


def frames_from_sets(T: int, sets: Sequence[Iterable[int]]) -> ReferenceFrameSet:
    """Time-stratified frame set from explicit disjoint day sets (mostly for tests)."""
    frames, frame_of = [], {}
    for k, s in enumerate(sets):
        arr = np.array(sorted(int(d) for d in s), dtype=int)
        for d in arr:
            if d in frame_of:
                raise ValueError(f"day {d} appears in two frames")
            if not 1 <= d <= T:
                raise ValueError(f"day {d} outside 1..{T}")
            frame_of[int(d)] = k
        frames.append(arr)
    return ReferenceFrameSet(T, tuple(frames), frame_of, "time_stratified",
                             tuple({} for _ in frames))
