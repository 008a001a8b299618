"""Raw event logs to sessionized, prefix-expanded training examples."""

from __future__ import annotations

import csv
import io
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .config import ColumnMap, DatasetProfile
from .errors import ConfigError, DataError, DataQualityError

log = logging.getLogger(__name__)

EMPTY_SIDE: tuple = ()


@dataclass(frozen=True)
class Event:
    user: str
    timestamp: int
    item: str
    # None, a raw value, or a tuple of distinct raw values (multi-valued side)
    side: Any = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if isinstance(self.side, tuple) and not self.side:
            raise ValueError("multi-valued side must be non-empty")


@dataclass
class Session:
    items: list
    sides: list
    user: str = ""

    def __post_init__(self):
        if len(self.items) != len(self.sides):
            raise ValueError("items and sides must have equal length")

    def __len__(self):
        return len(self.items)


@dataclass
class TrainingExample:
    input: list
    side_input: list
    target: int
    side_target: Any
    prefix_len: int


@dataclass
class Vocabulary:
    item_to_id: dict = field(default_factory=dict)
    id_to_item: list = field(default_factory=lambda: [None])
    side_to_id: dict = field(default_factory=dict)
    id_to_side: list = field(default_factory=lambda: [None])
    item_counts: Counter = field(default_factory=Counter)
    # item ID -> side ID (single), tuple of side IDs (multi) or 0 (none)
    item_side: dict = field(default_factory=dict)
    side_kind: str = "single"

    @property
    def n_items(self) -> int:
        """Item vocabulary size including the pad slot."""
        return len(self.id_to_item)

    @property
    def n_sides(self) -> int:
        return len(self.id_to_side)

    def _add_side(self, raw) -> int:
        if raw not in self.side_to_id:
            self.side_to_id[raw] = len(self.id_to_side)
            self.id_to_side.append(raw)
        return self.side_to_id[raw]

    def encode(self, session: Session) -> Session:
        items = [self.item_to_id[i] for i in session.items]
        return Session(items, [self.item_side[i] for i in items], session.user)

    def item_side_matrix(self) -> np.ndarray:
        """(n_items, width) array of side IDs per item, zero padded."""
        width = 1
        if self.side_kind == "multi":
            width = max((len(v) for v in self.item_side.values()), default=1) or 1
        out = np.zeros((self.n_items, width), dtype=np.int64)
        for item, side in self.item_side.items():
            ids = side if isinstance(side, tuple) else (side,)
            out[item, : len(ids)] = ids
        return out


def _parse_side(raw: str, profile: DatasetProfile, columns: ColumnMap):
    raw = raw.strip()
    if profile.side_kind == "none":
        return None
    if not raw:
        raise ValueError("empty side value")
    if profile.side_kind == "multi":
        parts = tuple(dict.fromkeys(p.strip() for p in raw.split(columns.side_separator)
                                    if p.strip()))
        if not parts:
            raise ValueError("empty side set")
        return parts
    return raw


def _parse_timestamp(raw: str, columns: ColumnMap) -> int:
    raw = raw.strip()
    if columns.timestamp_format:
        dt = datetime.strptime(raw, columns.timestamp_format)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError("non-finite timestamp")
    return int(value)


def _column_index(header: Optional[list], col, name: str) -> int:
    if isinstance(col, int):
        return col
    if header is None:
        raise ConfigError(f"column {name}={col!r} given by name but the input has no header")
    if col not in header:
        raise ConfigError(f"column {name}={col!r} not found in header {header}")
    return header.index(col)


def parse_events(stream, profile: DatasetProfile, columns: ColumnMap) -> tuple[list[Event], int]:
    """Parse a delimited event table.

    Returns the events sorted by (user, timestamp, row order) and the number
    of malformed rows that were skipped.
    """
    try:
        if isinstance(stream, (str, Path)):
            with open(stream, newline="", encoding="utf-8") as fh:
                text = fh.read()
        else:
            text = stream.read()
            if isinstance(text, bytes):
                text = text.decode("utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read event stream {stream}: {exc}") from exc

    reader = csv.reader(io.StringIO(text), delimiter=columns.delimiter)
    header = None
    if columns.has_header:
        header = next(reader, None)
        if header is None:
            return [], 0
        header = [h.strip() for h in header]
    want_side = profile.side_kind != "none"
    if want_side and columns.side is None:
        raise ConfigError(f"profile {profile.name!r} needs side values but no side column is mapped")
    idx_user = _column_index(header, columns.user, "user")
    idx_ts = _column_index(header, columns.timestamp, "timestamp")
    idx_item = _column_index(header, columns.item, "item")
    idx_side = _column_index(header, columns.side, "side") if want_side else None

    rows = []
    skipped = 0
    total = 0
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        total += 1
        try:
            user = row[idx_user].strip()
            item = row[idx_item].strip()
            if not user or not item:
                raise ValueError("missing user or item")
            ts = _parse_timestamp(row[idx_ts], columns)
            side = _parse_side(row[idx_side], profile, columns) if want_side else None
            rows.append(Event(user, ts, item, side))
        except (IndexError, ValueError):
            skipped += 1
    if total and skipped / total > 0.5:
        raise DataQualityError(f"{skipped} of {total} rows are malformed (more than 50%)")
    if skipped:
        log.warning("skipped %d malformed rows of %d", skipped, total)
    # sorted() is stable, so ties keep input row order
    rows = sorted(rows, key=lambda e: (e.user, e.timestamp))
    return rows, skipped


def sessionize(events: Sequence[Event], profile: DatasetProfile) -> list[Session]:
    """Cut per-user event streams into sessions.

    A session's window is anchored at its first event; an event at or beyond
    ``session_duration`` seconds from that anchor opens a new session. Long
    sessions are then chunked to ``session_length`` and short chunks dropped.
    """
    windows: list[tuple[str, list[Event]]] = []
    current: list[Event] = []
    for ev in events:
        if current and (ev.user != current[0].user
                        or ev.timestamp - current[0].timestamp >= profile.session_duration):
            windows.append((current[0].user, current))
            current = []
        current.append(ev)
    if current:
        windows.append((current[0].user, current))

    sessions = []
    n = profile.session_length
    for user, evs in windows:
        for start in range(0, len(evs), n):
            chunk = evs[start:start + n]
            if len(chunk) >= 2:
                sessions.append(Session([e.item for e in chunk], [e.side for e in chunk], user))
    return sessions


def filter_rare_items(sessions: Sequence[Session], min_count: int) -> list[Session]:
    """Single pass: drop items seen fewer than ``min_count`` times, then short sessions."""
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")
    counts = Counter(i for s in sessions for i in s.items)
    out = []
    for s in sessions:
        keep = [k for k, item in enumerate(s.items) if counts[item] >= min_count]
        if len(keep) >= 2:
            out.append(Session([s.items[k] for k in keep], [s.sides[k] for k in keep], s.user))
    return out


def build_vocab(sessions: Sequence[Session], side_kind: str = "single") -> Vocabulary:
    """Assign IDs in first-appearance order; 0 stays reserved for padding.

    An item's side value is taken from its first occurrence.
    """
    if not sessions:
        raise ConfigError("cannot build a vocabulary from an empty session list")
    vocab = Vocabulary(side_kind=side_kind)
    for s in sessions:
        for item, side in zip(s.items, s.sides):
            vocab.item_counts[item] += 1
            if item in vocab.item_to_id:
                continue
            item_id = len(vocab.id_to_item)
            vocab.item_to_id[item] = item_id
            vocab.id_to_item.append(item)
            if side_kind == "none" or side is None:
                vocab.item_side[item_id] = EMPTY_SIDE if side_kind == "multi" else 0
            elif side_kind == "multi":
                members = side if isinstance(side, tuple) else (side,)
                vocab.item_side[item_id] = tuple(vocab._add_side(m) for m in members)
            else:
                vocab.item_side[item_id] = vocab._add_side(side)
    return vocab


def split_train_test(sessions: Sequence, test_fraction: float = 0.1, seed: int = 42):
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    if len(sessions) < 2:
        raise ConfigError(f"need at least 2 sessions to split, got {len(sessions)}")
    order = list(range(len(sessions)))
    random.Random(seed).shuffle(order)
    cut = math.floor((1.0 - test_fraction) * len(sessions))
    return [sessions[i] for i in order[:cut]], [sessions[i] for i in order[cut:]]


def expand_prefixes(session: Session, session_length: int) -> list[TrainingExample]:
    n = len(session.items)
    if n > session_length:
        raise ValueError(f"session of length {n} exceeds session_length {session_length}")
    multi = any(isinstance(s, tuple) for s in session.sides)
    pad_side = EMPTY_SIDE if multi else 0
    out = []
    for i in range(1, n):
        pad = session_length - i
        out.append(TrainingExample(
            input=list(session.items[:i]) + [0] * pad,
            side_input=list(session.sides[:i]) + [pad_side] * pad,
            target=session.items[i],
            side_target=session.sides[i],
            prefix_len=i,
        ))
    return out


@dataclass
class ExampleSet:
    """Column-wise arrays for a list of training examples.

    ``side_inputs`` is (N, L, W) and ``side_targets`` is (N, W) with W=1 for
    single-valued sides; sets are left-aligned and zero padded.
    """

    inputs: np.ndarray
    side_inputs: np.ndarray
    targets: np.ndarray
    side_targets: np.ndarray
    prefix_len: np.ndarray

    def __len__(self):
        return len(self.targets)

    def subset(self, idx) -> "ExampleSet":
        return ExampleSet(self.inputs[idx], self.side_inputs[idx], self.targets[idx],
                          self.side_targets[idx], self.prefix_len[idx])

    @classmethod
    def from_examples(cls, examples: Sequence[TrainingExample]) -> "ExampleSet":
        if not examples:
            raise DataError("empty example set")
        L = len(examples[0].input)

        def as_tuple(s):
            return s if isinstance(s, tuple) else ((s,) if s else ())

        width = 1
        for ex in examples:
            for s in list(ex.side_input) + [ex.side_target]:
                width = max(width, len(as_tuple(s)))
        n = len(examples)
        side_in = np.zeros((n, L, width), dtype=np.int64)
        side_tg = np.zeros((n, width), dtype=np.int64)
        for k, ex in enumerate(examples):
            for t, s in enumerate(ex.side_input):
                s = as_tuple(s)
                side_in[k, t, : len(s)] = s
            s = as_tuple(ex.side_target)
            side_tg[k, : len(s)] = s
        return cls(
            inputs=np.array([ex.input for ex in examples], dtype=np.int64),
            side_inputs=side_in,
            targets=np.array([ex.target for ex in examples], dtype=np.int64),
            side_targets=side_tg,
            prefix_len=np.array([ex.prefix_len for ex in examples], dtype=np.int64),
        )


# -- files ------------------------------------------------------------------


def _fmt_side(s) -> str:
    if isinstance(s, tuple):
        return ",".join(str(x) for x in s) if s else "0"
    return str(s)


def _read_side(tok: str, multi: bool):
    if multi:
        return tuple(int(x) for x in tok.split(",") if int(x) != 0)
    return int(tok)


def write_examples(examples: Iterable[TrainingExample], path: str | Path) -> int:
    """One example per line: prefix_len, inputs, target, side inputs, side target (tab separated)."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write("\t".join([
                str(ex.prefix_len),
                " ".join(str(i) for i in ex.input),
                str(ex.target),
                " ".join(_fmt_side(s) for s in ex.side_input),
                _fmt_side(ex.side_target),
            ]) + "\n")
            n += 1
    return n


def read_examples(path: str | Path, multi: bool = False) -> list[TrainingExample]:
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    plen, inputs, target, sides, side_target = line.split("\t")
                    out.append(TrainingExample(
                        input=[int(x) for x in inputs.split()],
                        side_input=[_read_side(x, multi) for x in sides.split()],
                        target=int(target),
                        side_target=_read_side(side_target, multi),
                        prefix_len=int(plen),
                    ))
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: malformed example line") from exc
    except OSError as exc:
        raise DataError(f"cannot read examples file {path}: {exc}") from exc
    return out


def write_vocab(vocab: Vocabulary, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "items.vocab", "w", encoding="utf-8", newline="\n") as fh:
        for raw, idx in vocab.item_to_id.items():
            fh.write(f"{raw}\t{idx}\n")
    with open(out_dir / "sides.vocab", "w", encoding="utf-8", newline="\n") as fh:
        for raw, idx in vocab.side_to_id.items():
            fh.write(f"{raw}\t{idx}\n")
    with open(out_dir / "item_side.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for item in range(1, vocab.n_items):
            fh.write(f"{item}\t{_fmt_side(vocab.item_side[item])}\n")


def read_item_side(path: str | Path, n_items: int | None = None, multi: bool = False) -> np.ndarray:
    """Load ``item_side.tsv`` into the (n_items, width) matrix used by the models."""
    rows = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    item, side = line.rstrip("\n").split("\t")
                    rows[int(item)] = _read_side(side, multi)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read item-side map {path}: {exc}") from exc
    n = (max(rows) + 1 if rows else 1) if n_items is None else n_items
    width = max((len(v) for v in rows.values()), default=1) if multi else 1
    out = np.zeros((n, max(width, 1)), dtype=np.int64)
    for item, side in rows.items():
        ids = side if isinstance(side, tuple) else (side,)
        out[item, : len(ids)] = ids
    return out


def count_vocab_lines(path: str | Path) -> int:
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


@dataclass
class PreprocessResult:
    vocab: Vocabulary
    train_sessions: list
    test_sessions: list
    train_examples: list
    test_examples: list
    skipped_rows: int
    stats: dict


def preprocess(stream, profile: DatasetProfile, columns: ColumnMap,
               test_fraction: float = 0.1, seed: int = 42) -> PreprocessResult:
    """sessionize -> filter rare items -> vocabulary -> split -> expand."""
    events, skipped = parse_events(stream, profile, columns)
    sessions = sessionize(events, profile)
    sessions = filter_rare_items(sessions, profile.min_item_count)
    if len(sessions) < 2:
        raise DataError(f"only {len(sessions)} session(s) survive preprocessing; need at least 2")
    vocab = build_vocab(sessions, profile.side_kind)
    encoded = [vocab.encode(s) for s in sessions]
    train, test = split_train_test(encoded, test_fraction, seed)
    train_ex = [ex for s in train for ex in expand_prefixes(s, profile.session_length)]
    test_ex = [ex for s in test for ex in expand_prefixes(s, profile.session_length)]
    stats = {
        "events": len(events),
        "skipped_rows": skipped,
        "sessions": len(encoded),
        "train_sessions": len(train),
        "test_sessions": len(test),
        "train_examples": len(train_ex),
        "test_examples": len(test_ex),
        "item_vocab_size": vocab.n_items,
        "side_vocab_size": vocab.n_sides,
        "side_kind": profile.side_kind,
        "session_length": profile.session_length,
    }
    return PreprocessResult(vocab, train, test, train_ex, test_ex, skipped, stats)
