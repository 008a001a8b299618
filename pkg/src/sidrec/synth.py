"""Synthetic sessions with sticky categories and in-session repeats."""

from __future__ import annotations

import csv

import numpy as np

from .config import SynthConfig
from .data import Session

STEP_SECONDS = 60


def item_categories(n_items: int, n_categories: int) -> np.ndarray:
    """Even contiguous partition: category of item k (0-based) for k < n_items."""
    return (np.arange(n_items) * n_categories) // n_items


def synth_generate(config: SynthConfig) -> tuple[list[Session], dict]:
    """Generate sessions of raw item keys plus the item -> category map.

    Each step after the first repeats a uniformly chosen earlier in-session
    item with probability q; otherwise with probability p it draws an item
    from the current category (preferring ones not yet in the session), else
    it switches to a uniformly random category and draws from that.
    """
    rng = np.random.default_rng(config.seed)
    cats = item_categories(config.n_items, config.n_categories)
    members = [np.flatnonzero(cats == c) for c in range(config.n_categories)]
    lo, hi = config.session_len_range
    p, q = config.category_stickiness, config.repeat_prob

    def draw(cat: int, seen: set) -> int:
        pool = members[cat]
        fresh = [i for i in pool if i not in seen]
        choices = fresh if fresh else pool
        return int(choices[rng.integers(len(choices))])

    sessions = []
    for s in range(config.n_sessions):
        length = int(rng.integers(lo, hi + 1))
        cat = int(rng.integers(config.n_categories))
        items = [draw(cat, set())]
        while len(items) < length:
            u = rng.random()
            if u < q:
                nxt = items[int(rng.integers(len(items)))]
            elif rng.random() < p:
                nxt = draw(cat, set(items))
            else:
                cat = int(rng.integers(config.n_categories))
                nxt = draw(cat, set(items))
            cat = int(cats[nxt])
            items.append(nxt)
        keys = [f"i{i}" for i in items]
        sessions.append(Session(keys, [f"c{cats[i]}" for i in items], user=f"u{s:06d}"))
    mapping = {f"i{i}": f"c{cats[i]}" for i in range(config.n_items)}
    return sessions, mapping


def write_events(sessions, path) -> None:
    """Event log with header ``user,timestamp,item,side``; one user per session.

    ``path`` is a filename or an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(sessions, path)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write_rows(sessions, fh)


def _write_rows(sessions, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["user", "timestamp", "item", "side"])
    for s in sessions:
        for k, (item, side) in enumerate(zip(s.items, s.sides)):
            w.writerow([s.user, k * STEP_SECONDS, item, side])


def same_category_rate(sessions) -> tuple[float, int]:
    """Share of within-session transitions that stay in one category, and their count."""
    same = total = 0
    for s in sessions:
        for a, b in zip(s.sides[:-1], s.sides[1:]):
            same += a == b
            total += 1
    return (same / total if total else float("nan")), total
