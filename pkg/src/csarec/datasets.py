"""Session parsing, replay-tuple construction, splits and synthetic corpora."""

from __future__ import annotations

import csv
import enum
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

TSV_COLUMNS = ("session_id", "item_id", "feedback", "timestamp")
SPLIT_FORMAT = "csarec-split/1"
TUPLE_FORMAT = "csarec-tuples/1"

DEFAULT_REWARDS = {"click": 0.2, "purchase": 1.0}


class Feedback(enum.IntEnum):
    CLICK = 0
    PURCHASE = 1

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Feedback":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown feedback label {label!r}") from None


DEFAULT_FEEDBACK_MAP = {"click": Feedback.CLICK, "purchase": Feedback.PURCHASE}
RETAILROCKET_FEEDBACK_MAP = {"view": Feedback.CLICK, "addtocart": Feedback.PURCHASE}


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    item_id: int
    feedback: Feedback
    timestamp: int


@dataclass
class Session:
    session_id: str
    interactions: list[Interaction] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.interactions)

    @property
    def items(self) -> list[int]:
        return [x.item_id for x in self.interactions]


@dataclass(frozen=True)
class CatalogInfo:
    """Real items occupy ``[0, num_items)``; two special tokens follow."""

    num_items: int

    @property
    def pad_id(self) -> int:
        return self.num_items

    @property
    def mask_id(self) -> int:
        return self.num_items + 1

    @property
    def vocab_size(self) -> int:
        return self.num_items + 2


@dataclass(frozen=True)
class ReplayTuple:
    state_seq: tuple[int, ...]
    action: int
    reward: float
    next_seq: tuple[int, ...]
    terminal: bool
    feedback: Feedback
    state_len: int
    next_len: int


# ---------------------------------------------------------------------------
# parsing


def _raw_sort_key(raw: str):
    try:
        return (0, int(raw), raw)
    except ValueError:
        return (1, 0, raw)


def parse_sessions(
    rows: Iterable[Mapping[str, str]],
    feedback_map: Mapping[str, Feedback] | None = None,
    min_length: int = 3,
) -> tuple[list[Session], list[str]]:
    """Group rows into time-ordered sessions and re-index items densely.

    Returns the surviving sessions (ordered by session id) and the list of raw
    item ids, where position ``k`` holds the raw id that was mapped to ``k``.
    Only items occurring in surviving sessions get an index.
    """
    fmap = {k.lower(): v for k, v in (feedback_map or DEFAULT_FEEDBACK_MAP).items()}
    grouped: dict[str, list[tuple[int, str, Feedback]]] = {}
    for rowno, row in enumerate(rows, start=1):
        try:
            sid = row["session_id"]
            raw_item = row["item_id"]
            label = row["feedback"]
            ts = int(row["timestamp"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"row {rowno}: malformed record ({exc})") from None
        if sid is None or raw_item is None or label is None or sid == "" or raw_item == "":
            raise ParseError(f"row {rowno}: malformed record (empty field)")
        fb = fmap.get(label.strip().lower())
        if fb is None:
            raise ParseError(f"row {rowno}: unknown feedback label {label!r}")
        grouped.setdefault(sid, []).append((ts, raw_item.strip(), fb))

    kept = {}
    for sid, events in grouped.items():
        if len(events) < min_length:
            continue
        events.sort(key=lambda e: e[0])  # stable: ties keep file order
        kept[sid] = events

    raw_ids = sorted({e[1] for ev in kept.values() for e in ev}, key=_raw_sort_key)
    index = {raw: k for k, raw in enumerate(raw_ids)}
    sessions = []
    for sid in sorted(kept, key=_raw_sort_key):
        sessions.append(
            Session(sid, [Interaction(index[raw], fb, ts) for ts, raw, fb in kept[sid]])
        )
    return sessions, raw_ids


def read_sessions_tsv(
    path: str | os.PathLike,
    feedback_map: Mapping[str, Feedback] | None = None,
    min_length: int = 3,
) -> tuple[list[Session], list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = [c for c in TSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: header lacks columns {missing}")
        return parse_sessions(reader, feedback_map=feedback_map, min_length=min_length)


def write_sessions_tsv(sessions: Iterable[Session], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(TSV_COLUMNS)
        for s in sessions:
            for x in s.interactions:
                writer.writerow([s.session_id, x.item_id, x.feedback.label, x.timestamp])


# ---------------------------------------------------------------------------
# replay tuples


def pad_left(items: Sequence[int], length: int, pad_id: int) -> tuple[int, ...]:
    tail = list(items[-length:])
    return tuple([pad_id] * (length - len(tail)) + tail)


def build_replay_tuples(
    session: Session,
    L: int,
    catalog: CatalogInfo,
    rewards: Mapping[str, float] | None = None,
) -> list[ReplayTuple]:
    """One transition per position ``t = 1..len-1`` of the session.

    The state is the last ``L`` items of the prefix ``x_{1:t}``; the action is
    the item at ``t + 1`` and the reward is looked up from its feedback type.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if len(session) < 2:
        raise ValueError(f"session {session.session_id!r} has fewer than 2 interactions")
    rw = dict(DEFAULT_REWARDS if rewards is None else rewards)
    items = session.items
    pad = catalog.pad_id
    out = []
    n = len(items)
    for t in range(1, n):
        nxt = session.interactions[t]
        out.append(
            ReplayTuple(
                state_seq=pad_left(items[:t], L, pad),
                action=items[t],
                reward=float(rw[nxt.feedback.label]),
                next_seq=pad_left(items[: t + 1], L, pad),
                terminal=(t == n - 1),
                feedback=nxt.feedback,
                state_len=min(t, L),
                next_len=min(t + 1, L),
            )
        )
    return out


@dataclass
class TupleArrays:
    """Column-wise replay tuples, the layout the trainer and evaluator consume."""

    state: np.ndarray  # (N, L) int64
    action: np.ndarray  # (N,) int64
    reward: np.ndarray  # (N,) float64
    next_state: np.ndarray  # (N, L) int64
    terminal: np.ndarray  # (N,) bool
    feedback: np.ndarray  # (N,) int8
    state_len: np.ndarray  # (N,) int64
    next_len: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return len(self.action)

    def take(self, idx) -> "TupleArrays":
        return TupleArrays(**{k: v[idx] for k, v in self.__dict__.items()})

    def filter_feedback(self, feedback: Feedback | None) -> "TupleArrays":
        if feedback is None:
            return self
        return self.take(np.flatnonzero(self.feedback == int(feedback)))

    @classmethod
    def from_tuples(cls, tuples: Sequence[ReplayTuple], L: int) -> "TupleArrays":
        n = len(tuples)
        return cls(
            state=np.array([t.state_seq for t in tuples], dtype=np.int64).reshape(n, L),
            action=np.array([t.action for t in tuples], dtype=np.int64),
            reward=np.array([t.reward for t in tuples], dtype=np.float64),
            next_state=np.array([t.next_seq for t in tuples], dtype=np.int64).reshape(n, L),
            terminal=np.array([t.terminal for t in tuples], dtype=bool),
            feedback=np.array([int(t.feedback) for t in tuples], dtype=np.int8),
            state_len=np.array([t.state_len for t in tuples], dtype=np.int64),
            next_len=np.array([t.next_len for t in tuples], dtype=np.int64),
        )

    @classmethod
    def from_sessions(
        cls,
        sessions: Iterable[Session],
        L: int,
        catalog: CatalogInfo,
        rewards: Mapping[str, float] | None = None,
    ) -> "TupleArrays":
        tuples = [t for s in sessions for t in build_replay_tuples(s, L, catalog, rewards)]
        return cls.from_tuples(tuples, L)


def save_tuples(arrays: TupleArrays, path: str | os.PathLike, catalog: CatalogInfo) -> None:
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(TUPLE_FORMAT),
            num_items=np.array(catalog.num_items),
            **arrays.__dict__,
        )


def load_tuples(path: str | os.PathLike) -> tuple[TupleArrays, CatalogInfo]:
    with np.load(path, allow_pickle=False) as z:
        tag = str(z["format"]) if "format" in z.files else None
        if tag != TUPLE_FORMAT:
            raise ValueError(f"{path}: tuple cache format {tag!r}, expected {TUPLE_FORMAT!r}")
        arrays = TupleArrays(**{k: z[k] for k in TupleArrays.__dataclass_fields__})
        return arrays, CatalogInfo(int(z["num_items"]))


# ---------------------------------------------------------------------------
# splits


def split_sessions(
    sessions: Sequence[Session],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[Session], list[Session], list[Session]]:
    """Seeded by-session split into train / validation / test."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    n = len(sessions)
    if n < 3:
        raise ValueError(f"need at least 3 sessions to split, got {n}")
    total = float(sum(ratios))
    n_val = max(1, int(round(n * ratios[1] / total)))
    n_test = max(1, int(round(n * ratios[2] / total)))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError(f"ratios {ratios} leave no training sessions out of {n}")
    perm = np.random.default_rng(seed).permutation(n)
    pick = lambda idx: [sessions[i] for i in sorted(idx)]  # noqa: E731
    return (
        pick(perm[:n_train]),
        pick(perm[n_train : n_train + n_val]),
        pick(perm[n_train + n_val :]),
    )


def split_manifest(train, val, test, seed: int) -> str:
    doc = {
        "format": SPLIT_FORMAT,
        "seed": seed,
        "train": [s.session_id for s in train],
        "validation": [s.session_id for s in val],
        "test": [s.session_id for s in test],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# synthetic corpora


def check_stochastic(matrix: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {m.shape}")
    if (m < 0).any() or not np.allclose(m.sum(axis=1), 1.0, atol=atol):
        raise ValueError("transition matrix is not row-stochastic")
    return m


def two_cluster_transition(
    num_items: int, leak: float = 0.05, concentration: float = 0.3, seed: int = 0
) -> np.ndarray:
    """Block-diagonal transitions: each row keeps ``1 - leak`` mass in its own
    half of the catalog (Dirichlet-distributed) and spreads ``leak`` uniformly
    over the other half."""
    if num_items < 2:
        raise ValueError("need at least 2 items")
    rng = np.random.default_rng(seed)
    half = num_items // 2
    clusters = [np.arange(half), np.arange(half, num_items)]
    m = np.zeros((num_items, num_items))
    for c, members in enumerate(clusters):
        others = clusters[1 - c]
        for i in members:
            m[i, members] = (1.0 - leak) * rng.dirichlet(np.full(len(members), concentration))
            m[i, others] = leak / len(others)
    return m


def generate_synthetic(
    num_sessions: int,
    num_items: int,
    seed: int,
    transition: np.ndarray,
    purchase_prob: float | Sequence[float] = 0.2,
    length_range: tuple[int, int] = (3, 12),
    initial: np.ndarray | None = None,
) -> list[Session]:
    """Sample sessions by walking a first-order transition matrix.

    ``purchase_prob`` is either one probability or one per item.
    """
    m = check_stochastic(transition)
    if m.shape[0] != num_items:
        raise ValueError(f"transition matrix is {m.shape[0]}x{m.shape[0]}, num_items={num_items}")
    pp = np.broadcast_to(np.asarray(purchase_prob, dtype=np.float64), (num_items,))
    if (pp < 0).any() or (pp > 1).any():
        raise ValueError("purchase_prob must lie in [0, 1]")
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise ValueError(f"bad length_range {length_range}")
    init = np.full(num_items, 1.0 / num_items) if initial is None else np.asarray(initial, float)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(m, axis=1)
    cdf[:, -1] = 1.0
    width = len(str(max(num_sessions - 1, 0)))
    sessions = []
    for k in range(num_sessions):
        length = int(rng.integers(lo, hi + 1))
        item = int(rng.choice(num_items, p=init))
        inter = []
        for t in range(length):
            if t:
                item = int(np.searchsorted(cdf[item], rng.random(), side="right"))
            fb = Feedback.PURCHASE if rng.random() < pp[item] else Feedback.CLICK
            inter.append(Interaction(item, fb, t))
        sessions.append(Session(f"s{k:0{width}d}", inter))
    return sessions
