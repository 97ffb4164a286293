"""Loop-candidate retrieval: inverted index, normalised scores, islands and
the temporal-consistency gate."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .core import PipelineConfig
from .errors import EmptyIsland, NoPreviousFrame, OutOfOrderFrame
from .vocabulary import BowVector, score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Candidate:
    frame: int
    timestamp: float
    score: float
    eta: float


@dataclass(frozen=True)
class Island:
    start: float
    end: float
    members: tuple[Candidate, ...]

    @property
    def H(self) -> float:
        return float(sum(c.eta for c in self.members))

    @property
    def interval(self) -> tuple[float, float]:
        return (self.start, self.end)


@dataclass(frozen=True)
class QueryRecord:
    frame: int
    island: tuple[float, float] | None


@dataclass
class QueryResult:
    """What a query produced, including the normaliser it used."""

    candidates: list[Candidate]
    prev_score: float | None = None
    abstained: bool = False
    n_scored: int = 0


class InvertedIndex:
    """Word -> (frame, weight) postings over every stored BoW vector."""

    def __init__(self):
        self._postings: dict[int, tuple[list[int], list[float]]] = {}
        self.vectors: dict[int, BowVector] = {}
        self.timestamps: dict[int, float] = {}
        self.order: list[int] = []

    def __len__(self) -> int:
        return len(self.order)

    def __contains__(self, frame: int) -> bool:
        return frame in self.vectors

    @property
    def last_frame(self) -> int | None:
        return self.order[-1] if self.order else None

    def add(self, frame: int, bow: BowVector, timestamp: float) -> None:
        if self.order and frame <= self.order[-1]:
            raise OutOfOrderFrame(f"frame {frame} is not newer than {self.order[-1]}")
        if self.order and timestamp <= self.timestamps[self.order[-1]]:
            raise OutOfOrderFrame(f"timestamp {timestamp} is not after {self.timestamps[self.order[-1]]}")
        self.vectors[frame] = bow
        self.timestamps[frame] = float(timestamp)
        self.order.append(frame)
        for w, x in zip(bow.words.tolist(), bow.weights.tolist()):
            ids, ws = self._postings.setdefault(w, ([], []))
            ids.append(frame)
            ws.append(x)

    def postings(self, word: int) -> list[tuple[int, float]]:
        ids, ws = self._postings.get(word, ([], []))
        return list(zip(ids, ws))

    def scores(self, bow: BowVector, max_timestamp: float | None = None) -> list[tuple[int, float]]:
        """Similarity to every stored frame sharing a word with ``bow``.

        Sorted by descending score, ties by ascending frame id.  Only frames
        with ``timestamp <= max_timestamp`` are kept when a bound is given.
        For L1-normalised vectors ``1 - |a-b|_1/2`` equals the sum over
        shared words of ``min(a_w, b_w)``, which only needs the postings.
        """
        if len(bow) == 0:
            return []
        acc: dict[int, float] = {}
        # accumulate word by word in ascending word order, like score()
        for w, q in zip(bow.words.tolist(), bow.weights.tolist()):
            post = self._postings.get(w)
            if post is None:
                continue
            for f, x in zip(*post):
                acc[f] = acc.get(f, 0.0) + (q if q < x else x)
        items = ((f, min(1.0, s)) for f, s in acc.items())
        if max_timestamp is not None:
            items = ((f, s) for f, s in items if self.timestamps[f] <= max_timestamp)
        return sorted(items, key=lambda fs: (-fs[1], fs[0]))


class LoopDatabase:
    """Inverted index plus the per-query history the consistency gate needs."""

    def __init__(self, cfg: PipelineConfig | None = None):
        self.cfg = cfg or PipelineConfig()
        self.index = InvertedIndex()
        self.history: list[QueryRecord] = []

    def __len__(self) -> int:
        return len(self.index)

    def add(self, frame: int, bow: BowVector, timestamp: float) -> None:
        self.index.add(frame, bow, timestamp)

    def query(self, bow: BowVector, timestamp: float) -> QueryResult:
        """Normalised candidates for a query taken at ``timestamp``.

        Frames newer than ``timestamp - temporal_exclusion`` are ignored.
        The normaliser is the similarity to the most recently stored frame;
        below ``normalizer_epsilon`` the query abstains.
        """
        cfg = self.cfg
        prev = self.index.last_frame
        if prev is None:
            raise NoPreviousFrame("the database is empty")
        s_prev = score(bow, self.index.vectors[prev])
        if s_prev < cfg.normalizer_epsilon:
            log.debug("abstaining: previous-frame similarity %.4g below %.4g", s_prev, cfg.normalizer_epsilon)
            return QueryResult([], s_prev, abstained=True)
        cands = []
        scored = self.index.scores(bow, timestamp - cfg.temporal_exclusion)
        for frame, s in scored:
            eta = s / s_prev
            if eta >= cfg.norm_score_threshold:
                cands.append(Candidate(frame, self.index.timestamps[frame], s, eta))
        cands.sort(key=lambda c: (-c.eta, c.frame))
        return QueryResult(cands, s_prev, n_scored=len(scored))

    def record(self, frame: int, island: Island | None) -> None:
        self.history.append(QueryRecord(frame, None if island is None else island.interval))


def group_islands(cands: list[Candidate], max_gap: float) -> list[Island]:
    """Split time-sorted candidates wherever consecutive stamps differ by more than ``max_gap``."""
    if not cands:
        return []
    ordered = sorted(cands, key=lambda c: (c.timestamp, c.frame))
    islands, current = [], [ordered[0]]
    for c in ordered[1:]:
        if c.timestamp - current[-1].timestamp > max_gap:
            islands.append(current)
            current = [c]
        else:
            current.append(c)
    islands.append(current)
    return [Island(g[0].timestamp, g[-1].timestamp, tuple(g)) for g in islands]


def rank_islands(islands: list[Island]) -> list[Island]:
    return sorted(islands, key=lambda isl: (-isl.H, isl.start))


def intervals_agree(a: tuple[float, float], b: tuple[float, float], max_gap: float) -> bool:
    """Overlapping intervals, or separated by at most ``max_gap``."""
    return a[0] <= b[1] + max_gap and b[0] <= a[1] + max_gap


def temporal_consistency(history: list[QueryRecord], island: Island, k: int, max_gap: float = 0.0) -> bool:
    if k <= 0:
        return True
    if len(history) < k:
        return False
    return all(rec.island is not None and intervals_agree(rec.island, island.interval, max_gap) for rec in history[-k:])


def select_candidate(island: Island) -> Candidate:
    if not island.members:
        raise EmptyIsland("island has no members")
    return min(island.members, key=lambda c: (-c.eta, c.timestamp))
