"""Hierarchical bag of binary words.

A vocabulary tree is trained by recursive k-majority clustering (k-medoids
style iteration where each centre is the bitwise majority of its members).
Descriptor sets map to tf-idf weighted, L1-normalised sparse vectors that
are compared with the L1 similarity ``s = 1 - |a - b|_1 / 2``.
"""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, EmptyCluster, NotNormalized, TooFewDescriptors, Truncated, VersionMismatch
from .features import DESCRIPTOR_BYTES, as_words

MAGIC = b"SLVOC1"
FORMAT_VERSION = 1
NORM_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# BoW vectors


@dataclass(frozen=True, eq=False)
class BowVector:
    """Sparse word-id -> weight map kept as two sorted parallel arrays."""

    words: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.words, dtype=np.int64).reshape(-1)
        x = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(x):
            raise ValueError("words and weights differ in length")
        order = np.argsort(w, kind="stable")
        object.__setattr__(self, "words", w[order])
        object.__setattr__(self, "weights", x[order])

    @classmethod
    def empty(cls) -> "BowVector":
        return cls(np.zeros(0, np.int64), np.zeros(0))

    @classmethod
    def from_dict(cls, d: dict[int, float]) -> "BowVector":
        items = sorted(d.items())
        return cls(np.array([k for k, _ in items], np.int64), np.array([v for _, v in items], float))

    def as_dict(self) -> dict[int, float]:
        return {int(k): float(v) for k, v in zip(self.words, self.weights)}

    def __len__(self) -> int:
        return len(self.words)

    def l1(self) -> float:
        return float(np.abs(self.weights).sum())

    def is_normalized(self, tol: float = NORM_TOLERANCE) -> bool:
        return len(self) == 0 or abs(self.l1() - 1.0) <= tol


def score(a: BowVector, b: BowVector) -> float:
    """L1 similarity ``1 - |a - b|_1 / 2`` in [0, 1] of two normalised vectors.

    With non-negative weights summing to one this equals the sum over
    shared words of ``min(a_w, b_w)``, which is what is evaluated (the
    inverted index uses the same form, so both agree bit for bit).
    """
    if len(a) == 0 or len(b) == 0:
        return 0.0
    for v in (a, b):
        if not v.is_normalized():
            raise NotNormalized(f"BoW vector has L1 norm {v.l1():.9f}")
    _, ia, ib = np.intersect1d(a.words, b.words, assume_unique=True, return_indices=True)
    if len(ia) == 0:
        return 0.0
    s = 0.0
    for x in np.minimum(a.weights[ia], b.weights[ib]).tolist():
        s += x
    return min(1.0, s)


# ---------------------------------------------------------------------------
# k-majority clustering


def _hamming_to(words: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words[:, None, :] ^ centers[None, :, :]).sum(axis=2)


def _majority(desc: np.ndarray) -> np.ndarray:
    bits = np.unpackbits(desc, axis=1, bitorder="little")
    # ties go to 0
    maj = (2 * bits.sum(axis=0, dtype=np.int64) > len(desc)).astype(np.uint8)
    return np.packbits(maj, bitorder="little")


def k_majority(desc: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 25):
    """Cluster binary descriptors; returns ``(centers, labels)``.

    Seeding is greedy k-means++ under squared Hamming distance.  An empty cluster is
    re-seeded with the member farthest from its centre; after ``k``
    failed re-seeds :class:`EmptyCluster` is raised.
    """
    n = len(desc)
    words = as_words(desc)
    first = int(rng.integers(n))
    chosen = [first]
    dmin = _hamming_to(words, words[[first]])[:, 0].astype(float)
    trials = 2 + int(math.log(k))
    for _ in range(1, k):
        w = dmin**2
        total = w.sum()
        if total <= 0:
            raise EmptyCluster("fewer distinct descriptors than clusters")
        # greedy variant: keep the sampled candidate that lowers the potential most
        cand = rng.choice(n, size=trials, p=w / total)
        dc = np.minimum(dmin[:, None], _hamming_to(words, words[cand]))
        best = int(np.argmin((dc**2).sum(axis=0)))
        chosen.append(int(cand[best]))
        dmin = dc[:, best]
    centers = desc[chosen].copy()

    labels = None
    reseeds = 0
    for _ in range(max_iter):
        D = _hamming_to(words, as_words(centers))
        new_labels = D.argmin(axis=1)
        counts = np.bincount(new_labels, minlength=k)
        if np.any(counts == 0):
            reseeds += 1
            if reseeds > k:
                raise EmptyCluster(f"could not fill {int((counts == 0).sum())} empty clusters")
            far = D[np.arange(n), new_labels].astype(np.int64)
            for c in np.flatnonzero(counts == 0):
                idx = int(np.argmax(far))
                centers[c] = desc[idx]
                far[idx] = -1
            continue
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centers[c] = _majority(desc[labels == c])
    D = _hamming_to(words, as_words(centers))
    labels = D.argmin(axis=1)
    return centers, labels


# ---------------------------------------------------------------------------
# vocabulary tree


class VocabularyTree:
    """Immutable tree; node 0 is the root and nodes are stored breadth-first.

    Leaves sit at depth ``depth`` and are numbered as words in breadth-first
    order.  ``children`` is an ``(n_nodes, k_b)`` table padded with -1.
    """

    def __init__(self, branching: int, depth: int, centroids: np.ndarray, children: list[list[int]], idf: np.ndarray):
        self.branching = int(branching)
        self.depth = int(depth)
        self.centroids = np.ascontiguousarray(centroids, dtype=np.uint8).reshape(-1, DESCRIPTOR_BYTES)
        n = len(self.centroids)
        self.children = np.full((n, max(1, self.branching)), -1, dtype=np.int64)
        for i, ch in enumerate(children):
            self.children[i, : len(ch)] = ch
        self.idf = np.asarray(idf, dtype=float)
        leaves = [i for i in self._bfs_levels()[self.depth]] if n else []
        self.leaf_nodes = np.array(leaves, dtype=np.int64)
        self.node_word = np.full(n, -1, dtype=np.int64)
        self.node_word[self.leaf_nodes] = np.arange(len(leaves))
        if len(self.idf) != len(leaves):
            raise ValueError("idf table does not match the number of leaves")

    def _bfs_levels(self) -> list[list[int]]:
        levels = [[0]]
        for _ in range(self.depth):
            nxt = []
            for node in levels[-1]:
                nxt.extend(int(c) for c in self.children[node] if c >= 0)
            levels.append(nxt)
        return levels

    @property
    def n_words(self) -> int:
        return len(self.leaf_nodes)

    def node_children(self, node: int) -> list[int]:
        return [int(c) for c in self.children[node] if c >= 0]

    def words_of(self, descriptors: np.ndarray) -> np.ndarray:
        """Greedy descent: at every level move to the child with the closest centroid."""
        desc = np.asarray(descriptors, dtype=np.uint8).reshape(-1, DESCRIPTOR_BYTES)
        if len(desc) == 0:
            return np.zeros(0, dtype=np.int64)
        words = as_words(desc)
        cent = as_words(self.centroids)
        node = np.zeros(len(desc), dtype=np.int64)
        for _ in range(self.depth):
            ch = self.children[node]  # (n, k_b)
            d = np.bitwise_count(words[:, None, :] ^ cent[np.maximum(ch, 0)]).sum(axis=2)
            d = np.where(ch >= 0, d, np.iinfo(np.int64).max)
            node = ch[np.arange(len(desc)), d.argmin(axis=1)]
        return self.node_word[node]

    def transform(self, descriptors: np.ndarray) -> BowVector:
        """tf-idf BoW vector, L1-normalised; zero-weight words are dropped."""
        w = self.words_of(descriptors)
        if len(w) == 0:
            return BowVector.empty()
        ids, counts = np.unique(w, return_counts=True)
        weights = counts / len(w) * self.idf[ids]
        keep = weights > 0
        ids, weights = ids[keep], weights[keep]
        if len(ids) == 0:
            return BowVector.empty()
        return BowVector(ids, weights / weights.sum())

    # -- serialisation --------------------------------------------------

    def save(self, path: str | Path) -> None:
        parts = [MAGIC, struct.pack("<IIIII", FORMAT_VERSION, self.branching, self.depth, self.n_words, len(self.centroids))]
        for i in range(len(self.centroids)):
            ch = self.node_children(i)
            parts.append(self.centroids[i].tobytes())
            parts.append(struct.pack(f"<I{len(ch)}I", len(ch), *ch))
        parts.append(self.idf.astype("<f8").tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> "VocabularyTree":
        data = Path(path).read_bytes()
        if len(data) < len(MAGIC):
            raise Truncated("file shorter than the magic header")
        if data[:5] != MAGIC[:5]:
            raise BadMagic(f"not a vocabulary file: {data[:6]!r}")
        if data[: len(MAGIC)] != MAGIC:
            raise VersionMismatch(f"unsupported vocabulary format {data[:6]!r}")
        off = len(MAGIC)

        def take(n: int) -> bytes:
            nonlocal off
            if off + n > len(data):
                raise Truncated(f"vocabulary file ends at byte {len(data)}, needed {off + n}")
            chunk = data[off : off + n]
            off += n
            return chunk

        version, kb, depth, n_words, n_nodes = struct.unpack("<IIIII", take(20))
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
        cents = np.empty((n_nodes, DESCRIPTOR_BYTES), dtype=np.uint8)
        children = []
        for i in range(n_nodes):
            cents[i] = np.frombuffer(take(DESCRIPTOR_BYTES), dtype=np.uint8)
            (nc,) = struct.unpack("<I", take(4))
            children.append(list(struct.unpack(f"<{nc}I", take(4 * nc))))
        idf = np.frombuffer(take(8 * n_words), dtype="<f8").astype(float)
        if off != len(data):
            raise VersionMismatch("trailing bytes after the idf table")
        return cls(kb, depth, cents, children, idf)

    def structurally_equal(self, other: "VocabularyTree") -> bool:
        return (
            self.branching == other.branching
            and self.depth == other.depth
            and np.array_equal(self.centroids, other.centroids)
            and np.array_equal(self.children, other.children)
            and np.array_equal(self.idf, other.idf)
        )


def train(
    descriptors: np.ndarray,
    branching: int = 10,
    depth: int = 5,
    seed: int = 0,
    image_ids: np.ndarray | None = None,
) -> VocabularyTree:
    """Build a vocabulary tree by recursive k-majority clustering.

    ``image_ids`` (one per descriptor) makes idf count images; without it
    every descriptor counts as its own document.
    """
    desc = np.ascontiguousarray(descriptors, dtype=np.uint8).reshape(-1, DESCRIPTOR_BYTES)
    if branching < 2 or depth < 1:
        raise ValueError("branching must be >= 2 and depth >= 1")
    need = branching**depth
    if len(desc) < need:
        raise TooFewDescriptors(f"{len(desc)} descriptors, need at least {need} for k_b={branching}, L={depth}")
    rng = np.random.default_rng(seed)

    centroids = [np.zeros(DESCRIPTOR_BYTES, dtype=np.uint8)]
    children: list[list[int]] = [[]]
    queue = deque([(0, np.arange(len(desc)), 0)])
    while queue:
        node, idx, level = queue.popleft()
        if level == depth:
            continue
        sub = desc[idx]
        uniq, first = np.unique(sub, axis=0, return_index=True)
        if len(uniq) <= branching:
            # too few distinct points to split: one child per distinct value
            groups_c = sub[np.sort(first)]
            labels = (sub[:, None, :] == groups_c[None, :, :]).all(axis=2).argmax(axis=1)
        else:
            groups_c, labels = k_majority(sub, branching, rng)
        for c in range(len(groups_c)):
            members = idx[labels == c]
            if len(members) == 0:
                continue
            child = len(centroids)
            centroids.append(groups_c[c].copy())
            children.append([])
            children[node].append(child)
            queue.append((child, members, level + 1))

    tree = VocabularyTree(branching, depth, np.array(centroids), children, np.zeros(_count_leaves(children, depth)))
    words = tree.words_of(desc)
    if image_ids is None:
        n_docs = len(desc)
        occurrences = np.bincount(words, minlength=tree.n_words)
    else:
        image_ids = np.asarray(image_ids).reshape(-1)
        if len(image_ids) != len(desc):
            raise ValueError("image_ids must have one entry per descriptor")
        n_docs = len(np.unique(image_ids))
        pairs = np.unique(np.column_stack([words, np.unique(image_ids, return_inverse=True)[1]]), axis=0)
        occurrences = np.bincount(pairs[:, 0], minlength=tree.n_words)
    idf = np.log(n_docs / np.maximum(occurrences, 1))
    return VocabularyTree(branching, depth, np.array(centroids), children, idf)


def _count_leaves(children: list[list[int]], depth: int) -> int:
    level = [0]
    for _ in range(depth):
        level = [c for n in level for c in children[n]]
    return len(level)

