import logging
import struct
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import Any, TextIO

import numpy as np

from utils.errors import EmptyDatasetError, RatingRangeError, RatingsFormatError

logger = logging.getLogger(__name__)

DEFAULT_MAX_RATING = 5
SNAPSHOT_MAGIC = b"RMAT"


@dataclass
class RatingMatrix:
    """Sparse user x item integer ratings with the raw-id mapping kept alongside.

    Zero means unrated and is never stored.
    """

    num_users: int
    num_items: int
    entries: dict[tuple[int, int], int] = field(default_factory=dict)
    max_rating: int = DEFAULT_MAX_RATING
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.user_ids:
            self.user_ids = [str(u) for u in range(self.num_users)]
        if not self.item_ids:
            self.item_ids = [str(j) for j in range(self.num_items)]
        for (u, j), r in self.entries.items():
            if not (0 <= u < self.num_users and 0 <= j < self.num_items):
                raise ValueError(f"entry ({u}, {j}) outside a {self.num_users}x{self.num_items} matrix")
            if not 1 <= r <= self.max_rating:
                raise RatingRangeError(f"rating {r} for ({u}, {j}) outside 1..{self.max_rating}")
        self._by_user: dict[int, dict[int, int]] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def by_user(self) -> dict[int, dict[int, int]]:
        if self._by_user is None:
            index: dict[int, dict[int, int]] = {u: {} for u in range(self.num_users)}
            for (u, j), r in self.entries.items():
                index[u][j] = r
            self._by_user = index
        return self._by_user

    def user_ratings(self, user: int) -> dict[int, int]:
        if not 0 <= user < self.num_users:
            raise IndexError(f"unknown user index {user}")
        return self.by_user()[user]

    def user_vector(self, user: int) -> np.ndarray:
        vector = np.zeros(self.num_items, dtype=np.float64)
        for j, r in self.user_ratings(user).items():
            vector[j] = r
        return vector

    def rated_mask(self, user: int) -> list[bool]:
        rated = self.user_ratings(user)
        return [j in rated for j in range(self.num_items)]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.num_users, self.num_items), dtype=np.float64)
        for (u, j), r in self.entries.items():
            dense[u, j] = r
        return dense

    def subset_users(self, users: Iterable[int]) -> "RatingMatrix":
        """Matrix restricted to ``users`` (renumbered in the given order), same item space."""
        keep = list(users)
        remap = {old: new for new, old in enumerate(keep)}
        entries = {(remap[u], j): r for (u, j), r in self.entries.items() if u in remap}
        return RatingMatrix(
            num_users=len(keep),
            num_items=self.num_items,
            entries=entries,
            max_rating=self.max_rating,
            user_ids=[self.user_ids[u] for u in keep],
            item_ids=list(self.item_ids),
        )

    def user_index(self, raw_id: str) -> int:
        try:
            return self.user_ids.index(str(raw_id))
        except ValueError:
            raise KeyError(f"unknown user id {raw_id}") from None


@dataclass
class RatingStats:
    global_mean: float
    user_mean: np.ndarray
    item_mean: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray


def _split_line(line: str, line_number: int) -> list[str]:
    if "::" in line:
        return line.split("::")
    if "\t" in line:
        return line.split("\t")
    raise RatingsFormatError("expected '::' or tab separated fields", line_number)


def parse_movielens(stream: TextIO | Iterable[str], max_rating: int = DEFAULT_MAX_RATING) -> RatingMatrix:
    """Parse MovieLens 1M (``::``) or 100k (tab) rating lines.

    Raw ids are mapped to contiguous 0-based indices in order of first appearance.
    Timestamps are read and discarded.
    """
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    entries: dict[tuple[int, int], int] = {}

    for line_number, raw_line in enumerate(stream, start=1):
        line = raw_line.strip()
        if not line:
            continue

        fields = _split_line(line, line_number)
        if len(fields) not in (3, 4):
            raise RatingsFormatError(f"expected 3 or 4 fields, found {len(fields)}", line_number)

        user_raw, item_raw, rating_raw = (f.strip() for f in fields[:3])
        if not user_raw or not item_raw:
            raise RatingsFormatError("empty user or item id", line_number)
        try:
            rating = int(rating_raw)
        except ValueError:
            raise RatingsFormatError(f"rating {rating_raw!r} is not an integer", line_number) from None
        if not 1 <= rating <= max_rating:
            raise RatingRangeError(f"rating {rating} outside 1..{max_rating}", line_number)

        u = user_map.setdefault(user_raw, len(user_map))
        j = item_map.setdefault(item_raw, len(item_map))
        if (u, j) in entries:
            raise RatingsFormatError(f"duplicate rating for user {user_raw}, item {item_raw}", line_number)
        entries[(u, j)] = rating

    if not entries:
        raise EmptyDatasetError("no ratings")

    logger.info(f"Parsed {len(entries)} ratings from {len(user_map)} users over {len(item_map)} items")
    return RatingMatrix(
        num_users=len(user_map),
        num_items=len(item_map),
        entries=entries,
        max_rating=max_rating,
        user_ids=list(user_map),
        item_ids=list(item_map),
    )


def load_movielens(path: str, max_rating: int = DEFAULT_MAX_RATING) -> RatingMatrix:
    with open(path, encoding="latin-1") as f:
        return parse_movielens(f, max_rating=max_rating)


def format_movielens(matrix: RatingMatrix, delimiter: str = "::") -> Iterator[str]:
    """Yield MovieLens lines (timestamp 0) for every stored rating."""
    for (u, j), r in sorted(matrix.entries.items()):
        yield delimiter.join([matrix.user_ids[u], matrix.item_ids[j], str(r), "0"]) + "\n"


def compute_stats(matrix: RatingMatrix) -> RatingStats:
    if not matrix.entries:
        raise EmptyDatasetError("cannot compute statistics of an empty rating matrix")

    users = np.fromiter((u for u, _ in matrix.entries), dtype=np.int64, count=len(matrix))
    items = np.fromiter((j for _, j in matrix.entries), dtype=np.int64, count=len(matrix))
    values = np.fromiter(matrix.entries.values(), dtype=np.float64, count=len(matrix))

    mu = float(values.sum() / len(values))

    user_sum = np.bincount(users, weights=values, minlength=matrix.num_users)
    user_count = np.bincount(users, minlength=matrix.num_users)
    item_sum = np.bincount(items, weights=values, minlength=matrix.num_items)
    item_count = np.bincount(items, minlength=matrix.num_items)

    # Profiles (or items) without ratings fall back to the global mean
    user_mean = np.full(matrix.num_users, mu)
    np.divide(user_sum, user_count, out=user_mean, where=user_count > 0)
    item_mean = np.full(matrix.num_items, mu)
    np.divide(item_sum, item_count, out=item_mean, where=item_count > 0)

    return RatingStats(
        global_mean=mu,
        user_mean=user_mean,
        item_mean=item_mean,
        user_bias=user_mean - mu,
        item_bias=item_mean - mu,
    )


def profile_mean(ratings: dict[int, int] | np.ndarray, fallback: float) -> float:
    """Mean of a single rating profile; ``fallback`` for an empty profile."""
    values = list(ratings.values()) if isinstance(ratings, dict) else [v for v in ratings if v != 0]
    if not values:
        return fallback
    return float(sum(values)) / len(values)


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def serialize_matrix(matrix: RatingMatrix) -> bytes:
    """Binary snapshot: counts, (u32, u32, u8) triples, then the id mapping."""
    parts = [
        SNAPSHOT_MAGIC,
        struct.pack("<IIIB", matrix.num_users, matrix.num_items, len(matrix), matrix.max_rating),
    ]
    for (u, j), r in sorted(matrix.entries.items()):
        parts.append(struct.pack("<IIB", u, j, r))
    parts.extend(_pack_str(uid) for uid in matrix.user_ids)
    parts.extend(_pack_str(iid) for iid in matrix.item_ids)
    return b"".join(parts)


def deserialize_matrix(data: bytes, offset: int = 0) -> tuple[RatingMatrix, int]:
    """Inverse of :func:`serialize_matrix`; returns the matrix and the next offset."""
    try:
        if data[offset : offset + 4] != SNAPSHOT_MAGIC:
            raise RatingsFormatError("not a rating-matrix snapshot")
        offset += 4
        num_users, num_items, count, max_rating = struct.unpack_from("<IIIB", data, offset)
        offset += struct.calcsize("<IIIB")

        entries = {}
        for _ in range(count):
            u, j, r = struct.unpack_from("<IIB", data, offset)
            offset += 9
            entries[(u, j)] = r

        ids: list[str] = []
        for _ in range(num_users + num_items):
            (length,) = struct.unpack_from("<H", data, offset)
            offset += 2
            ids.append(data[offset : offset + length].decode("utf-8"))
            offset += length
    except struct.error as e:
        raise RatingsFormatError(f"truncated rating-matrix snapshot: {e}") from e

    matrix = RatingMatrix(
        num_users=num_users,
        num_items=num_items,
        entries=entries,
        max_rating=max_rating,
        user_ids=ids[:num_users],
        item_ids=ids[num_users:],
    )
    return matrix, offset


def describe(matrix: RatingMatrix) -> dict[str, Any]:
    density = len(matrix) / max(1, matrix.num_users * matrix.num_items)
    return {
        "users": matrix.num_users,
        "items": matrix.num_items,
        "ratings": len(matrix),
        "density": density,
    }


def align_items(matrix: RatingMatrix, item_ids: list[str]) -> RatingMatrix:
    """Re-index ``matrix`` onto the item space ``item_ids``.

    Ratings for items outside that space are dropped with a warning; items the
    matrix never mentions simply stay unrated.
    """
    position = {raw: j for j, raw in enumerate(item_ids)}
    entries: dict[tuple[int, int], int] = {}
    unknown: set[str] = set()
    for (u, j), r in matrix.entries.items():
        raw = matrix.item_ids[j]
        if raw in position:
            entries[(u, position[raw])] = r
        else:
            unknown.add(raw)

    if unknown:
        logger.warning(f"Dropped ratings for {len(unknown)} items the model does not know")
    return RatingMatrix(
        num_users=matrix.num_users,
        num_items=len(item_ids),
        entries=entries,
        max_rating=matrix.max_rating,
        user_ids=list(matrix.user_ids),
        item_ids=list(item_ids),
    )
