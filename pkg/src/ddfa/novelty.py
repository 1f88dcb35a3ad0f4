"""Behavioral novelty scoring, the novelty archive, and the threshold-gated
feature list.

Signatures are plain float64 vectors.  All distances everywhere go through
the same row-sum formula so that scores, admission checks, and test oracles
agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .substrate import Feature


@dataclass
class NoveltyParams:
    """Search-side knobs: neighbor count, collection threshold, archive rate.

    rho_min is expressed at the reference signature length n_ref; use
    effective_threshold() to scale it to the dataset actually in play so a
    subset run keeps the same mean per-example separation.
    """

    k: int = 20
    rho_min: float = 2000.0
    archive_p: float = 0.01
    n_ref: int = 60000

    def effective_threshold(self, n: int) -> float:
        return self.rho_min * n / self.n_ref


def dist(a: np.ndarray, b: np.ndarray) -> float:
    """L1 distance between two signatures of equal length."""
    if a.shape != b.shape:
        raise ValueError(f"signature length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def dists_to_all(rows: np.ndarray, b: np.ndarray) -> np.ndarray:
    """L1 distance from b to every row; row r equals dist(rows[r], b)."""
    if len(rows) == 0:
        return np.empty(0)
    return np.abs(rows - b).sum(axis=1)


def _mean_of_k_nearest(dists: np.ndarray, k: int) -> float:
    k_eff = min(k, len(dists))
    if k_eff < len(dists):
        nearest = np.partition(dists, k_eff - 1)[:k_eff]
    else:
        nearest = dists
    # Sort before summing so the reduction order matches a full-sort oracle.
    return float(np.sort(nearest).sum() / k_eff)


def sparseness(
    b: np.ndarray,
    population: list[np.ndarray],
    archive: "NoveltyArchive",
    k: int,
) -> float:
    """Mean L1 distance from b to its k nearest neighbors among the other
    population members plus the archive.

    When fewer than k neighbors exist the mean runs over all of them; an
    empty pool is an error.  b is excluded from the pool by identity, not by
    value, so behavioral duplicates still count as zero-distance neighbors.
    """
    others = [s for s in population if s is not b]
    pool_size = len(others) + len(archive)
    if pool_size == 0:
        raise ValueError("sparseness needs a nonempty candidate pool")
    parts = []
    if others:
        parts.append(dists_to_all(np.stack(others), b))
    if len(archive):
        parts.append(dists_to_all(archive.matrix(), b))
    return _mean_of_k_nearest(np.concatenate(parts), k)


def sparseness_many(
    pop: np.ndarray, archive: "NoveltyArchive", k: int
) -> np.ndarray:
    """Sparseness of every row of pop against (pop minus itself) + archive."""
    n = len(pop)
    arch = archive.matrix() if len(archive) else None
    out = np.empty(n)
    for i in range(n):
        d_pop = np.delete(dists_to_all(pop, pop[i]), i)
        if arch is not None:
            d_all = np.concatenate([d_pop, dists_to_all(arch, pop[i])])
        else:
            d_all = d_pop
        if len(d_all) == 0:
            raise ValueError("sparseness needs a nonempty candidate pool")
        out[i] = _mean_of_k_nearest(d_all, k)
    return out


class _SignatureStore:
    """Append-only matrix of equal-length signatures with amortized growth."""

    def __init__(self):
        self._buf: np.ndarray | None = None
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def append(self, sig: np.ndarray) -> None:
        sig = np.asarray(sig, dtype=np.float64)
        if not np.all(np.isfinite(sig)):
            raise ValueError("signature contains non-finite values")
        if self._buf is None:
            self._buf = np.empty((16, len(sig)))
        elif len(sig) != self._buf.shape[1]:
            raise ValueError(
                f"signature length {len(sig)} != stored length {self._buf.shape[1]}"
            )
        elif self._count == len(self._buf):
            grown = np.empty((2 * len(self._buf), self._buf.shape[1]))
            grown[: self._count] = self._buf
            self._buf = grown
        self._buf[self._count] = sig
        self._count += 1

    def matrix(self) -> np.ndarray:
        if self._buf is None:
            return np.empty((0, 0))
        return self._buf[: self._count]


class NoveltyArchive:
    """Append-only sample of past signatures that novelty is measured against."""

    def __init__(self):
        self._store = _SignatureStore()

    def __len__(self) -> int:
        return len(self._store)

    def append(self, sig: np.ndarray) -> None:
        self._store.append(sig)

    def matrix(self) -> np.ndarray:
        return self._store.matrix()


def maybe_archive(
    sig: np.ndarray,
    rng: np.random.Generator,
    archive: NoveltyArchive,
    p: float,
) -> NoveltyArchive:
    """Append sig to the archive with probability p (consumes one draw)."""
    if rng.random() < p:
        archive.append(sig)
    return archive


class FeatureList:
    """The accumulated output of the search: features plus their signatures.

    try_collect enforces the nearest-neighbor threshold; append is the
    unchecked path used by the control conditions where admission is not
    distance-gated.
    """

    def __init__(self):
        self.features: list[Feature] = []
        self._store = _SignatureStore()

    def __len__(self) -> int:
        return len(self.features)

    def signatures(self) -> np.ndarray:
        return self._store.matrix()

    def append(self, feature: Feature, sig: np.ndarray) -> None:
        self._store.append(sig)
        self.features.append(feature)

    def nearest_distance(self, sig: np.ndarray) -> float:
        if len(self) == 0:
            raise ValueError("empty feature list has no nearest neighbor")
        return float(dists_to_all(self.signatures(), sig).min())

    def try_collect(
        self, feature: Feature, sig: np.ndarray, rho_min_eff: float
    ) -> bool:
        """Admit the feature iff its signature is at least rho_min_eff away
        from every signature already collected."""
        if len(self) > 0:
            rows = self.signatures()
            # Chunked scan with early exit: most rejections hit a close
            # neighbor long before the full list is measured.
            for start in range(0, len(rows), 256):
                block = dists_to_all(rows[start : start + 256], sig)
                if block.min() < rho_min_eff:
                    return False
        self.append(feature, sig)
        return True

    def verify_tail(self, rho_min_eff: float, start: int) -> None:
        """Re-assert the pairwise invariant for entries admitted at or after
        `start` against everything before them."""
        rows = self.signatures()
        for i in range(max(start, 1), len(rows)):
            worst = float(dists_to_all(rows[:i], rows[i]).min())
            if worst < rho_min_eff:
                raise AssertionError(
                    f"feature {i} sits {worst:.6g} < {rho_min_eff:.6g} from an "
                    f"earlier feature"
                )

    def verify_pairwise(self, rho_min_eff: float) -> float:
        """Exhaustively re-check every pair; returns the minimum pairwise
        distance (raises if it is below the threshold)."""
        rows = self.signatures()
        if len(rows) < 2:
            return float("inf")
        worst = float("inf")
        for i in range(1, len(rows)):
            worst = min(worst, float(dists_to_all(rows[:i], rows[i]).min()))
        if worst < rho_min_eff:
            raise AssertionError(
                f"pairwise invariant broken: min distance {worst:.6g} < "
                f"{rho_min_eff:.6g}"
            )
        return worst

    def truncated(self, count: int) -> "FeatureList":
        """Earliest `count` entries as a new list."""
        out = FeatureList()
        rows = self.signatures()
        for i in range(min(count, len(self))):
            out.append(self.features[i], rows[i])
        return out


def try_collect(
    feature: Feature,
    sig: np.ndarray,
    flist: FeatureList,
    rho_min_eff: float,
) -> tuple[FeatureList, bool]:
    """Functional wrapper over FeatureList.try_collect."""
    return flist, flist.try_collect(feature, sig, rho_min_eff)
