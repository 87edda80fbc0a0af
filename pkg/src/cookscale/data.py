"""Immutable data containers for the two supported designs.

``CrossSectionData`` holds independent rows (y, X); ``ClusteredData`` holds
rows grouped into independent clusters sharing a random intercept.  Both
validate shapes, finiteness, and full column rank at construction and
freeze their arrays, so instances can be shared across threads.

The design matrix is taken as given: an intercept, if wanted, must be an
explicit column of ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._linalg import require_full_column_rank
from .exceptions import DimensionMismatch, ValidationError


def _frozen_array(a, dtype=float, ndim=None, name="array") -> np.ndarray:
    out = np.array(a, dtype=dtype)
    if ndim is not None and out.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    if out.dtype.kind == "f" and not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} contains non-finite values")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CrossSectionData:
    """Independent rows: response vector y and n x p design matrix X."""

    y: np.ndarray
    X: np.ndarray
    row_ids: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen_array(self.y, ndim=1, name="y"))
        object.__setattr__(self, "X", _frozen_array(self.X, ndim=2, name="X"))
        if self.y.shape[0] != self.X.shape[0]:
            raise DimensionMismatch(
                f"y has {self.y.shape[0]} rows but X has {self.X.shape[0]}"
            )
        if self.n <= self.p:
            raise ValidationError(f"need more rows than columns, got n={self.n}, p={self.p}")
        require_full_column_rank(self.X)
        if self.row_ids is not None:
            ids = tuple(self.row_ids)
            if len(ids) != self.n:
                raise DimensionMismatch("row_ids length does not match y")
            object.__setattr__(self, "row_ids", ids)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def without_rows(self, ids: Sequence[int]) -> "CrossSectionData":
        keep = np.setdiff1d(np.arange(self.n), np.asarray(ids, dtype=int))
        return CrossSectionData(self.y[keep], self.X[keep])


@dataclass(frozen=True)
class ClusteredData:
    """Rows grouped into clusters, stored stacked in cluster order.

    ``sizes[i]`` rows starting at offset ``starts[i]`` belong to cluster
    ``cluster_ids[i]``.  Clusters are independent units; rows within a
    cluster share one random intercept.
    """

    cluster_ids: tuple
    y: np.ndarray
    X: np.ndarray
    sizes: np.ndarray
    starts: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "cluster_ids", tuple(self.cluster_ids))
        object.__setattr__(self, "y", _frozen_array(self.y, ndim=1, name="y"))
        object.__setattr__(self, "X", _frozen_array(self.X, ndim=2, name="X"))
        object.__setattr__(self, "sizes", _frozen_array(self.sizes, dtype=int, ndim=1, name="sizes"))
        if len(self.cluster_ids) != self.sizes.shape[0]:
            raise DimensionMismatch("cluster_ids and sizes disagree in length")
        if len(set(self.cluster_ids)) != len(self.cluster_ids):
            raise ValidationError("cluster ids are not unique")
        if np.any(self.sizes < 1):
            raise ValidationError("every cluster needs at least one row")
        if int(self.sizes.sum()) != self.y.shape[0]:
            raise DimensionMismatch("cluster sizes do not sum to the number of rows")
        if self.y.shape[0] != self.X.shape[0]:
            raise DimensionMismatch("y and X disagree in row count")
        starts = np.concatenate([[0], np.cumsum(self.sizes)])
        starts.setflags(write=False)
        object.__setattr__(self, "starts", starts)
        if self.n_obs <= self.p:
            raise ValidationError(
                f"need more rows than columns, got N={self.n_obs}, p={self.p}"
            )
        require_full_column_rank(self.X)

    @classmethod
    def from_clusters(cls, clusters: Iterable[tuple]) -> "ClusteredData":
        """Build from an iterable of (cluster_id, X_i, y_i) triples."""
        ids, Xs, ys, sizes = [], [], [], []
        for cid, Xi, yi in clusters:
            Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
            yi = np.atleast_1d(np.asarray(yi, dtype=float))
            ids.append(cid)
            Xs.append(Xi)
            ys.append(yi)
            sizes.append(yi.shape[0])
        if not ids:
            raise ValidationError("no clusters given")
        return cls(tuple(ids), np.concatenate(ys), np.vstack(Xs), np.asarray(sizes))

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def cluster_slice(self, i: int) -> slice:
        return slice(int(self.starts[i]), int(self.starts[i + 1]))

    def cluster_X(self, i: int) -> np.ndarray:
        return self.X[self.cluster_slice(i)]

    def cluster_y(self, i: int) -> np.ndarray:
        return self.y[self.cluster_slice(i)]

    def without_clusters(self, indices: Sequence[int]) -> "ClusteredData":
        drop = set(int(i) for i in indices)
        keep = [i for i in range(self.n_clusters) if i not in drop]
        if not keep:
            raise ValidationError("cannot drop every cluster")
        return ClusteredData.from_clusters(
            (self.cluster_ids[i], self.cluster_X(i), self.cluster_y(i)) for i in keep
        )

    def index_of(self, cluster_id) -> int:
        try:
            return self.cluster_ids.index(cluster_id)
        except ValueError:
            raise ValidationError(f"unknown cluster id {cluster_id!r}") from None
