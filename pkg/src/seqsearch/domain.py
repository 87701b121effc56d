"""Data containers shared by the simulator, the estimators and the I/O layer."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, is_dataclass
from math import comb
from typing import Any, Sequence

import numpy as np

SPEC_VERSION = "1.0"


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_json"):
        return obj.to_json()
    return obj


def to_jsonable(obj):
    return _jsonable(obj)


def config_hash(config: Any) -> str:
    """SHA-256 of the canonical JSON form of ``config`` (first 16 hex chars)."""
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _matrix(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a if a.ndim == 2 else a.reshape(n, -1)


@dataclass(frozen=True)
class SearchRecord:
    """One consumer's search sequence and purchase (0 = outside option)."""

    consumer: int
    searched: tuple[int, ...]
    utilities: tuple[float, ...]
    purchase: int


@dataclass
class PairOutcomeTable:
    """Observed search order ``S`` for product pair ``(i, j)``.

    Row ``k`` belongs to ``consumer[k]``; ``S[k] = 1`` when that consumer's
    reservation utility for ``i`` is revealed to exceed the one for ``j``.
    """

    pair: tuple[int, int]
    consumer: np.ndarray
    S: np.ndarray
    x_i: np.ndarray
    x_j: np.ndarray
    z_i: np.ndarray
    z_j: np.ndarray
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()
    demo: np.ndarray | None = None
    demo_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.consumer = np.asarray(self.consumer, dtype=np.int64)
        self.S = np.asarray(self.S, dtype=np.int8)
        n = len(self.consumer)
        self.x_i = _matrix(self.x_i, n)
        self.x_j = _matrix(self.x_j, n)
        self.z_i = _matrix(self.z_i, n)
        self.z_j = _matrix(self.z_j, n)
        if self.demo is not None:
            self.demo = _matrix(self.demo, n)
        if not (len(self.S) == n and all(len(a) == n for a in (self.x_i, self.x_j, self.z_i, self.z_j))):
            raise ValueError("PairOutcomeTable columns have inconsistent lengths")
        if self.x_i.shape != self.x_j.shape or self.z_i.shape != self.z_j.shape:
            raise ValueError("product i and j covariates must have matching shapes")
        if not self.x_names:
            self.x_names = tuple(f"x{k}" for k in range(self.x_i.shape[1]))
        if not self.z_names:
            self.z_names = tuple(f"z{k}" for k in range(self.z_i.shape[1]))
        self.x_names = tuple(self.x_names)
        self.z_names = tuple(self.z_names)

    @property
    def n_rows(self) -> int:
        return len(self.consumer)

    @property
    def n_consumer_pairs(self) -> int:
        return comb(self.n_rows, 2)

    @property
    def x_diff(self) -> np.ndarray:
        return self.x_i - self.x_j

    @property
    def q_x(self) -> int:
        return self.x_i.shape[1]

    @property
    def q_z(self) -> int:
        return self.z_i.shape[1]

    def take(self, idx) -> "PairOutcomeTable":
        idx = np.asarray(idx)
        return PairOutcomeTable(
            self.pair, self.consumer[idx], self.S[idx], self.x_i[idx], self.x_j[idx],
            self.z_i[idx], self.z_j[idx], self.x_names, self.z_names,
            None if self.demo is None else self.demo[idx], self.demo_names,
        )

    def subset(self, consumers: Sequence[int]) -> "PairOutcomeTable":
        """Rows of the given consumers, sorted by consumer id.

        Consumers listed more than once are kept once per occurrence so that
        the subset is well defined for resampling schemes too.
        """
        consumers = np.sort(np.asarray(consumers, dtype=np.int64))
        order = np.argsort(self.consumer, kind="stable")
        sorted_ids = self.consumer[order]
        lo = np.searchsorted(sorted_ids, consumers, side="left")
        hi = np.searchsorted(sorted_ids, consumers, side="right")
        idx = np.concatenate([order[a:b] for a, b in zip(lo, hi)]) if len(consumers) else np.array([], int)
        return self.take(idx.astype(int))

    def to_columns(self) -> dict[str, np.ndarray]:
        cols = {"consumer": self.consumer, "S": self.S}
        for k, name in enumerate(self.x_names):
            cols[f"x_i:{name}"] = self.x_i[:, k]
            cols[f"x_j:{name}"] = self.x_j[:, k]
        for k, name in enumerate(self.z_names):
            cols[f"z_i:{name}"] = self.z_i[:, k]
            cols[f"z_j:{name}"] = self.z_j[:, k]
        if self.demo is not None:
            for k, name in enumerate(self.demo_names or [f"d{k}" for k in range(self.demo.shape[1])]):
                cols[f"demo:{name}"] = self.demo[:, k]
        return cols


@dataclass
class EstimateReport:
    """Point estimates and optimizer diagnostics of one estimator run."""

    method: str
    coefficients: dict[str, float]
    objective: float
    n_obs: int
    raw_coefficients: dict[str, float] = field(default_factory=dict)
    n_restarts: int = 0
    restart_agreement: float = float("nan")
    converged: bool = True
    diagnostics: dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""
    seed: int | None = None
    spec_version: str = SPEC_VERSION

    def to_json(self) -> dict:
        return _jsonable(asdict(self))

    @classmethod
    def from_json(cls, obj: dict) -> "EstimateReport":
        return cls(**obj)

    def vector(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.coefficients[n] for n in names])
