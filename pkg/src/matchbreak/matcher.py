"""Matching metrics, threshold calibration, and the authentication oracle.

The oracle simulates a deployed matcher: enrolled templates are held
privately, every authentication is counted, and depending on the configured
mode either the (optionally noise-perturbed) score or only the accept/reject
decision leaves the module.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DegenerateTemplateError,
    LockedOutError,
    OracleModeError,
    UnknownIdentityError,
)
from .rng import SeedLike, as_generator
from .validation import as_vector, check_nonnegative, check_probability, check_same_dim


class Metric(str, Enum):
    SED = "sed"
    COSINE = "cosine"


class OracleMode(str, Enum):
    SCORE = "score"
    BINARY = "binary"


# Scores use np.sum reductions, not BLAS dot: dot kernels pick different
# instruction paths for strided views, shifting the last ulp, and a score must
# be a function of the values alone so that recomputing it from a wire copy of
# the same numbers gives the identical float.


def sed_score(a, b) -> float:
    """Squared Euclidean distance. Smaller means more similar."""
    av = as_vector(a, name="a")
    bv = as_vector(b, name="b")
    check_same_dim(av, bv, names=("a", "b"))
    return float(np.sum((av - bv) ** 2))


def cosine_score(a, b) -> float:
    """Cosine similarity. Larger means more similar."""
    av = as_vector(a, name="a")
    bv = as_vector(b, name="b")
    check_same_dim(av, bv, names=("a", "b"))
    na = math.sqrt(np.sum(av * av))
    nb = math.sqrt(np.sum(bv * bv))
    if na == 0.0 or nb == 0.0:
        raise DegenerateTemplateError("degenerate template: the zero vector has no direction")
    return float(np.sum(av * bv) / (na * nb))


def score(metric: Metric, a, b) -> float:
    metric = Metric(metric)
    return sed_score(a, b) if metric is Metric.SED else cosine_score(a, b)


@dataclass(frozen=True)
class MatchScore:
    """A raw comparison score tagged with the metric that produced it."""

    value: float
    metric: Metric

    def __post_init__(self):
        value = float(self.value)
        if not math.isfinite(value):
            raise ValueError(f"score must be finite, got {value}")
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "metric", Metric(self.metric))


@dataclass(frozen=True)
class Threshold:
    """An accept/reject cut. Equality counts as acceptance for both metrics."""

    value: float
    metric: Metric

    def __post_init__(self):
        value = float(self.value)
        metric = Metric(self.metric)
        if not math.isfinite(value):
            raise ValueError(f"threshold must be finite, got {value}")
        if metric is Metric.SED and value <= 0.0:
            raise ValueError(f"sed threshold must be positive, got {value}")
        if metric is Metric.COSINE and not -1.0 < value < 1.0:
            raise ValueError(f"cosine threshold must lie strictly inside (-1, 1), got {value}")
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "metric", metric)

    def accepts(self, score_value: float) -> bool:
        s = float(score_value)
        if self.metric is Metric.SED:
            return s <= self.value
        return s >= self.value


@dataclass(frozen=True)
class CalibrationResult:
    threshold: Threshold
    achieved_fmr: float
    sample_size: int


def calibrate_threshold(scores, target_fmr: float, metric: Metric | str | None = None) -> CalibrationResult:
    """Pick the most permissive threshold whose false-match rate on the given
    impostor sample does not exceed ``target_fmr``.

    Because equality accepts, a group of tied scores is either accepted whole
    or excluded whole; when including a tied group would overshoot the target,
    the whole group is excluded. ``metric`` is required when ``scores`` are
    raw floats rather than :class:`MatchScore` values.
    """
    values, metric = _collect_scores(scores, metric)
    target_fmr = check_probability(target_fmr, "target_fmr")
    n = values.size
    if n * target_fmr < 1.0:
        warnings.warn(
            f"calibration sample of {n} scores cannot resolve a false-match rate of {target_fmr}",
            stacklevel=2,
        )

    ordered = np.sort(values)
    if metric is Metric.COSINE:
        ordered = ordered[::-1]  # most permissive (highest) scores first
    k = int(math.floor(target_fmr * n))
    if 0 < k < n and ordered[k] == ordered[k - 1]:
        # the cut would split a tied group; shrink to exclude the group whole
        k = int(np.argmax(ordered == ordered[k - 1]))

    if k > 0:
        cut = float(ordered[k - 1])
    else:
        edge = float(ordered[0])
        towards = -math.inf if metric is Metric.SED else math.inf
        cut = float(np.nextafter(edge, towards))
    try:
        threshold = Threshold(cut, metric)
    except ValueError as exc:
        raise ValueError(f"cannot calibrate a valid {metric.value} threshold: {exc}") from exc
    return CalibrationResult(threshold, achieved_fmr=k / n, sample_size=n)


def _collect_scores(scores, metric) -> tuple[np.ndarray, Metric]:
    values = []
    metrics = set()
    for s in scores:
        if isinstance(s, MatchScore):
            values.append(s.value)
            metrics.add(s.metric)
        else:
            values.append(float(s))
    if not values:
        raise ValueError("empty calibration sample")
    if metric is not None:
        metrics.add(Metric(metric))
    if not metrics:
        raise ValueError("metric is required when calibrating raw scores")
    if len(metrics) > 1:
        raise ValueError(f"mixed metrics in calibration sample: {sorted(m.value for m in metrics)}")
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("calibration sample contains non-finite scores")
    return arr, metrics.pop()


@dataclass(frozen=True)
class OracleConfig:
    metric: Metric
    mode: OracleMode
    threshold: Threshold | None = None
    noise_sigma: float = 0.0
    query_limit: int | None = None

    def __post_init__(self):
        metric = Metric(self.metric)
        mode = OracleMode(self.mode)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "noise_sigma", check_nonnegative(self.noise_sigma, "noise_sigma"))
        if mode is OracleMode.BINARY and self.threshold is None:
            raise ValueError("binary mode requires a threshold")
        if self.threshold is not None and self.threshold.metric is not metric:
            raise ValueError(
                f"threshold metric {self.threshold.metric.value!r} does not match oracle metric {metric.value!r}"
            )
        if self.query_limit is not None:
            if isinstance(self.query_limit, bool) or not isinstance(self.query_limit, (int, np.integer)):
                raise TypeError("query_limit must be an integer or None")
            if self.query_limit < 1:
                raise ValueError(f"query_limit must be >= 1, got {self.query_limit}")
            object.__setattr__(self, "query_limit", int(self.query_limit))


class QueryLedger:
    """Counts served authentication queries, in total and per claimed identity."""

    def __init__(self):
        self.total = 0
        self.per_identity: dict[str, int] = {}

    def record(self, identity: str) -> None:
        self.total += 1
        self.per_identity[identity] = self.per_identity.get(identity, 0) + 1

    def snapshot(self) -> tuple[int, dict[str, int]]:
        return self.total, dict(self.per_identity)

    def reset(self) -> None:
        self.total = 0
        self.per_identity = {}


class MatchingOracle:
    """A simulated matcher holding enrolled templates privately.

    Authentication calls are serialized with a lock, so one instance can be
    shared across threads; the ledger then reflects the interleaved total.
    Queries that fail validation (unknown identity, wrong dimension) are not
    served and therefore not counted.
    """

    def __init__(self, config: OracleConfig, *, noise_seed: SeedLike = 0):
        if not isinstance(config, OracleConfig):
            raise TypeError("config must be an OracleConfig")
        self._config = config
        self._enrolled: dict[str, np.ndarray] = {}
        self._ledger = QueryLedger()
        self._noise_rng = as_generator(noise_seed)
        self._lock = threading.Lock()

    @property
    def config(self) -> OracleConfig:
        return self._config

    @property
    def metric(self) -> Metric:
        return self._config.metric

    @property
    def mode(self) -> OracleMode:
        return self._config.mode

    @property
    def threshold(self) -> Threshold | None:
        return self._config.threshold

    @property
    def queries(self) -> int:
        with self._lock:
            return self._ledger.total

    def queries_for(self, identity: str) -> int:
        with self._lock:
            return self._ledger.per_identity.get(identity, 0)

    def ledger_snapshot(self) -> tuple[int, dict[str, int]]:
        with self._lock:
            return self._ledger.snapshot()

    def reset_ledger(self) -> None:
        with self._lock:
            self._ledger.reset()

    @property
    def enrolled_identities(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(self._enrolled)

    def enroll(self, identity: str, template) -> None:
        if not isinstance(identity, str) or not identity:
            raise ValueError("identity must be a nonempty string")
        arr = as_vector(template, name="template").copy()
        arr.setflags(write=False)
        with self._lock:
            if identity in self._enrolled:
                raise ValueError(f"identity {identity!r} is already enrolled")
            self._enrolled[identity] = arr

    def authenticate_score(self, identity: str, probe) -> float:
        if self._config.mode is not OracleMode.SCORE:
            raise OracleModeError("oracle is in binary mode and does not release scores")
        return self._serve(identity, probe)

    def authenticate_binary(self, identity: str, probe) -> bool:
        if self._config.mode is not OracleMode.BINARY:
            raise OracleModeError("oracle is in score mode; use authenticate_score")
        return self._config.threshold.accepts(self._serve(identity, probe))

    def _serve(self, identity: str, probe) -> float:
        with self._lock:
            if identity not in self._enrolled:
                raise UnknownIdentityError(f"unknown identity {identity!r}")
            limit = self._config.query_limit
            if limit is not None and self._ledger.total >= limit:
                raise LockedOutError(f"locked out: query limit of {limit} reached")
            enrolled = self._enrolled[identity]
            probe_arr = as_vector(probe, name="probe", dim=enrolled.size)
            value = score(self._config.metric, enrolled, probe_arr)
            if self._config.noise_sigma > 0.0:
                value += self._config.noise_sigma * float(self._noise_rng.standard_normal())
            self._ledger.record(identity)
            return value

    def __repr__(self) -> str:
        return (
            f"MatchingOracle(metric={self._config.metric.value!r}, mode={self._config.mode.value!r}, "
            f"enrolled={len(self._enrolled)}, queries={self._ledger.total})"
        )
