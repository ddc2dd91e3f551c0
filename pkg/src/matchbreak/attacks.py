"""Template-reconstruction attacks against matching oracles.

All attacks are black box: they interact with the oracle only through its
``authenticate_*`` calls, and their query cost is read back from the oracle's
ledger. Four families are implemented:

* ``score-sed``: solve the distance equations released by a squared-Euclidean
  score oracle; ``d + 1`` probes pin the enrolled template exactly.
* ``score-cos``: solve the linear system released by a cosine score oracle;
  ``d`` orthonormal probes recover the template direction.
* ``hill``: score-guided random hill climbing, the classical baseline.
* ``binary-baseline``: average every breaking-set member a decision oracle
  accepts.
* ``binary-ours``: find one accepted seed, bisect to ``d + 1`` points on the
  decision boundary, and solve for the sphere center they share.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .errors import (
    NoFalseMatchError,
    OracleModeError,
    OutsidePointError,
    SingularSystemError,
)
from .linalg import solve_linear_system, sphere_center
from .matcher import Metric, OracleMode
from .rng import SeedLike, as_generator, random_unit_vector
from .synth import BreakingSet
from .templates import Template, normalize
from .validation import as_vector, check_count, check_positive


@dataclass(frozen=True)
class ReconstructionResult:
    recovered: Template
    queries_used: int
    wall_time_seconds: float
    attack_name: str
    params: dict


class Attack:
    """Base class wiring query accounting and timing around an attack run."""

    name: ClassVar[str]

    def reconstruct(
        self,
        oracle,
        claim: str,
        *,
        seed: SeedLike = 0,
        breaking_set: BreakingSet | None = None,
    ) -> ReconstructionResult:
        rng = as_generator(seed)
        queries_before = oracle.queries
        started = time.perf_counter()
        values, unit, extras = self._run(oracle, claim, rng, breaking_set)
        elapsed = time.perf_counter() - started
        params = self._public_params()
        params.update(extras)
        return ReconstructionResult(
            recovered=Template(values, unit=unit),
            queries_used=oracle.queries - queries_before,
            wall_time_seconds=elapsed,
            attack_name=self.name,
            params=params,
        )

    def _public_params(self) -> dict:
        if dataclasses.is_dataclass(self):
            return dataclasses.asdict(self)
        return dict(vars(self))

    def _run(self, oracle, claim, rng, breaking_set):
        raise NotImplementedError


def _require(oracle, mode: OracleMode, metric: Metric | None, attack_name: str) -> None:
    if oracle.mode is not mode:
        raise OracleModeError(
            f"{attack_name} needs a {mode.value}-mode oracle, got {oracle.mode.value} mode"
        )
    if metric is not None and oracle.metric is not metric:
        raise OracleModeError(
            f"{attack_name} needs the {metric.value} metric, got {oracle.metric.value}"
        )


@dataclass(frozen=True)
class SedScoreAttack(Attack):
    """Recover a template from ``dim + 1`` released squared-distance scores.

    Random probes all see the template at a known squared distance, so the
    template is the center of a sphere through the probes and is found by one
    linear solve. Degenerate probe draws are resampled.
    """

    dim: int
    resample_attempts: int = 4

    name: ClassVar[str] = "score-sed"

    def __post_init__(self):
        check_count(self.dim, "dim", minimum=1)
        check_count(self.resample_attempts, "resample_attempts", minimum=0)

    def _run(self, oracle, claim, rng, breaking_set):
        _require(oracle, OracleMode.SCORE, Metric.SED, self.name)
        d = self.dim
        last_error = None
        for attempt in range(self.resample_attempts + 1):
            probes = rng.standard_normal((d + 1, d))
            scores = np.array([oracle.authenticate_score(claim, q) for q in probes])
            try:
                center = sphere_center(probes, scores)
            except SingularSystemError as exc:
                last_error = exc
                continue
            return center, False, {"probe_resamples": attempt}
        raise SingularSystemError(
            f"probe geometry stayed singular after {self.resample_attempts} resamples"
        ) from last_error


@dataclass(frozen=True)
class CosineScoreAttack(Attack):
    """Recover a template direction from ``dim`` released cosine scores.

    An orthonormal probe basis makes the score system perfectly conditioned,
    so score noise is not amplified by the solve. Cosine discards the norm,
    hence the result is returned unit-normalized.
    """

    dim: int
    resample_attempts: int = 4

    name: ClassVar[str] = "score-cos"

    def __post_init__(self):
        check_count(self.dim, "dim", minimum=1)
        check_count(self.resample_attempts, "resample_attempts", minimum=0)

    def _run(self, oracle, claim, rng, breaking_set):
        _require(oracle, OracleMode.SCORE, Metric.COSINE, self.name)
        d = self.dim
        last_error = None
        for attempt in range(self.resample_attempts + 1):
            probes = _orthonormal_probes(rng, d)
            scores = np.array([oracle.authenticate_score(claim, q) for q in probes])
            try:
                direction = solve_linear_system(probes, scores)
            except SingularSystemError as exc:
                last_error = exc
                continue
            return normalize(direction).values, True, {"probe_resamples": attempt}
        raise SingularSystemError(
            f"probe geometry stayed singular after {self.resample_attempts} resamples"
        ) from last_error


def _orthonormal_probes(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return (q * signs).T


@dataclass(frozen=True)
class HillClimbAttack(Attack):
    """Score-guided random hill climbing.

    Starts from a random probe and keeps any step of fixed size that strictly
    improves the released score. ``budget`` counts the perturbation probes,
    so the total query cost is ``budget + 1`` including the starting probe.
    """

    dim: int
    step_size: float = 0.07
    budget: int = 4000
    record_trace: bool = False

    name: ClassVar[str] = "hill"

    def __post_init__(self):
        check_count(self.dim, "dim", minimum=1)
        check_positive(self.step_size, "step_size")
        check_count(self.budget, "budget", minimum=0)

    def _run(self, oracle, claim, rng, breaking_set):
        _require(oracle, OracleMode.SCORE, None, self.name)
        metric = oracle.metric
        improves = (lambda s, best: s < best) if metric is Metric.SED else (lambda s, best: s > best)

        current = random_unit_vector(rng, self.dim)  # start on the sphere templates live on
        best = oracle.authenticate_score(claim, current)
        trace = [(1, best)]
        for i in range(self.budget):
            candidate = current + self.step_size * random_unit_vector(rng, self.dim)
            if metric is Metric.COSINE:
                candidate = candidate / np.linalg.norm(candidate)
            score = oracle.authenticate_score(claim, candidate)
            if improves(score, best):
                current, best = candidate, score
                trace.append((i + 2, best))
        extras = {"final_score": best, "improvements": len(trace) - 1}
        if self.record_trace:
            extras["trace"] = trace
        return current, metric is Metric.COSINE, extras


@dataclass(frozen=True)
class AcceptAverageAttack(Attack):
    """Average the breaking-set members a decision oracle accepts.

    Probes members in order (up to ``budget`` of them) and returns the mean
    of the accepted ones. Fails when nothing is accepted.
    """

    budget: int | None = None

    name: ClassVar[str] = "binary-baseline"

    def __post_init__(self):
        if self.budget is not None:
            check_count(self.budget, "budget", minimum=1)

    def _run(self, oracle, claim, rng, breaking_set):
        _require(oracle, OracleMode.BINARY, None, self.name)
        if breaking_set is None:
            raise ValueError(f"{self.name} requires a breaking set")
        members = breaking_set.members if self.budget is None else breaking_set.members[: self.budget]
        accepted_indices = [
            i for i, (_, member) in enumerate(members)
            if oracle.authenticate_binary(claim, member.values)
        ]
        if not accepted_indices:
            raise NoFalseMatchError("no false match found in the breaking set", attempts=len(members))
        stacked = np.stack([members[i][1].values for i in accepted_indices])
        return stacked.mean(axis=0), False, {"accepted_indices": accepted_indices}


def find_seed_match(
    oracle,
    claim: str,
    breaking_set: BreakingSet,
    *,
    max_attempts: int | None = None,
) -> tuple[Template, int]:
    """Probe breaking-set members in order until one is accepted.

    Returns the accepted member and the number of queries spent (the accepted
    probe included). Raises :class:`NoFalseMatchError` when the budget or the
    set runs out first.
    """
    _require(oracle, OracleMode.BINARY, None, "find_seed_match")
    members = breaking_set.members if max_attempts is None else breaking_set.members[:max_attempts]
    for i, (_, member) in enumerate(members):
        if oracle.authenticate_binary(claim, member.values):
            return member, i + 1
    raise NoFalseMatchError(
        f"no false match found in {len(members)} attempts", attempts=len(members)
    )


def boundary_point(
    oracle,
    claim: str,
    start,
    radius_estimate: float,
    precision: int,
    rng: np.random.Generator,
    *,
    max_direction_redraws: int = 8,
) -> np.ndarray:
    """Bisect from an accepted point to the decision boundary.

    ``start`` must be accepted for ``claim``. A point at ``2 * radius_estimate``
    along a random direction serves as the outside end; ``precision`` halvings
    narrow the bracket and the midpoint is returned, pinning the boundary to
    within ``T / 2**(precision - 1)`` in squared distance for threshold ``T``.

    A round whose ``precision`` queries all accept never left the region, so
    the direction is redrawn without spending extra queries on an explicit
    outside check; after ``max_direction_redraws`` failures the radius
    estimate is doubled once before giving up. Each round costs exactly
    ``precision`` queries.
    """
    _require(oracle, OracleMode.BINARY, None, "boundary_point")
    center = as_vector(start, name="start")
    radius_estimate = check_positive(radius_estimate, "radius_estimate")
    precision = check_count(precision, "precision", minimum=1)
    check_count(max_direction_redraws, "max_direction_redraws", minimum=0)

    for radius in (radius_estimate, 2.0 * radius_estimate):
        for _ in range(max_direction_redraws + 1):
            direction = random_unit_vector(rng, center.size)
            inside = center
            outside = center + (2.0 * radius) * direction
            left_region = False
            for _ in range(precision):
                midpoint = 0.5 * (inside + outside)
                if oracle.authenticate_binary(claim, midpoint):
                    inside = midpoint
                else:
                    outside = midpoint
                    left_region = True
            if left_region:
                return 0.5 * (inside + outside)
    raise OutsidePointError(
        "no probe direction left the acceptance region; the radius estimate is too small"
    )


@dataclass(frozen=True)
class BoundarySearchAttack(Attack):
    """Reconstruct a template from a decision-only squared-distance oracle.

    One accepted seed is found by scanning the breaking set, then ``dim + 1``
    boundary points are located by bisection; they all sit at the threshold
    distance from the enrolled template, which is recovered as their common
    sphere center. ``threshold_estimate`` is in score units (squared
    distance); its square root is the geometric radius used for bracketing.
    """

    dim: int
    threshold_estimate: float
    precision: int = 20
    max_seed_attempts: int | None = None
    resample_attempts: int = 4
    max_direction_redraws: int = 8

    name: ClassVar[str] = "binary-ours"

    def __post_init__(self):
        check_count(self.dim, "dim", minimum=1)
        check_positive(self.threshold_estimate, "threshold_estimate")
        check_count(self.precision, "precision", minimum=1)
        if self.max_seed_attempts is not None:
            check_count(self.max_seed_attempts, "max_seed_attempts", minimum=1)
        check_count(self.resample_attempts, "resample_attempts", minimum=0)
        check_count(self.max_direction_redraws, "max_direction_redraws", minimum=0)

    def _run(self, oracle, claim, rng, breaking_set):
        _require(oracle, OracleMode.BINARY, Metric.SED, self.name)
        if breaking_set is None:
            raise ValueError(f"{self.name} requires a breaking set")
        seed_member, seed_attempts = find_seed_match(
            oracle, claim, breaking_set, max_attempts=self.max_seed_attempts
        )
        start = seed_member.values
        radius = float(np.sqrt(self.threshold_estimate))
        d = self.dim
        redraw_rounds = 0

        def next_point() -> np.ndarray:
            nonlocal redraw_rounds
            before = oracle.queries
            point = boundary_point(
                oracle, claim, start, radius, self.precision, rng,
                max_direction_redraws=self.max_direction_redraws,
            )
            redraw_rounds += (oracle.queries - before) // self.precision - 1
            return point

        points = np.empty((d + 1, d), dtype=np.float64)
        for i in range(d + 1):
            points[i] = next_point()

        solve_resamples = 0
        while True:
            try:
                center = sphere_center(points)
                break
            except SingularSystemError:
                if solve_resamples >= self.resample_attempts:
                    raise
                points[solve_resamples % (d + 1)] = next_point()
                solve_resamples += 1
        extras = {
            "seed_attempts": seed_attempts,
            "boundary_redraws": redraw_rounds,
            "solve_resamples": solve_resamples,
        }
        return center, False, extras


ATTACKS: dict[str, type[Attack]] = {
    cls.name: cls
    for cls in (
        SedScoreAttack,
        CosineScoreAttack,
        HillClimbAttack,
        AcceptAverageAttack,
        BoundarySearchAttack,
    )
}

ATTACK_MODES: dict[str, OracleMode] = {
    SedScoreAttack.name: OracleMode.SCORE,
    CosineScoreAttack.name: OracleMode.SCORE,
    HillClimbAttack.name: OracleMode.SCORE,
    AcceptAverageAttack.name: OracleMode.BINARY,
    BoundarySearchAttack.name: OracleMode.BINARY,
}


def make_attack(name: str, *, dim: int | None = None, **params) -> Attack:
    """Instantiate an attack by its registry name."""
    try:
        cls = ATTACKS[name]
    except KeyError:
        known = ", ".join(sorted(ATTACKS))
        raise ValueError(f"unknown attack {name!r}; known attacks: {known}") from None
    field_names = {f.name for f in dataclasses.fields(cls)}
    kwargs = dict(params)
    if "dim" in field_names and dim is not None and "dim" not in kwargs:
        kwargs["dim"] = dim
    unknown = sorted(set(kwargs) - field_names)
    if unknown:
        raise ValueError(f"unknown parameter(s) for {name}: {', '.join(unknown)}")
    return cls(**kwargs)
