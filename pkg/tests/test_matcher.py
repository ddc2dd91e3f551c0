import math
import threading

import numpy as np
import pytest

from matchbreak.errors import (
    DegenerateTemplateError,
    DimensionMismatchError,
    LockedOutError,
    OracleModeError,
    UnknownIdentityError,
)
from matchbreak.matcher import (
    MatchScore,
    MatchingOracle,
    Metric,
    OracleConfig,
    OracleMode,
    QueryLedger,
    Threshold,
    calibrate_threshold,
    cosine_score,
    sed_score,
)


def brute_sed(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def brute_cos(a, b):
    dot = sum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(sum(float(x) ** 2 for x in a))
    nb = math.sqrt(sum(float(y) ** 2 for y in b))
    return dot / (na * nb)


class TestScores:
    def test_sed_known_value(self):
        assert sed_score([1.0, 2.0], [4.0, 6.0]) == 25.0

    def test_sed_identical(self):
        v = np.arange(5.0)
        assert sed_score(v, v) == 0.0

    def test_sed_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(9), rng.standard_normal(9)
        assert sed_score(a, b) == sed_score(b, a)

    def test_sed_matches_brute_force(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            a, b = rng.standard_normal(32), rng.standard_normal(32)
            assert sed_score(a, b) == pytest.approx(brute_sed(a, b), rel=1e-12)

    def test_sed_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            sed_score([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_cosine_orthogonal(self):
        assert cosine_score([1.0, 0.0], [0.0, 5.0]) == 0.0

    def test_cosine_identical_direction(self):
        assert cosine_score([2.0, 0.0], [7.0, 0.0]) == 1.0

    def test_cosine_opposite(self):
        assert cosine_score([1.0, 1.0], [-2.0, -2.0]) == pytest.approx(-1.0)

    def test_cosine_matches_brute_force(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            a, b = rng.standard_normal(16), rng.standard_normal(16)
            assert cosine_score(a, b) == pytest.approx(brute_cos(a, b), rel=1e-12)

    def test_cosine_zero_vector(self):
        with pytest.raises(DegenerateTemplateError):
            cosine_score([0.0, 0.0], [1.0, 0.0])


class TestThreshold:
    def test_sed_accepts_at_or_below(self):
        t = Threshold(1.5, Metric.SED)
        assert t.accepts(1.0)
        assert t.accepts(1.5)  # equality accepts
        assert not t.accepts(1.5000001)

    def test_cosine_accepts_at_or_above(self):
        t = Threshold(0.4, Metric.COSINE)
        assert t.accepts(0.9)
        assert t.accepts(0.4)
        assert not t.accepts(0.3999999)

    def test_sed_threshold_must_be_positive(self):
        with pytest.raises(ValueError):
            Threshold(0.0, Metric.SED)

    def test_cosine_threshold_range(self):
        with pytest.raises(ValueError):
            Threshold(1.0, Metric.COSINE)
        with pytest.raises(ValueError):
            Threshold(-1.0, Metric.COSINE)


def test_match_score_requires_finite():
    with pytest.raises(ValueError):
        MatchScore(float("inf"), Metric.SED)


class TestCalibration:
    def count_accepts(self, scores, threshold):
        return sum(1 for s in scores if threshold.accepts(s))

    def test_exact_quantile_sed(self):
        scores = [float(i) for i in range(1, 101)]
        result = calibrate_threshold(scores, 0.01, Metric.SED)
        assert result.threshold.value == 1.0
        assert result.achieved_fmr == 0.01
        assert self.count_accepts(scores, result.threshold) == 1

    def test_exact_quantile_cosine(self):
        scores = np.linspace(-0.9, 0.9, 100)
        result = calibrate_threshold(scores, 0.01, Metric.COSINE)
        assert result.threshold.value == 0.9
        assert self.count_accepts(scores, result.threshold) == 1

    def test_never_exceeds_target_on_sample(self):
        rng = np.random.default_rng(3)
        scores = rng.uniform(0.1, 5.0, size=997)
        for fmr in (0.01, 0.05, 0.2):
            result = calibrate_threshold(scores, fmr, Metric.SED)
            accepted = self.count_accepts(scores, result.threshold)
            assert accepted <= fmr * len(scores)
            assert result.achieved_fmr == accepted / len(scores)

    def test_tied_group_excluded_whole(self):
        """A tie straddling the cut is dropped entirely; equality would
        otherwise accept the whole group and overshoot."""
        scores = [2.0] * 10
        result = calibrate_threshold(scores, 0.3, Metric.SED)
        assert result.achieved_fmr == 0.0
        assert result.threshold.value < 2.0
        assert self.count_accepts(scores, result.threshold) == 0

    def test_partial_tie_at_cut(self):
        scores = [1.0, 1.0, 2.0, 2.0, 2.0, 3.0]
        result = calibrate_threshold(scores, 0.5, Metric.SED)
        # 3 accepts would split the 2.0 group; only the 1.0 group fits
        assert result.threshold.value == 1.0
        assert self.count_accepts(scores, result.threshold) == 2

    def test_match_score_inputs(self):
        scores = [MatchScore(float(i), Metric.SED) for i in range(1, 51)]
        result = calibrate_threshold(scores, 0.02, None)
        assert result.threshold.metric is Metric.SED
        assert result.threshold.value == 1.0

    def test_mixed_metrics_rejected(self):
        scores = [MatchScore(0.5, Metric.SED), MatchScore(0.5, Metric.COSINE)]
        with pytest.raises(ValueError, match="mixed"):
            calibrate_threshold(scores, 0.1, None)

    def test_metric_required_for_raw_scores(self):
        with pytest.raises(ValueError, match="metric"):
            calibrate_threshold([1.0, 2.0], 0.1, None)

    def test_empty_sample(self):
        with pytest.raises(ValueError, match="empty"):
            calibrate_threshold([], 0.1, Metric.SED)

    def test_small_sample_warns(self):
        with pytest.warns(UserWarning, match="cannot resolve"):
            calibrate_threshold([1.0, 2.0, 3.0], 0.01, Metric.SED)

    def test_bad_fmr(self):
        for bad in (0.0, 1.0, -0.5, float("nan")):
            with pytest.raises(ValueError):
                calibrate_threshold([1.0, 2.0], bad, Metric.SED)


def make_oracle(metric=Metric.SED, mode=OracleMode.SCORE, threshold=None, **kwargs):
    if mode is OracleMode.BINARY and threshold is None:
        threshold = Threshold(1.0, metric)
    return MatchingOracle(OracleConfig(metric=metric, mode=mode, threshold=threshold, **kwargs))


class TestOracle:
    def test_score_mode_releases_exact_score(self):
        oracle = make_oracle()
        enrolled = np.array([1.0, 2.0, 3.0])
        oracle.enroll("a", enrolled)
        probe = np.array([1.0, 2.0, 4.0])
        assert oracle.authenticate_score("a", probe) == sed_score(enrolled, probe)

    def test_binary_mode_thresholds_the_score(self):
        oracle = make_oracle(mode=OracleMode.BINARY, threshold=Threshold(0.5, Metric.SED))
        oracle.enroll("a", [0.0, 0.0])
        assert oracle.authenticate_binary("a", [0.5, 0.0])
        assert not oracle.authenticate_binary("a", [1.0, 0.0])

    def test_binary_equals_thresholded_score_on_grid(self):
        """Decision oracle and score oracle agree everywhere (noise-free)."""
        threshold = Threshold(0.8, Metric.SED)
        enrolled = np.array([0.3, -0.2])
        score_oracle = make_oracle(mode=OracleMode.SCORE)
        binary_oracle = make_oracle(mode=OracleMode.BINARY, threshold=threshold)
        score_oracle.enroll("a", enrolled)
        binary_oracle.enroll("a", enrolled)
        grid = np.linspace(-1.5, 1.5, 21)
        for x in grid:
            for y in grid:
                probe = [float(x), float(y)]
                released = score_oracle.authenticate_score("a", probe)
                assert binary_oracle.authenticate_binary("a", probe) == threshold.accepts(released)

    def test_decision_flips_at_threshold_distance(self):
        threshold = Threshold(0.49, Metric.SED)
        oracle = make_oracle(mode=OracleMode.BINARY, threshold=threshold)
        oracle.enroll("a", np.zeros(4))
        step = 0.01
        sweep = np.arange(0.0, 1.2, step)
        decisions = []
        for t in sweep:
            probe = np.zeros(4)
            probe[0] = t
            decisions.append(oracle.authenticate_binary("a", probe))
        flip = decisions.index(False)
        boundary = math.sqrt(threshold.value)
        assert sweep[flip - 1] <= boundary < sweep[flip] + step

    def test_mode_guards(self):
        score_oracle = make_oracle(mode=OracleMode.SCORE)
        score_oracle.enroll("a", [1.0, 0.0])
        with pytest.raises(OracleModeError):
            score_oracle.authenticate_binary("a", [1.0, 0.0])
        binary_oracle = make_oracle(mode=OracleMode.BINARY)
        binary_oracle.enroll("a", [1.0, 0.0])
        with pytest.raises(OracleModeError):
            binary_oracle.authenticate_score("a", [1.0, 0.0])

    def test_unknown_identity_not_counted(self):
        oracle = make_oracle()
        oracle.enroll("a", [1.0, 0.0])
        with pytest.raises(UnknownIdentityError):
            oracle.authenticate_score("b", [1.0, 0.0])
        assert oracle.queries == 0

    def test_dim_mismatch_not_counted(self):
        oracle = make_oracle()
        oracle.enroll("a", [1.0, 0.0])
        with pytest.raises(DimensionMismatchError):
            oracle.authenticate_score("a", [1.0, 0.0, 0.0])
        assert oracle.queries == 0

    def test_ledger_counts_every_served_query(self):
        oracle = make_oracle(mode=OracleMode.BINARY, threshold=Threshold(0.1, Metric.SED))
        oracle.enroll("a", [0.0, 0.0])
        oracle.enroll("b", [1.0, 1.0])
        for _ in range(3):
            oracle.authenticate_binary("a", [0.0, 0.0])   # accepts
        for _ in range(2):
            oracle.authenticate_binary("b", [0.0, 0.0])   # rejects, still counted
        assert oracle.queries == 5
        assert oracle.queries_for("a") == 3
        assert oracle.queries_for("b") == 2
        total, per_identity = oracle.ledger_snapshot()
        assert total == 5
        assert per_identity == {"a": 3, "b": 2}

    def test_query_limit_locks_out(self):
        oracle = make_oracle(query_limit=3)
        oracle.enroll("a", [1.0, 0.0])
        for _ in range(3):
            oracle.authenticate_score("a", [1.0, 0.0])
        with pytest.raises(LockedOutError, match="locked out"):
            oracle.authenticate_score("a", [1.0, 0.0])
        assert oracle.queries == 3  # the refused query is not served

    def test_reset_ledger_unlocks(self):
        oracle = make_oracle(query_limit=1)
        oracle.enroll("a", [1.0, 0.0])
        oracle.authenticate_score("a", [1.0, 0.0])
        with pytest.raises(LockedOutError):
            oracle.authenticate_score("a", [1.0, 0.0])
        oracle.reset_ledger()
        assert oracle.authenticate_score("a", [1.0, 0.0]) == 0.0

    def test_duplicate_enrollment_rejected(self):
        oracle = make_oracle()
        oracle.enroll("a", [1.0, 0.0])
        with pytest.raises(ValueError, match="already"):
            oracle.enroll("a", [0.0, 1.0])

    def test_noise_moments(self):
        """Score noise is additive Gaussian with the configured sigma."""
        sigma = 0.01
        oracle = MatchingOracle(
            OracleConfig(Metric.SED, OracleMode.SCORE, noise_sigma=sigma), noise_seed=5
        )
        oracle.enroll("a", [1.0, 0.0])
        probe = [0.0, 0.0]  # true score 1.0
        draws = np.array([oracle.authenticate_score("a", probe) for _ in range(20000)])
        assert abs(draws.mean() - 1.0) < 5e-4
        assert 0.0095 < draws.std() < 0.0105

    def test_noise_seed_reproducible(self):
        def run():
            oracle = MatchingOracle(
                OracleConfig(Metric.SED, OracleMode.SCORE, noise_sigma=0.5), noise_seed=9
            )
            oracle.enroll("a", [1.0, 0.0])
            return [oracle.authenticate_score("a", [0.0, 0.0]) for _ in range(5)]

        assert run() == run()

    def test_concurrent_queries_all_counted(self):
        oracle = make_oracle()
        oracle.enroll("a", [1.0, 0.0])

        def worker():
            for _ in range(500):
                oracle.authenticate_score("a", [0.0, 0.0])

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert oracle.queries == 2000

    def test_enrolled_template_not_exposed(self):
        oracle = make_oracle()
        oracle.enroll("a", [123.456, 789.0])
        assert oracle.enrolled_identities == ("a",)
        assert "123.456" not in repr(oracle)

    def test_binary_config_requires_threshold(self):
        with pytest.raises(ValueError, match="threshold"):
            OracleConfig(Metric.SED, OracleMode.BINARY)

    def test_threshold_metric_must_match(self):
        with pytest.raises(ValueError, match="metric"):
            OracleConfig(Metric.COSINE, OracleMode.BINARY, threshold=Threshold(1.0, Metric.SED))


def test_query_ledger_standalone():
    ledger = QueryLedger()
    ledger.record("x")
    ledger.record("x")
    ledger.record("y")
    assert ledger.total == 3
    assert ledger.per_identity == {"x": 2, "y": 1}
    ledger.reset()
    assert ledger.total == 0
    assert ledger.per_identity == {}
