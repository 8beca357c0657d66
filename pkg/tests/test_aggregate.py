import numpy as np
import pytest

from bubblesim.experiment.aggregate import AVERAGES_HEADER, AggregateReport, RunningMoments, TiltReport, merge_all
from bubblesim.types import FloatArray, TimeGrid


def _samples(seed: int, rows: int = 37) -> FloatArray:
    result: FloatArray = np.random.default_rng(seed).normal(0.3, 2.0, size=(rows, 4))
    return result


def test_moments_of_a_sample() -> None:
    samples = _samples(1)
    moments = RunningMoments.of(samples)
    assert moments.count == 37
    np.testing.assert_allclose(moments.mean, samples.mean(axis=0), rtol=1e-14)
    np.testing.assert_allclose(moments.variance, samples.var(axis=0, ddof=1), rtol=1e-12)
    np.testing.assert_allclose(moments.stderr, samples.std(axis=0, ddof=1) / np.sqrt(37), rtol=1e-12)


def test_merged_chunks_match_the_whole_sample() -> None:
    samples = _samples(2, 100)
    parts = [RunningMoments.of(samples[first:first + 16]) for first in range(0, 100, 16)]
    merged = merge_all(parts, 4)
    whole = RunningMoments.of(samples)
    assert merged.count == 100
    np.testing.assert_allclose(merged.mean, whole.mean, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(merged.m2, whole.m2, rtol=1e-12)


def test_merge_with_empty_parts() -> None:
    moments = RunningMoments.of(_samples(3))
    assert RunningMoments.empty(4).merge(moments) is moments
    assert moments.merge(RunningMoments.empty(4)) is moments
    assert merge_all([], 4).count == 0


def test_single_trajectory_has_zero_variance() -> None:
    moments = RunningMoments.of(np.ones((1, 3)))
    np.testing.assert_array_equal(moments.variance, np.zeros(3))
    np.testing.assert_array_equal(moments.stderr, np.zeros(3))


def _report(seconds: float = 2.0) -> AggregateReport:
    grid = TimeGrid.uniform(3, 1.0)
    beta = RunningMoments.of(_samples(4))
    gap = RunningMoments.of(_samples(5))
    return AggregateReport(grid, beta, gap, seconds)


def test_report_csv() -> None:
    report = _report()
    lines = report.to_csv().splitlines()
    assert lines[0] == ",".join(AVERAGES_HEADER)
    assert lines[0] == "period,t,mean_beta,stderr,mean_p1_minus_p3,stderr_p1_minus_p3"
    assert len(lines) == 5
    assert lines[1].startswith("0,0,")
    assert lines[4].startswith("3,1,")


def test_report_summary() -> None:
    report = _report()
    summary = report.summary()
    assert summary["paths"] == 37.0
    assert summary["mean_beta_1"] == pytest.approx(float(report.mean_beta[1]))
    assert summary["mean_beta_T"] == pytest.approx(float(report.mean_beta[3]))
    assert summary["trajectories_per_second"] == pytest.approx(18.5)
    assert _report(0.0).throughput == float('inf')


def test_tilt_csv() -> None:
    report = TiltReport(_report(), _report())
    lines = report.to_csv().splitlines()
    assert lines[0] == "period,t,mean_beta,stderr,mean_beta_tilted,stderr_tilted"
    assert len(lines) == 5
    fields = lines[2].split(",")
    assert fields[2] == fields[4]
