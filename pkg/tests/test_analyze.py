"""Tests for offline trace analysis."""

import numpy as np
import pytest

from app.pipeline.analyze import (
    analyze_trace,
    detectability_check,
    estimation_error_envelope,
    recorded_detections,
    sigma_breakdown,
)


def _row(step, *, subsystem=1, component=0, state=0.0, estimate=0.0, residual=0.0, threshold=0.1, pick=None, **extra):
    row = {
        "step": step,
        "subsystem": subsystem,
        "component": component,
        "owner": subsystem,
        "owner_component": component,
        "state": state,
        "estimate": estimate,
        "residual": residual,
        "threshold": threshold,
        "consensus_pick": subsystem if pick is None else pick,
        "plugged": 1,
        "fault_effect": 0.0,
        "threshold_noise": 0.0,
        "threshold_coupling": 0.0,
        "threshold_input": 0.0,
        "threshold_drift": 0.0,
    }
    row.update(extra)
    return row


class TestDetectability:
    def test_accumulated_effect_crosses_twice_threshold(self):
        phi = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
        eps = [0.5] * 7

        # acc(3) = 1.0 (= 2ε̄), acc(4) = 1.5
        assert detectability_check(phi, 0.5, eps, T0=2) == 4

    def test_no_effect_never_detectable(self):
        assert detectability_check([0.0] * 10, 0.5, [0.1] * 11, T0=2) is None

    def test_sign_is_ignored(self):
        phi = [0.0, -3.0, -3.0]
        assert detectability_check(phi, 0.1, [1.0] * 4, T0=1) == 2

    @pytest.mark.parametrize(
        "c, lam, eps, T0, expected",
        [
            (1.0, 0.5, 0.6, 5, 7),
            (-1.0, 0.5, 0.6, 3, 5),
            (0.3, 0.9, 1.0, 10, 21),
            (0.5, 0.0, 0.2, 7, 8),
            (0.2, 0.5, 0.25, 0, None),
        ],
    )
    def test_constant_effect_matches_geometric_sum(self, c, lam, eps, T0, expected):
        steps = 60
        phi = [0.0] * T0 + [c] * (steps - T0)
        closed_form = next(
            (t1 for t1 in range(T0 + 1, steps + 1) if abs(c) * (1.0 - lam ** (t1 - T0)) / (1.0 - lam) > 2.0 * eps),
            None,
        )

        assert closed_form == expected
        assert detectability_check(phi, lam, [eps] * (steps + 1), T0=T0) == expected


class TestRecordedDetections:
    def test_first_violation_per_subsystem(self):
        rows = [
            _row(0, residual=0.05),
            _row(1, residual=0.2),
            _row(2, residual=0.3),
            _row(1, subsystem=2, residual=0.01),
            _row(3, subsystem=2, residual=0.5),
        ]

        assert recorded_detections(rows) == {1: 1, 2: 3}

    def test_unplugged_rows_ignored(self):
        rows = [_row(4, residual=1.0, plugged=0)]

        assert recorded_detections(rows) == {}


class TestEnvelope:
    def test_bounded_sequence_holds(self, rng):
        lam = 0.5
        err = 1.0
        rows = []
        for t in range(40):
            rows.append(_row(t, state=err, estimate=0.0))
            err = lam * err + rng.uniform(-0.1, 0.1)
        report = estimation_error_envelope(rows, lam)

        assert report.holds
        assert report.segments == 1
        assert report.max_ratio <= 1.0 + 1e-9

    def test_gap_starts_new_segment(self):
        rows = [_row(t, state=0.1) for t in (0, 1, 2, 5, 6)]
        report = estimation_error_envelope(rows, 0.5)

        assert report.segments == 2

    def test_cutoff_and_exclusion(self):
        rows = [_row(t, state=0.1) for t in range(10)] + [_row(t, subsystem=2, state=0.1) for t in range(10)]
        report = estimation_error_envelope(rows, 0.5, until=4, exclude=[2])

        assert list(report.per_variable) == ["1:0"]


class TestSigmaBreakdown:
    def test_discounted_parts(self):
        rows = [_row(t, threshold=0.2 if t == 0 else 0.3, threshold_noise=0.1) for t in range(4)]
        out = sigma_breakdown(rows, 0.5, subsystem=1, component=0, t=2)

        assert out["noise"] == pytest.approx(0.5 * 0.1 + 0.1)
        assert out["initial"] == pytest.approx(0.25 * 0.2)
        assert out["carry"] == pytest.approx(0.15 + 0.05)
        assert out["threshold"] == pytest.approx(0.3)

    def test_unknown_component(self):
        assert sigma_breakdown([_row(0)], 0.5, subsystem=9, component=0, t=1) == {}


class TestAnalyzeTrace:
    def test_report_sections(self):
        rows = []
        for t in range(12):
            effect = 1.0 if t >= 5 else 0.0
            residual = 0.8 if t >= 7 else 0.01
            rows.append(_row(t, residual=residual, threshold=0.2, fault_effect=effect, state=0.01))
        report = analyze_trace(rows, lam=0.5, fault_target=1, fault_onset=5)

        assert report["detections"] == {1: 7}
        det = report["detectability"]
        assert det["per_component"] == {0: 6}
        assert det["earliest"] == 6
        assert det["simulated"] == 7
        assert not det["consistent"]
        assert set(det["breakdown"][0]) >= {"noise", "coupling", "input", "drift", "initial", "carry"}

    def test_without_fault(self):
        rows = [_row(t, state=0.01 * np.cos(t)) for t in range(6)]
        report = analyze_trace(rows, lam=0.5)

        assert "detectability" not in report
        assert report["envelope"]["holds"]
