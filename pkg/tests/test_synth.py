"""
Tests for the synthetic panel generator and the anomaly injector
"""
import numpy as np
import pytest
from pydantic import ValidationError

from core.exceptions import ConfigError, InjectionError, UnknownEventError
from core.panel_io import serialize_panel
from models.schemas import (
    AmountLaw, AmountLawKind, AnomalySpec, CorruptionClass, DummyCorruption, Outcome, WrongYearRule,
)
from services.synth import SynthService, calendar_for, jumbo_share_by_window
from services.validator import ValidatorService
from tests.conftest import generate, small_config


class TestGeneratePanel:
    """Test cases for SynthService.generate_panel"""

    def test_deterministic(self):
        """Test that equal configurations give byte-identical panels"""
        first = serialize_panel(generate(small_config()))
        second = serialize_panel(generate(small_config()))

        assert first == second
        assert first != serialize_panel(generate(small_config(seed=12)))

    def test_panel_shape(self, clean_panel):
        """Test the unit-year-loan layout and the treatment coding"""
        frame = clean_panel.frame

        assert len(clean_panel) == 120 * 9 * 4
        assert set(frame["year"]) == set(range(2001, 2010))
        assert (frame["year"] - frame["time_rel"].astype(int) == 2005).all()
        assert frame.groupby("unit_id")["treated"].nunique().max() == 1
        assert 0.3 < frame.groupby("unit_id")["treated"].first().mean() < 0.7
        assert clean_panel.calendar == calendar_for(small_config())

    def test_outcome_nesting(self, clean_panel):
        """Test that originated records are approved and only they carry a securitization flag"""
        frame = clean_panel.frame

        assert not (frame["originated"] & ~frame["approved"]).any()
        assert (frame["securitized"].notna() == frame["originated"]).all()

    def test_null_approval_rate(self):
        """Test that without effects the approval rate is the baseline"""
        panel = generate(small_config(fe_scale=0.0))

        assert panel.frame["approved"].mean() == pytest.approx(0.5, abs=0.03)

    def test_jumbo_share_target(self):
        """Test that the jumbo share within each window matches the target"""
        config = small_config(n_units=2500, loans_per_unit_year=10, events=[], jumbo_share_target=0.28)
        panel = generate(config)

        shares = jumbo_share_by_window(panel, [0.01, 0.05, 0.10, 0.20])

        assert len(panel) == 2500 * 9 * 10
        for share in shares.values():
            assert share == pytest.approx(0.28, abs=0.02)

    def test_point_mass_law(self):
        """Test that a point-mass law places every loan at the same distance"""
        law = AmountLaw(kind=AmountLawKind.POINT_MASS, offset=-0.02)
        panel = generate(small_config(amount_law=law))

        distance = np.log(panel.frame["true_amount"]) - np.log(panel.frame["limit"])
        np.testing.assert_allclose(distance, -0.02, atol=1e-5)
        assert panel.below_limit().all()

    def test_limit_overrides(self):
        """Test that high-cost units and yearly schedules set the limit"""
        config = small_config(limit_schedule={2008: 417.0}, high_cost_limits={"U00000": 625.5})
        frame = generate(config).frame

        assert (frame.loc[frame["unit_id"] == "U00000", "limit"] == 625.5).all()
        others = frame[frame["unit_id"] != "U00000"]
        assert (others.loc[others["year"] == 2008, "limit"] == 417.0).all()
        assert (others.loc[others["year"] == 2007, "limit"] == 424.1).all()

    def test_invalid_probability(self):
        """Test that a baseline pushed outside [0, 1] by the effects is rejected"""
        with pytest.raises(ConfigError):
            generate(small_config(baseline_approval=1.0))

    def test_origination_above_approval(self):
        """Test that origination cannot be more likely than approval"""
        with pytest.raises(ConfigError):
            generate(small_config(baseline_approval=0.3, baseline_origination=0.5))

    def test_planted_coefficient_names(self):
        """Test that planted effects at the reference time or with unknown names are rejected"""
        with pytest.raises(ValidationError):
            small_config(planted={Outcome.APPROVED: {"treated_x_time_-1": 0.1}})
        with pytest.raises(ValidationError):
            small_config(planted={Outcome.APPROVED: {"below_limit": 0.1}})


class TestInjectAnomalies:
    """Test cases for SynthService.inject_anomalies"""

    def setup_method(self):
        self.service = SynthService(small_config())
        self.validator = ValidatorService()

    def test_empty_spec_returns_input(self, clean_panel):
        """Test that an empty anomaly spec is a no-op"""
        assert self.service.inject_anomalies(clean_panel, AnomalySpec()) is clean_panel

    def test_wrong_year_share(self, clean_panel):
        """Test that the validator reports exactly the injected wrong-year share"""
        spec = AnomalySpec(wrong_year_rules=[WrongYearRule(event_id="E2005", wrong_year=2006, share=0.295)], seed=1)

        corrupted = self.service.inject_anomalies(clean_panel, spec)
        check = self.validator.check_event_year_consistency(corrupted)

        assert check.count == round(0.295 * len(clean_panel))
        assert check.per_event_shares["E2005"] == pytest.approx(0.295, abs=0.001)
        assert set(check.table.loc[~check.table["canonical"], "coded_year"]) == {2006}
        assert self.validator.check_event_year_consistency(clean_panel).count == 0

    def test_dummy_corruptions(self, clean_panel):
        """Test that drop-all and duplicate-pair corruptions are counted exactly"""
        spec = AnomalySpec(dummy_corruptions=[
            DummyCorruption(kind=CorruptionClass.DROP_ALL, count=40),
            DummyCorruption(kind=CorruptionClass.DUPLICATE_PAIR, count=25),
        ], seed=2)

        corrupted = self.service.inject_anomalies(clean_panel, spec)
        check = self.validator.check_time_dummy_partition(corrupted)

        assert corrupted.has_explicit_dummies
        assert len(check.no_dummy) == 40
        assert len(check.multiple) == 25
        assert check.histogram[2] == 25
        assert not set(check.no_dummy) & set(check.multiple)

    def test_injection_is_seeded(self, clean_panel):
        """Test that the same seed corrupts the same records"""
        spec = AnomalySpec(wrong_year_rules=[WrongYearRule(event_id="E2005", wrong_year=2004, share=0.1)], seed=9)

        first = self.service.inject_anomalies(clean_panel, spec)
        second = self.service.inject_anomalies(clean_panel, spec)

        assert first.frame.equals(second.frame)

    def test_over_count(self, clean_panel):
        """Test that asking for more corruptions than eligible records fails without touching the input"""
        spec = AnomalySpec(dummy_corruptions=[DummyCorruption(kind=CorruptionClass.DROP_ALL, count=10**6)])

        with pytest.raises(InjectionError):
            self.service.inject_anomalies(clean_panel, spec)

        assert not clean_panel.has_explicit_dummies
        assert self.validator.check_time_dummy_partition(clean_panel).no_dummy == []

    def test_invalid_rules(self, clean_panel):
        """Test that unknown events and canonical wrong years are rejected"""
        with pytest.raises(UnknownEventError):
            self.service.inject_anomalies(clean_panel, AnomalySpec(
                wrong_year_rules=[WrongYearRule(event_id="NOPE", wrong_year=2006, share=0.1)]
            ))
        with pytest.raises(InjectionError):
            self.service.inject_anomalies(clean_panel, AnomalySpec(
                wrong_year_rules=[WrongYearRule(event_id="E2005", wrong_year=2005, share=0.1)]
            ))

    def test_band_rule_peaks(self, clean_panel):
        """Test that a banded rule concentrates wrong years in one distance bin"""
        rule = WrongYearRule(event_id="E2005", wrong_year=2006, share=1.0, band=(-0.01, 0.0))
        corrupted = self.service.inject_anomalies(clean_panel, AnomalySpec(wrong_year_rules=[rule]))

        report = ValidatorService(bin_width=0.01).build_report(corrupted)

        by_lo = {round(b.lo, 4): b for b in report.binned_shares}
        assert by_lo[-0.01].share == 1.0
        assert by_lo[-0.02].share == 0.0
        assert by_lo[0.0].share == 0.0

    def test_tally_matches_validator(self, clean_panel):
        """Test that the reported anomaly counts equal the validator's after both injections"""
        spec = AnomalySpec(
            wrong_year_rules=[WrongYearRule(event_id="E2005", wrong_year=2006, share=0.3)],
            dummy_corruptions=[
                DummyCorruption(kind=CorruptionClass.DROP_ALL, count=40),
                DummyCorruption(kind=CorruptionClass.DUPLICATE_PAIR, count=25),
            ],
            seed=3,
        )

        corrupted = self.service.inject_anomalies(clean_panel, spec)
        check = self.validator.check_time_dummy_partition(corrupted)

        recoded = corrupted.time_rel() != clean_panel.time_rel()
        left_window = recoded & corrupted.treated() & (np.abs(corrupted.time_rel()) > 4)
        assert left_window.any()
        assert len(check.no_dummy) == 40 + int(left_window.sum())
        assert self.service.injected == {
            "wrong_year": self.validator.check_event_year_consistency(corrupted).count,
            "no_dummy": len(check.no_dummy),
            "multiple": 25,
        }

    def test_tally_without_dummy_corruption(self, clean_panel):
        """Test that recoded records pushed out of the window count as records without a dummy"""
        spec = AnomalySpec(wrong_year_rules=[WrongYearRule(event_id="E2005", wrong_year=2006, share=0.5)], seed=6)

        corrupted = self.service.inject_anomalies(clean_panel, spec)

        outside = corrupted.treated() & (np.abs(corrupted.time_rel()) > 4)
        assert not corrupted.has_explicit_dummies
        assert self.service.injected["no_dummy"] == int(outside.sum())
        assert self.service.injected["multiple"] == 0
        assert self.service.injected["wrong_year"] == round(0.5 * len(clean_panel))
