import json

import numpy as np
import pytest

from dpsynth.accountant import ORDERS, AccountantLedger, SubsampledGaussian
from dpsynth.audits import (
    AUDITS,
    AuditReport,
    audit_accountant,
    audit_dppromise,
    audit_sensitivity,
    quadrature_epsilon,
    quadrature_log_moment,
    run_audits,
)
from dpsynth.errors import ValidationError
from dpsynth.pipeline import _json_safe
from dpsynth.synthesizers.diffusion import NoiseSchedule


@pytest.fixture(scope="module")
def sens_report():
    return audit_sensitivity()


def test_sensitivity_passes(sens_report):
    assert sens_report.passed and sens_report.witness == {}


def test_pm1_replace_m4(sens_report):
    row = next(r for r in sens_report.details["rows"]
               if r["alphabet"] == "pm1" and r["notion"] == "replace_one" and r["m"] == 4)
    assert abs(row["achieved"] - 0.5) <= 1e-12 and row["bound"] == 0.5


def test_known_m_halved(sens_report):
    for r in sens_report.details["rows"]:
        if r["alphabet"] == "pm1" and r["notion"] == "add_remove_known_m":
            assert abs(r["achieved"] - 1 / r["m"]) <= 1e-12


def test_random_unit_never_exceeds(sens_report):
    rows = [r for r in sens_report.details["rows"] if r["alphabet"] == "random_unit"]
    assert len(rows) == 15
    assert all(r["achieved"] <= r["bound"] + 1e-12 for r in rows)


def test_failing_report_needs_witness():
    with pytest.raises(ValidationError):
        AuditReport("x", "claim", False)
    assert not AuditReport("x", "claim", False, witness={"a": 1}).passed


def test_dppromise_exact():
    rep = audit_dppromise(trials=100)
    assert rep.passed and rep.witness["max_error"] < 1e-9
    assert set(rep.witness["triple"]) == {"x_t", "e", "t", "x0"}


def test_dppromise_control_arm_far():
    rep = audit_dppromise(trials=50, seed=3)
    assert rep.details["control_min_error"] > 1e-3
    assert rep.details["control_mean_error"] > 1.0


def test_dppromise_custom_schedule():
    rep = audit_dppromise(trials=20, sched=NoiseSchedule.linear(T=10, beta_min=1e-3, beta_max=0.3), d=4)
    assert rep.passed


def test_dppromise_needs_trials():
    with pytest.raises(ValidationError):
        audit_dppromise(trials=0)


def test_quadrature_matches_closed_form_q1():
    for a in (2, 5, 17):
        assert quadrature_log_moment(1.0, 1.3, a) == pytest.approx(a * (a - 1) / (2 * 1.3**2), rel=1e-9)


def test_quadrature_single_release():
    assert quadrature_epsilon(1.0, 1.0, 1, 1e-5) == pytest.approx(5.30, abs=0.01)


def test_accountant_audit_default_grid():
    rep = audit_accountant()
    assert rep.passed
    assert all(r["rel_gap"] <= 1e-4 for r in rep.details["rows"])
    q1 = rep.details["rows"][0]
    assert q1["ledger"] == pytest.approx(5.30, abs=0.01) and q1["oracle"] == pytest.approx(5.30, abs=0.01)


def test_accountant_monotone_in_T():
    rep = audit_accountant([(0.02, 1.0, T, 1e-5) for T in (10, 100, 1000)])
    eps = [r["ledger"] for r in rep.details["rows"]]
    assert rep.passed and eps[0] < eps[1] < eps[2]


def test_q0_contributes_nothing():
    base = AccountantLedger()
    base.append(SubsampledGaussian(0.1, 1.0, 50))
    with_zero = AccountantLedger()
    with_zero.append(SubsampledGaussian(0.1, 1.0, 50))
    with_zero.append(SubsampledGaussian(0.0, 1.0, 1000))
    assert np.array_equal(with_zero.rdp(), base.rdp())
    assert np.all(SubsampledGaussian(0.0, 1.0, 1000).rdp(ORDERS) == 0)


def test_accountant_empty_grid():
    with pytest.raises(ValidationError):
        audit_accountant(())


def test_run_audits_ids_and_json():
    reps = run_audits("sensitivity")
    assert [r.audit_id for r in reps] == ["sensitivity"]
    json.dumps(_json_safe([r.to_dict() for r in reps]), allow_nan=False)
    with pytest.raises(ValidationError):
        run_audits("nope")
    assert set(AUDITS) == {"sensitivity", "dppromise", "accountant"}


def test_audits_deterministic():
    assert audit_dppromise(trials=10).to_dict() == audit_dppromise(trials=10).to_dict()
    assert audit_sensitivity().to_dict() == audit_sensitivity().to_dict()
