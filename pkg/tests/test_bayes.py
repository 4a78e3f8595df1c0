import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synlab import bayes
from synlab.errors import ContractError

# frozen from tests/oracles/derive_constants.py (brute force)
P = np.array([[0.10, 0.05, 0.15], [0.20, 0.10, 0.00], [0.05, 0.25, 0.10]])
Q = np.array([[0.05, 0.10, 0.10], [0.30, 0.05, 0.05], [0.10, 0.15, 0.10]])
TV_ORACLE = 0.1
RISK_ORACLE = 0.40000000000000013


def test_known_instance():
    p, q = bayes.DiscreteJoint(P), bayes.DiscreteJoint(Q)
    assert bayes.total_variation(p.px(), q.px()) == pytest.approx(TV_ORACLE, abs=1e-15)
    assert bayes.bayes_risk(p) == pytest.approx(RISK_ORACLE, abs=1e-15)


def test_enumeration_matches_itertools(rng):
    joint = bayes.random_joint(rng, 4, 3)
    got = bayes.classifier_losses(joint.px(), joint.y_given_x())
    cond, px = joint.y_given_x(), joint.px()
    want = [sum(px[x] * (1 - cond[x, f[x]]) for x in range(4))
            for f in itertools.product(range(3), repeat=4)]
    np.testing.assert_allclose(got, want, atol=1e-15)
    idx = int(np.argmin(got))
    assert bayes.decode_classifier(idx, 4, 3).tolist() == list(
        list(itertools.product(range(3), repeat=4))[idx])


def test_trts_tstr_decompositions(rng):
    p, q = bayes.random_joint(rng, 5, 3), bayes.random_joint(rng, 5, 3)
    f = rng.integers(3, size=5)
    trts = sum(q.px()[x] * p.y_given_x()[x] @ (f[x] != np.arange(3)) for x in range(5))
    tstr = sum(p.px()[x] * q.y_given_x()[x] @ (f[x] != np.arange(3)) for x in range(5))
    assert bayes.trts_expected_loss(p, q, f) == pytest.approx(trts, abs=1e-15)
    assert bayes.tstr_expected_loss(p, q, f) == pytest.approx(tstr, abs=1e-15)


joints = st.tuples(st.integers(1, 6), st.integers(2, 4), st.integers(0, 2**32 - 1))


@settings(max_examples=80, deadline=None)
@given(joints)
def test_bounds_hold_on_random_instances(spec):
    nx, ny, seed = spec
    rng = np.random.default_rng(seed)
    p, q = bayes.random_joint(rng, nx, ny), bayes.random_joint(rng, nx, ny)
    assert bayes.tv_bound_check(p, q, rng.random(nx)).holds
    pm, qm = bayes.random_matched_pair(rng, nx, ny)
    np.testing.assert_allclose(pm.py(), qm.py(), atol=1e-12)
    assert bayes.conditional_tv_bound_check(pm, qm).holds
    if nx <= 4:
        assert bayes.lemma_optimality_check(p).holds


def test_tv_bound_constant_is_not_loose_for_free():
    # point masses on different x: |E_q h - E_p h| = 1 = TV; constant 0.5 must fail
    p = bayes.DiscreteJoint(np.array([[1.0, 0.0], [0.0, 0.0]]))
    q = bayes.DiscreteJoint(np.array([[0.0, 0.0], [1.0, 0.0]]))
    h = np.array([0.0, 1.0])
    assert bayes.tv_bound_check(p, q, h, 1.0).holds
    assert not bayes.tv_bound_check(p, q, h, 0.5).holds


def test_unmatched_priors_are_vacuous_when_a_label_is_missing():
    p = bayes.DiscreteJoint(np.array([[0.5, 0.0], [0.0, 0.5]]))
    q = bayes.DiscreteJoint(np.array([[0.5, 0.0], [0.5, 0.0]]))
    assert bayes.conditional_tv_bound_check(p, q).vacuous


def test_noise_robustness(rng):
    joint = bayes.random_joint(rng, 6, 3)
    for rate in (0.1, 0.5, 0.9):
        n, agree = bayes.noise_robustness_check(joint, rate)
        assert n == agree


def test_verify_all_summary():
    out = bayes.verify_all(n_instances=100, lemma_per_grid=2)
    assert out["all_hold"]
    assert out["checks"]["lemma_optimality"]["n"] == 16
    assert not out["checks"]["conditional_tv_unmatched_prior"]["asserted"]


def test_instances_file(tmp_path):
    doc = {"tv_constant": 0.5, "instances": [
        {"p": [[1.0, 0.0], [0.0, 0.0]], "p_theta": [[0.0, 0.0], [1.0, 0.0]], "h": [0.0, 1.0]}]}
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(doc))
    triples, const = bayes.load_instances(path)
    out = bayes.verify_all(n_instances=10, lemma_per_grid=1, extra_instances=triples,
                           extra_constant=const)
    assert out["checks"]["extra_instances"]["failed"] == 1 and not out["all_hold"]


def test_validation():
    with pytest.raises(ContractError):
        bayes.DiscreteJoint(np.array([[0.5, 0.6]]))
    with pytest.raises(ContractError):
        bayes.DiscreteJoint(np.full((17, 1), 1 / 17))
    p = bayes.DiscreteJoint(P)
    with pytest.raises(ContractError):
        bayes.total_variation(p.px(), np.ones(4) / 4)
    with pytest.raises(ContractError):
        bayes.tv_bound_check(p, p, np.array([0.0, 2.0, 0.0]))
