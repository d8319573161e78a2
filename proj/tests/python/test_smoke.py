import math

import pytest

import gere


def test_f1_avg():
    assert gere.f1_avg(38.3213, 37.4720) == pytest.approx(37.8919, abs=1e-3)
    assert gere.f1_avg(50.0, 50.0) == pytest.approx(50.0, abs=1e-9)


def test_replay_count():
    assert gere.replay_count(4 / 64, 8) == 1
    assert gere.replay_count(0.25, 64) == 16


def test_classify_and_pack_roundtrip():
    S = gere.ActivationState
    states = [S.NonActivated, S.PositivelyActivated, S.NegativelyActivated, S.NonActivated]
    packed = gere.pack_states(states)
    assert packed == b"\x24"
    assert gere.unpack_states(packed, 4) == states
    assert gere.classify_state(2.0, -1.0, 1.0) == S.PositivelyActivated
    assert gere.classify_state(-2.0, -1.0, 1.0) == S.NegativelyActivated
    assert gere.classify_state(1.0, -1.0, 1.0) == S.NonActivated


def test_tm_loss_worked_example():
    # states come from the target; tau = (-1, 1): losses 0.5, 1.3, 1.0
    pred = [1.5, 0.3, 0.0]
    target = [0.0, -2.0, 2.0]
    loss = gere.tm_loss(pred, target, [-1.0], [1.0])
    assert loss == pytest.approx((0.5 + 1.3 + 1.0) / 3, abs=1e-6)
    # the spec's two-dim average: losses {0.5, 1.3} over one token -> 0.9
    loss2 = gere.tm_loss([1.5, 0.3], [0.0, -2.0], [-1.0, -1.0], [1.0, 1.0])
    assert loss2 == pytest.approx(0.9, abs=1e-6)


def test_feature_losses():
    pred = [1.0, 2.0, 3.0, 4.0]
    target = [0.0, 2.0, 3.0, 6.0]
    assert gere.l1_feature_loss(pred, target, 2) == pytest.approx((1 + 2) / 4, abs=1e-9)
    assert gere.l2_feature_loss(pred, target, 2) == pytest.approx((1 + 4) / 4, abs=1e-9)


def test_kl_logit_loss():
    # probs (0.25, 0.75) vs (0.75, 0.25): KL = 0.5 * ln 3
    ln3 = math.log(3.0)
    assert gere.kl_logit_loss([0.0, ln3], [ln3, 0.0], 2, 1.0) == pytest.approx(
        0.5 * ln3, abs=1e-6
    )
    assert gere.kl_logit_loss([1.0, 2.0], [1.0, 2.0], 2, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_combine_losses():
    total, w = gere.combine_losses(2.0, 0.5, "dynamic")
    assert w == pytest.approx(4.0, abs=1e-9)
    assert total == pytest.approx(4.0, abs=1e-9)
    total, w = gere.combine_losses(2.0, 0.5, "fixed:100")
    assert w == pytest.approx(100.0, abs=1e-9)
    assert total == pytest.approx(52.0, abs=1e-9)


def test_plan_bi_contract():
    batches = gere.plan_bi(600, 64, 64, 4 / 64, seed=7)
    assert len(batches) == 10
    for b in batches:
        assert len(b) == 64
        assert sum(1 for src, _ in b if src == "replay") == 4


def test_plan_vanilla_mix_covers_task():
    batches = gere.plan_vanilla_mix(100, 20, 16, seed=3)
    task_idx = sorted(i for b in batches for src, i in b if src == "task")
    assert task_idx == list(range(100))
