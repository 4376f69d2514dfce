import math

import numpy as np
import pytest

from gazedistill import losses
from gazedistill.losses import (
    DinoHeadConfig,
    DinoState,
    GazeLossConfig,
    VicConfig,
    cosine_weight,
    dino_sd,
    gaze_loss,
    pseudo_loss,
    sd_mse,
    sp_kd,
    stage1_total,
    stage2_total,
    vic_kd,
)
from gazedistill import tensorcore as tc
from gazedistill.tensorcore import Tape, Tensor, backward

from gradcheck import check_grads

# test units: knee at 1, outliers past 5, down-weight 0.5
TEST_CFG = GazeLossConfig(beta=1.0, gamma=5.0, k=0.5)


def scalar_gaze_loss(err: float) -> float:
    y = Tensor(np.array([[0.0]], dtype=np.float32))
    yh = Tensor(np.array([[err]], dtype=np.float32))
    return gaze_loss(y, yh, TEST_CFG).item()


class TestGazeLoss:
    def test_zero_error(self):
        assert scalar_gaze_loss(0.0) == 0.0

    @pytest.mark.parametrize(
        "err,expected",
        [(0.5, 0.125), (2.0, 1.5), (10.0, 4.75), (-0.5, 0.125), (-10.0, 4.75)],
    )
    def test_piecewise_values(self, err, expected):
        assert scalar_gaze_loss(err) == pytest.approx(expected, abs=1e-6)

    def test_continuity_at_beta(self):
        below = scalar_gaze_loss(1.0 - 1e-4)
        at = scalar_gaze_loss(1.0)
        assert below == pytest.approx(0.5, abs=1e-3)
        assert at == pytest.approx(0.5, abs=1e-6)

    def test_jump_factor_at_gamma(self):
        just_below = scalar_gaze_loss(5.0 - 1e-6)
        at = scalar_gaze_loss(5.0)
        assert just_below == pytest.approx(4.5, abs=1e-4)
        assert at == pytest.approx(2.25, abs=1e-6)

    def test_batch_averaging(self):
        y = Tensor(np.zeros((2, 2), dtype=np.float32))
        yh = Tensor(np.array([[0.5, 2.0], [10.0, 0.0]], dtype=np.float32))
        expected = (0.125 + 1.5 + 4.75 + 0.0) / 4
        assert gaze_loss(y, yh, TEST_CFG).item() == pytest.approx(expected, abs=1e-6)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            GazeLossConfig(beta=2.0, gamma=1.0, k=0.5).validate()
        with pytest.raises(ValueError):
            GazeLossConfig(beta=1.0, gamma=5.0, k=1.5).validate()

    def test_gradient_bounded_by_one(self):
        for err in (0.4, 2.5, 20.0):
            yh = Tensor(np.array([[err]], dtype=np.float32), requires_grad=True)
            with Tape():
                loss = gaze_loss(Tensor(np.zeros((1, 1), dtype=np.float32)), yh, TEST_CFG)
                backward(loss)
            assert abs(float(yh.grad[0, 0])) <= 1.0 + 1e-6

    def test_gradcheck(self):
        y = np.array([[0.3, -1.7, 6.0, 0.02]], dtype=np.float64)
        check_grads(
            lambda t: gaze_loss(Tensor(np.zeros((1, 4))), t[0], TEST_CFG),
            [y],
        )


class TestSdMse:
    def test_identity_zero(self):
        z = Tensor(np.ones((3, 4), dtype=np.float32))
        assert sd_mse(z, z).item() == 0.0

    def test_unit_displacement(self):
        zt = Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
        zs = Tensor(np.array([[0.0, 0.0]], dtype=np.float32))
        assert sd_mse(zt, zs).item() == pytest.approx(1.0)

    def test_teacher_detached(self):
        zt = Tensor(np.ones((2, 3), dtype=np.float32), requires_grad=True)
        zs = Tensor(np.zeros((2, 3), dtype=np.float32), requires_grad=True)
        with Tape():
            loss = sd_mse(zt, zs)
            backward(loss)
        np.testing.assert_array_equal(zt.grad, 0.0)
        assert np.abs(zs.grad).sum() > 0

    def test_gradcheck(self):
        from gazedistill.tensorcore.rng import RngStream

        zt = RngStream(1, 2).uniform((3, 5))
        check_grads(
            lambda t: sd_mse(Tensor(zt), t[0]),
            [RngStream(3, 4).uniform((3, 5))],
        )


class TestPseudoLoss:
    def test_agreement(self):
        y = Tensor(np.full((2, 4), 0.3, dtype=np.float32))
        assert pseudo_loss(y, y, TEST_CFG).item() == 0.0

    def test_matches_gaze_loss(self):
        from gazedistill.tensorcore.rng import RngStream

        r = RngStream(5, 6)
        yt = Tensor((r.uniform((4, 4)) * 8 - 4).astype(np.float32))
        ys = Tensor((r.uniform((4, 4)) * 8 - 4).astype(np.float32))
        assert pseudo_loss(yt, ys, TEST_CFG).item() == gaze_loss(yt, ys, TEST_CFG).item()

    def test_no_gradient_to_teacher(self):
        yt = Tensor(np.ones((2, 4), dtype=np.float32), requires_grad=True)
        ys = Tensor(np.zeros((2, 4), dtype=np.float32), requires_grad=True)
        with Tape():
            loss = pseudo_loss(yt, ys, TEST_CFG)
            backward(loss)
        np.testing.assert_array_equal(yt.grad, 0.0)


class TestVicKd:
    def test_constant_batch_hinge(self):
        cfg = VicConfig(lam_inv=0.0, lam_var=1.0, lam_cov=0.0, gamma_v=1.0)
        z = Tensor(np.full((4, 3), 0.7, dtype=np.float32))
        assert vic_kd(z, z, cfg).item() == pytest.approx(1.0, abs=1e-6)

    def test_two_point_covariance(self):
        cfg = VicConfig(lam_inv=0.0, lam_var=0.0, lam_cov=2.0)
        z = Tensor(np.array([[1.0, -1.0], [-1.0, 1.0]], dtype=np.float32))
        # off-diagonals are -1 each; sum of squares 2, / dim 2 -> 1.0
        assert vic_kd(z, z, cfg).item() == pytest.approx(2.0, abs=1e-6)

    def test_whitened_batch_near_zero(self):
        cfg = VicConfig()
        # non-constant Hadamard columns over 8 rows: zero-mean, mutually
        # orthogonal dims with population std 1.5 >= gamma_v
        h2 = np.array([[1, 1], [1, -1]], dtype=np.float32)
        h8 = np.kron(np.kron(h2, h2), h2)
        z = Tensor(1.5 * h8[:, 1:5])
        assert vic_kd(z, z, cfg).item() == pytest.approx(0.0, abs=1e-5)

    def test_batch_of_one_rejected(self):
        z = Tensor(np.ones((1, 4), dtype=np.float32))
        with pytest.raises(ValueError, match="batch"):
            vic_kd(z, z, VicConfig())

    def test_gradcheck(self):
        from gazedistill.tensorcore.rng import RngStream

        zt = RngStream(7, 8).uniform((5, 4)) * 2 - 1
        zs = RngStream(9, 10).uniform((5, 4)) * 2 - 1
        check_grads(lambda t: vic_kd(Tensor(zt), t[0], VicConfig()), [zs])


class TestSpKd:
    def test_identical_features_zero(self):
        from gazedistill.tensorcore.rng import RngStream

        h = Tensor(RngStream(11, 1).uniform((4, 6)).astype(np.float32))
        assert sp_kd(h, h).item() == pytest.approx(0.0, abs=1e-10)

    def test_scale_invariance(self):
        from gazedistill.tensorcore.rng import RngStream

        h = RngStream(12, 2).uniform((4, 6)).astype(np.float32) + 0.1
        a = Tensor(h)
        b = Tensor(3.0 * h)
        assert sp_kd(a, b).item() == pytest.approx(0.0, abs=1e-9)

    def test_orthonormal_vs_identical_positive(self):
        ht = Tensor(np.eye(3, dtype=np.float32))
        hs = Tensor(np.ones((3, 3), dtype=np.float32))
        assert sp_kd(ht, hs).item() > 0.01

    def test_batch_of_one_rejected(self):
        h = Tensor(np.ones((1, 3), dtype=np.float32))
        with pytest.raises(ValueError, match="batch"):
            sp_kd(h, h)

    def test_gradcheck(self):
        from gazedistill.tensorcore.rng import RngStream

        ht = RngStream(13, 3).uniform((4, 5)) + 0.2
        hs = RngStream(14, 4).uniform((4, 5)) + 0.2
        check_grads(lambda t: sp_kd(Tensor(ht), t[0]), [hs])


class TestDinoSd:
    def make_state(self, dim=6, protos=8):
        cfg = DinoHeadConfig(prototypes=protos)
        state = DinoState.create(cfg, seed=0, in_dim=dim)
        return state

    def test_uniform_teacher_uniform_student(self):
        state = self.make_state()
        p = state.cfg.prototypes
        state.prototypes.data[...] = 0.0  # all logits equal -> uniform
        zt = Tensor(np.ones((3, 6), dtype=np.float32))
        zs = Tensor(np.ones((3, 6), dtype=np.float32))
        loss = dino_sd(zt, zs, state, update_center=False)
        assert loss.item() == pytest.approx(math.log(p), abs=1e-5)

    def test_loss_at_least_target_entropy(self):
        state = self.make_state()
        from gazedistill.tensorcore.rng import RngStream

        zt = Tensor(RngStream(15, 5).uniform((4, 6)).astype(np.float32))
        loss = dino_sd(zt, zt, state, update_center=False)
        # cross-entropy >= entropy of the target (student temp differs, so
        # equality is not expected)
        assert loss.item() > 0.0

    def test_center_update(self):
        state = self.make_state()
        zt = Tensor(np.ones((4, 6), dtype=np.float32))
        zs = Tensor(np.ones((4, 6), dtype=np.float32))
        logits = zt.data @ state.prototypes.data
        expected = 0.1 * logits.mean(axis=0)
        dino_sd(zt, zs, state, update_center=True)
        np.testing.assert_allclose(state.center, expected, atol=1e-6)

    def test_teacher_fully_detached(self):
        state = self.make_state()
        zt = Tensor(np.ones((2, 6), dtype=np.float32), requires_grad=True)
        zs = Tensor(np.ones((2, 6), dtype=np.float32), requires_grad=True)
        with Tape():
            loss = dino_sd(zt, zs, state, update_center=False)
            backward(loss)
        np.testing.assert_array_equal(zt.grad, 0.0)

    def test_gradcheck(self):
        from gazedistill.tensorcore.rng import RngStream

        state = self.make_state()
        state64 = DinoState(
            Tensor(state.prototypes.data.astype(np.float64), requires_grad=True),
            state.center.copy(),
            state.cfg,
        )
        zt = RngStream(16, 6).uniform((3, 6))
        zs = RngStream(17, 7).uniform((3, 6))

        def build(t):
            st = DinoState(Tensor(state.prototypes.data.astype(np.float64)), state.center.copy(), state.cfg)
            return dino_sd(Tensor(zt), t[0], st, update_center=False)

        check_grads(build, [zs])


class TestSchedules:
    def test_cosine_endpoints_and_midpoint(self):
        assert cosine_weight(1.0, 0.0, 0, 100) == pytest.approx(1.0, abs=1e-9)
        assert cosine_weight(1.0, 0.0, 100, 100) == pytest.approx(0.0, abs=1e-9)
        assert cosine_weight(1.0, 0.0, 50, 100) == pytest.approx(0.5, abs=1e-9)
        assert cosine_weight(0.25, 0.75, 50, 100) == pytest.approx(0.5, abs=1e-9)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            cosine_weight(1.0, 0.0, -1, 100)
        with pytest.raises(ValueError):
            cosine_weight(1.0, 0.0, 101, 100)

    def test_monotone(self):
        vals = [cosine_weight(1.0, 0.0, t, 200) for t in range(201)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_symmetry(self):
        for t in (0, 13, 77, 100):
            w1 = cosine_weight(0.8, 0.2, t, 100)
            w2 = cosine_weight(0.2, 0.8, t, 100)
            assert w1 + w2 == pytest.approx(1.0, abs=1e-12)

    def test_stage1_total_endpoints(self):
        l_syn = Tensor(np.float32(3.0))
        l_sd = Tensor(np.float32(5.0))
        l_ps = Tensor(np.float32(7.0))
        total0, _, _ = stage1_total(l_syn, l_sd, l_ps, 0, 100)
        totalT, _, _ = stage1_total(l_syn, l_sd, l_ps, 100, 100)
        assert total0.item() == pytest.approx(3.0, abs=1e-6)
        assert totalT.item() == pytest.approx(12.0, abs=1e-6)

    def test_stage1_scheduler_off(self):
        l_syn = Tensor(np.float32(3.0))
        l_sd = Tensor(np.float32(5.0))
        l_ps = Tensor(np.float32(7.0))
        for t in (0, 33, 100):
            total, lam_s, lam_d = stage1_total(l_syn, l_sd, l_ps, t, 100, scheduler_off=True)
            assert (lam_s, lam_d) == (0.5, 0.5)
            assert total.item() == pytest.approx(0.5 * 3 + 0.5 * 12, abs=1e-6)

    def test_stage2_total(self):
        l = [Tensor(np.float32(v)) for v in (1.0, 2.0, 4.0, 8.0)]
        total0, lam_t0, lam_e0 = stage2_total(*l, 0, 100)
        assert (lam_t0, lam_e0) == (1.0, 0.0)
        assert total0.item() == pytest.approx(3.0, abs=1e-6)
        totalT, lam_tT, lam_eT = stage2_total(*l, 100, 100)
        assert (lam_tT, lam_eT) == (1.0, 1.0)
        assert totalT.item() == pytest.approx(15.0, abs=1e-6)
        zeros = [Tensor(np.float32(0.0))] * 4
        assert stage2_total(*zeros, 50, 100)[0].item() == 0.0
