import numpy as np
import pytest

from gazedistill import tensorcore as tc
from gazedistill.tensorcore import kernels

from gradcheck import check_grads


def rnd(stream, *shape):
    r = tc.RngStream(99, stream)
    return r.uniform(shape) * 4.0 - 2.0  # values in [-2, 2)


class TestPrimitiveForward:
    def test_matmul_identity(self):
        a = tc.Tensor([[1.5, -2.0], [0.25, 3.0]])
        eye = tc.Tensor(np.eye(2, dtype=np.float32))
        out = tc.matmul(eye, a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_conv_identity_kernel(self):
        x = tc.Tensor(np.arange(24, dtype=np.float32).reshape(1, 1, 4, 6))
        k = tc.Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = tc.conv2d(x, k, stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_gelu_zero(self):
        assert tc.gelu(tc.Tensor(0.0)).item() == 0.0

    def test_conv_shape_errors(self):
        x = tc.Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
        w = tc.Tensor(np.zeros((1, 3, 3, 3), dtype=np.float32))
        with pytest.raises(tc.ShapeMismatchError, match="conv2d"):
            tc.conv2d(x, w)
        w_ok = tc.Tensor(np.zeros((1, 2, 3, 3), dtype=np.float32))
        with pytest.raises(tc.InvalidAttributeError, match="stride"):
            tc.conv2d(x, w_ok, stride=0)
        with pytest.raises(tc.InvalidAttributeError, match="padding"):
            tc.conv2d(x, w_ok, padding=-1)

    def test_matmul_shape_error_names_dims(self):
        a = tc.Tensor(np.zeros((2, 3), dtype=np.float32))
        b = tc.Tensor(np.zeros((4, 2), dtype=np.float32))
        with pytest.raises(tc.ShapeMismatchError, match=r"matmul"):
            tc.matmul(a, b)

    def test_softmax_rows_sum_to_one(self):
        x = tc.Tensor(rnd(1, 5, 7))
        s = tc.softmax(x, axis=-1)
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-6)


class TestBackward:
    def test_square_gradient(self):
        x = tc.Tensor(3.0, requires_grad=True)
        with tc.Tape():
            y = tc.mul(x, x)
            tc.backward(y)
        assert x.grad == pytest.approx(6.0)

    def test_non_scalar_root_rejected(self):
        x = tc.Tensor([1.0, 2.0], requires_grad=True)
        with tc.Tape():
            y = tc.mul(x, x)
            with pytest.raises(tc.TapeError, match="scalar"):
                tc.backward(y)

    def test_double_backward_rejected(self):
        x = tc.Tensor(2.0, requires_grad=True)
        with tc.Tape():
            y = tc.mul(x, x)
            tc.backward(y)
            with pytest.raises(tc.TapeError, match="consumed"):
                tc.backward(y)

    def test_non_participating_leaf_holds_zero(self):
        x = tc.Tensor(2.0, requires_grad=True)
        z = tc.Tensor(5.0, requires_grad=True)
        with tc.Tape():
            y = tc.mul(x, x)
            tc.backward(y)
        assert z.grad is not None and z.grad == pytest.approx(0.0)

    def test_no_grad_blocks_recording(self):
        x = tc.Tensor(2.0, requires_grad=True)
        with tc.Tape() as tape:
            with tc.no_grad():
                y = tc.mul(x, x)
        assert len(tape) == 0 and not y.requires_grad

    def test_detach_blocks_gradient(self):
        x = tc.Tensor(2.0, requires_grad=True)
        with tc.Tape():
            y = tc.mul(x.detach(), x)
            tc.backward(y)
        assert x.grad == pytest.approx(2.0)  # only the non-detached factor


class TestGradSuite:
    """Finite-difference checks for every differentiable primitive."""

    def test_add_broadcast(self):
        check_grads(lambda t: tc.reduce_sum(tc.mul(tc.add(t[0], t[1]), t[2])),
                    [rnd(2, 3, 4), rnd(3, 4), rnd(4, 3, 4)])

    def test_sub_mul_div(self):
        den = np.abs(rnd(6, 3, 4)) + 1.0
        check_grads(lambda t: tc.reduce_sum(tc.div(tc.sub(t[0], t[1]), t[2])),
                    [rnd(4, 3, 4), rnd(5, 3, 4), den])

    def test_matmul(self):
        check_grads(lambda t: tc.reduce_sum(tc.matmul(t[0], t[1])),
                    [rnd(7, 4, 3), rnd(8, 3, 5)])

    def test_transpose(self):
        check_grads(lambda t: tc.reduce_sum(tc.matmul(t[0], tc.transpose(t[0]))),
                    [rnd(9, 3, 4)])

    def test_conv2d(self):
        check_grads(
            lambda t: tc.reduce_mean(tc.conv2d(t[0], t[1], stride=2, padding=1)),
            [rnd(10, 2, 3, 6, 7), rnd(11, 4, 3, 3, 3)],
        )

    def test_conv2d_stride1(self):
        check_grads(
            lambda t: tc.reduce_mean(tc.conv2d(t[0], t[1], stride=1, padding=1)),
            [rnd(12, 1, 2, 5, 5), rnd(13, 3, 2, 3, 3)],
        )

    def test_relu(self):
        x = rnd(14, 4, 5)
        x[np.abs(x) < 0.05] += 0.1  # keep away from the kink
        check_grads(lambda t: tc.reduce_sum(tc.relu(t[0])), [x])

    def test_gelu(self):
        check_grads(lambda t: tc.reduce_sum(tc.gelu(t[0])), [rnd(15, 4, 5)])

    def test_log_exp_sqrt(self):
        pos = np.abs(rnd(16, 3, 4)) + 0.5
        check_grads(lambda t: tc.reduce_sum(tc.log(t[0])), [pos])
        check_grads(lambda t: tc.reduce_sum(tc.exp(t[0])), [rnd(17, 3, 4)])
        check_grads(lambda t: tc.reduce_sum(tc.sqrt(t[0])), [pos])

    def test_abs(self):
        x = rnd(18, 4, 4)
        x[np.abs(x) < 0.05] += 0.1
        check_grads(lambda t: tc.reduce_sum(tc.absval(t[0])), [x])

    def test_max_scalar(self):
        x = rnd(19, 4, 4)
        x[np.abs(x - 0.3) < 0.05] += 0.1
        check_grads(lambda t: tc.reduce_sum(tc.max_scalar(t[0], 0.3)), [x])

    def test_softmax(self):
        check_grads(lambda t: tc.reduce_sum(tc.mul(tc.softmax(t[0], axis=-1), t[1])),
                    [rnd(20, 3, 5), rnd(21, 3, 5)])

    def test_log_softmax(self):
        check_grads(lambda t: tc.reduce_sum(tc.mul(tc.log_softmax(t[0], axis=-1), t[1])),
                    [rnd(22, 3, 5), rnd(23, 3, 5)])

    def test_reductions(self):
        check_grads(lambda t: tc.reduce_sum(tc.reduce_mean(t[0], axis=(0, 2))), [rnd(24, 3, 4, 2)])
        check_grads(lambda t: tc.reduce_sum(tc.reduce_var(t[0], axis=0)), [rnd(25, 5, 3)])
        check_grads(lambda t: tc.reduce_mean(t[0]), [rnd(26, 3, 4)])

    def test_concat_reshape(self):
        check_grads(
            lambda t: tc.reduce_sum(
                tc.mul(tc.reshape(tc.concat([t[0], t[1]], axis=1), (12,)), t[2])
            ),
            [rnd(27, 2, 3), rnd(28, 2, 3), rnd(29, 12)],
        )


class TestRng:
    def test_determinism(self):
        a = tc.RngStream(5, 7).uniform((16,))
        b = tc.RngStream(5, 7).uniform((16,))
        np.testing.assert_array_equal(a, b)

    def test_streams_distinct(self):
        a = tc.RngStream(5, 1).uniform((16,))
        b = tc.RngStream(5, 2).uniform((16,))
        assert np.all(a != b)

    def test_uniform_mean(self):
        vals = tc.RngStream(0, 0).uniform((1_000_000,))
        assert abs(vals.mean() - 0.5) < 0.002

    def test_normal_moments(self):
        vals = tc.RngStream(1, 3).normal((200_000,))
        assert abs(vals.mean()) < 0.01
        assert abs(vals.std() - 1.0) < 0.01

    def test_counter_advances(self):
        r = tc.RngStream(2, 4)
        first = r.uniform((8,))
        second = r.uniform((8,))
        assert np.all(first != second)

    def test_child_streams_independent(self):
        r = tc.RngStream(3, 9)
        c1 = r.child("aug", 0)
        c2 = r.child("aug", 1)
        assert c1.stream != c2.stream
        assert r.counter == 0


class TestOptimizer:
    def test_decay_applied_without_gradient(self):
        w = tc.Tensor(1.0, requires_grad=True)
        opt = tc.AdamW({"w": w}, base_lr=0.1, weight_decay=0.01)
        w.zero_grad()
        opt.step()
        assert w.data == pytest.approx(0.999, abs=1e-7)

    def test_first_step_magnitude(self):
        w = tc.Tensor(1.0, requires_grad=True)
        opt = tc.AdamW({"w": w}, base_lr=0.1, weight_decay=0.0)
        w.grad = np.asarray(1.0, dtype=np.float32)
        opt.step()
        assert w.data == pytest.approx(0.9, abs=1e-6)  # bias-corrected mhat = vhat = 1

    def test_warmup_midpoint(self):
        lr = tc.scheduled_lr(50, 1.0, 1000, 0.10, 0.0)  # t = 0.05 * T
        assert lr == pytest.approx(0.5)

    def test_cosine_endpoints(self):
        assert tc.scheduled_lr(100, 1.0, 1000, 0.10, 0.01) == pytest.approx(1.0)
        assert tc.scheduled_lr(1000, 1.0, 1000, 0.10, 0.01) == pytest.approx(0.01)

    def test_zero_grad_zero_decay_is_identity(self):
        data = rnd(30, 4, 3).astype(np.float32)
        w = tc.Tensor(data.copy(), requires_grad=True)
        opt = tc.AdamW({"w": w}, base_lr=0.05, weight_decay=0.0)
        for _ in range(3):
            w.zero_grad()
            opt.step()
        np.testing.assert_array_equal(w.data, data)

    def test_non_finite_gradient_rejected_with_name(self):
        w = tc.Tensor([1.0, 2.0], requires_grad=True)
        opt = tc.AdamW({"spike": w}, base_lr=0.1)
        w.grad = np.array([np.nan, 0.0], dtype=np.float32)
        with pytest.raises(tc.NonFiniteGradError, match="spike"):
            opt.step()

    def test_step_counter_limit(self):
        w = tc.Tensor(1.0, requires_grad=True)
        opt = tc.AdamW({"w": w}, base_lr=0.1, total_steps=2)
        w.zero_grad()
        opt.step()
        opt.step()
        with pytest.raises(RuntimeError, match="exhausted"):
            opt.step()


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        arrays = {
            "backbone/conv0/w": rnd(31, 4, 1, 3, 3).astype(np.float32),
            "/opt/step": np.array([17.0], dtype=np.float32),
        }
        p = tmp_path / "ck.gdck"
        tc.checkpoint.save_arrays(p, arrays)
        back = tc.checkpoint.load_arrays(p)
        assert list(back) == list(arrays)
        for k in arrays:
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.gdck"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(tc.checkpoint.BadMagicError):
            tc.checkpoint.load_arrays(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "ver.gdck"
        p.write_bytes(b"GDCK" + (99).to_bytes(4, "little"))
        with pytest.raises(tc.checkpoint.VersionError):
            tc.checkpoint.load_arrays(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "ok.gdck"
        tc.checkpoint.save_arrays(p, {"w": np.ones((4, 4), dtype=np.float32)})
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(tc.checkpoint.TruncatedError):
            tc.checkpoint.load_arrays(p)


class TestKernelBackends:
    def test_backends_agree_forward_backward(self):
        if not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        x = rnd(32, 2, 3, 9, 11).astype(np.float32)
        w = rnd(33, 4, 3, 3, 3).astype(np.float32)
        gy_seed = rnd(34, 2, 4, 5, 6).astype(np.float32)
        for sh, sw, ph, pw in [(2, 2, 1, 1), (1, 1, 0, 0), (2, 1, 1, 0)]:
            out_np, cols = kernels.conv_numpy.conv2d_forward(x, w, sh, sw, ph, pw)
            out_cy = kernels._convcy.conv2d_forward_f32(x, w, sh, sw, ph, pw)
            np.testing.assert_allclose(out_np, out_cy, rtol=1e-5, atol=1e-5)
            gy = np.ones_like(out_np) * gy_seed[:, :, : out_np.shape[2], : out_np.shape[3]] if gy_seed.shape[2] >= out_np.shape[2] and gy_seed.shape[3] >= out_np.shape[3] else np.ones_like(out_np)
            gx_np, gw_np = kernels.conv_numpy.conv2d_backward(gy, x.shape, w, cols, sh, sw, ph, pw)
            gx_cy = kernels._convcy.conv2d_input_grad_f32(gy, w, x.shape[2], x.shape[3], sh, sw, ph, pw)
            gw_cy = kernels._convcy.conv2d_weight_grad_f32(gy, x, w.shape[2], w.shape[3], sh, sw, ph, pw)
            np.testing.assert_allclose(gx_np, gx_cy, rtol=1e-4, atol=1e-5)
            np.testing.assert_allclose(gw_np, gw_cy, rtol=1e-4, atol=1e-4)
