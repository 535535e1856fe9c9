import numpy as np
import pytest

from clickrefine import kernels as K


def direct_bilinear(fm, y, x):
    """Textbook bilinear formula with zero padding; independent of kernels."""
    h, w, c = fm.shape
    u, v = y - 0.5, x - 0.5
    r0, c0 = int(np.floor(u)), int(np.floor(v))
    ay, ax = u - r0, v - c0
    out = np.zeros(c)
    for dr, wy in ((0, 1 - ay), (1, ay)):
        for dc, wx in ((0, 1 - ax), (1, ax)):
            rr, cc = r0 + dr, c0 + dc
            if 0 <= rr < h and 0 <= cc < w:
                out += wy * wx * fm[rr, cc]
    return out


def reference_roi_align(fm, box, out_size, samples=2):
    """Scalar-loop RoIAlign oracle built on the direct bilinear formula."""
    x0, y0, x1, y1 = box
    bw, bh = (x1 - x0) / out_size, (y1 - y0) / out_size
    out = np.zeros((out_size, out_size, fm.shape[2]))
    for i in range(out_size):
        for j in range(out_size):
            acc = np.zeros(fm.shape[2])
            for sy in range(samples):
                for sx in range(samples):
                    y = y0 + (i + (sy + 0.5) / samples) * bh
                    x = x0 + (j + (sx + 0.5) / samples) * bw
                    acc += direct_bilinear(fm, y, x)
            out[i, j] = acc / (samples * samples)
    return out


class TestBackends:
    def test_im2col_backends_agree(self):
        rng = np.random.default_rng(0)
        xp = rng.normal(size=(13, 11, 5))
        for stride in (1, 2):
            a = K.im2col_numpy(xp, 3, stride)
            b = K.im2col_numba(xp, 3, stride)
            assert np.allclose(a, b, atol=0, rtol=0)

    def test_col2im_is_adjoint_of_im2col(self):
        rng = np.random.default_rng(1)
        xp = rng.normal(size=(12, 10, 4))
        for impl_f, impl_b in (
            (K.im2col_numpy, K.col2im_numpy),
            (K.im2col_numba, K.col2im_numba),
        ):
            cols = impl_f(xp, 3, 2)
            y = rng.normal(size=cols.shape)
            lhs = float(np.sum(cols * y))
            rhs = float(np.sum(xp * impl_b(y, 12, 10, 4, 3, 2)))
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_roi_align_backends_agree(self):
        rng = np.random.default_rng(2)
        fm = rng.normal(size=(9, 9, 6))
        boxes = np.array([[0.3, 0.7, 6.1, 8.2], [-2.0, -1.0, 3.0, 4.0], [2.0, 2.0, 2.5, 2.5]])
        a = K.roi_align_numpy(fm, boxes, 5)
        b = K.roi_align_numba(fm, boxes, 5)
        assert np.allclose(a, b, atol=1e-12)

    def test_resize_backends_agree(self):
        rng = np.random.default_rng(3)
        img = rng.random(size=(17, 13, 3))
        a = K.resize_bilinear_numpy(img, 9, 21)
        b = K.resize_bilinear_numba(img, 9, 21)
        assert np.allclose(a, b, atol=1e-12)

    def test_env_flag_selects_backend(self):
        assert K.backend() in ("numba", "numpy")


class TestRoiAlign:
    def test_constant_map_gives_constant(self):
        fm = np.full((8, 8, 3), 2.5)
        out = K.roi_align(fm, np.array([[1.0, 1.0, 7.0, 6.0]]), 4)
        assert np.allclose(out, 2.5)

    def test_exact_cover_two_by_two(self):
        fm = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
        out = K.roi_align(fm, np.array([[0.0, 0.0, 2.0, 2.0]]), 1)
        # the four sample points land exactly on the cell centers
        assert out[0, 0, 0, 0] == pytest.approx((1 + 2 + 3 + 4) / 4)

    def test_fully_outside_box_is_zero(self):
        rng = np.random.default_rng(4)
        fm = rng.normal(size=(6, 6, 2))
        out = K.roi_align(fm, np.array([[20.0, 20.0, 30.0, 30.0]]), 3)
        assert np.all(out == 0.0)

    def test_matches_reference_oracle(self):
        rng = np.random.default_rng(5)
        fm = rng.normal(size=(10, 12, 4))
        boxes = np.array([[0.37, 1.21, 9.83, 7.66], [-1.5, 2.0, 14.0, 11.0]])
        out = K.roi_align(fm, boxes, 7)
        for i, box in enumerate(boxes):
            ref = reference_roi_align(fm, box, 7)
            assert np.max(np.abs(out[i] - ref)) < 1e-5

    def test_linearity_in_feature_map(self):
        rng = np.random.default_rng(6)
        fa = rng.normal(size=(8, 8, 3))
        fb = rng.normal(size=(8, 8, 3))
        boxes = np.array([[0.5, 0.5, 7.5, 7.5]])
        alpha, beta = 0.7, -1.3
        lhs = K.roi_align(alpha * fa + beta * fb, boxes, 5)
        rhs = alpha * K.roi_align(fa, boxes, 5) + beta * K.roi_align(fb, boxes, 5)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_average_pooling_on_tiled_box(self):
        # a 4x4 map with S=2 and a box covering it exactly: each bin's 2x2
        # samples land on cell centers, so the result is 2x2 average pooling
        fm = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
        out = K.roi_align(fm, np.array([[0.0, 0.0, 4.0, 4.0]]), 2)
        expected = fm[:, :, 0].reshape(2, 2, 2, 2).mean(axis=(1, 3))
        assert np.allclose(out[0, :, :, 0], expected)

    def test_gradients_match_finite_differences(self):
        from fd_util import numeric_grad, rel_err

        rng = np.random.default_rng(7)
        fm = rng.normal(size=(8, 9, 3))
        boxes = np.array([[1.37, 2.11, 6.53, 7.49], [0.21, 0.77, 3.33, 4.61]])
        proj = rng.normal(size=(2, 5, 5, 3))

        def scalar():
            return float(np.sum(K.roi_align(fm, boxes, 5) * proj))

        base = K.roi_align(fm, boxes, 5)
        assert base.shape == (2, 5, 5, 3)
        gfm, gboxes = K.roi_align_grads(fm, boxes, 5, proj)

        idx = rng.choice(fm.size, 25, replace=False)
        for i, d in numeric_grad(scalar, fm, idx).items():
            assert rel_err(float(gfm.reshape(-1)[i]), d) < 1e-6
        for i, d in numeric_grad(scalar, boxes).items():
            assert rel_err(float(gboxes.reshape(-1)[i]), d) < 1e-5


class TestBilinearLookup:
    def test_cell_center_identity(self):
        rng = np.random.default_rng(8)
        fm = rng.normal(size=(6, 6, 4))
        out = K.bilinear_lookup(fm, 2.5, 3.5)
        assert np.allclose(out, fm[2, 3])

    def test_midway_average(self):
        rng = np.random.default_rng(9)
        fm = rng.normal(size=(6, 6, 4))
        out = K.bilinear_lookup(fm, 2.5, 3.0)
        assert np.allclose(out, (fm[2, 2] + fm[2, 3]) / 2)

    def test_random_positions_match_direct_formula(self):
        rng = np.random.default_rng(10)
        fm = rng.normal(size=(7, 9, 5))
        for _ in range(50):
            y, x = rng.uniform(-1, 8), rng.uniform(-1, 10)
            assert np.max(np.abs(K.bilinear_lookup(fm, y, x) - direct_bilinear(fm, y, x))) < 1e-6

    def test_grad_is_adjoint(self):
        rng = np.random.default_rng(11)
        fm = rng.normal(size=(5, 5, 3))
        g = rng.normal(size=3)
        y, x = 1.7, 2.3
        gfm = K.bilinear_lookup_grad(fm.shape, y, x, g)
        assert float(np.sum(gfm * fm)) == pytest.approx(
            float(np.dot(K.bilinear_lookup(fm, y, x), g)), rel=1e-12
        )


class TestNcc:
    def test_peak_at_embedded_template(self):
        rng = np.random.default_rng(12)
        window = rng.random(size=(40, 50, 3))
        template = window[12:20, 30:41].copy()
        resp = K.ncc_response(window, template)
        pos = np.unravel_index(np.argmax(resp), resp.shape)
        assert pos == (12, 30)
        assert resp[12, 30] == pytest.approx(1.0, abs=1e-6)

    def test_response_bounded(self):
        rng = np.random.default_rng(13)
        window = rng.random(size=(30, 30, 3))
        template = rng.random(size=(8, 8, 3))
        resp = K.ncc_response(window, template)
        assert np.all(resp <= 1.0) and np.all(resp >= -1.0)

    def test_flat_window_scores_zero(self):
        window = np.full((20, 20, 3), 0.5)
        rng = np.random.default_rng(14)
        template = rng.random(size=(6, 6, 3))
        resp = K.ncc_response(window, template)
        assert np.allclose(resp, 0.0)

    def test_invariant_to_template_gain_and_bias(self):
        rng = np.random.default_rng(15)
        window = rng.random(size=(25, 25, 3))
        template = rng.random(size=(7, 7, 3))
        a = K.ncc_response(window, template)
        b = K.ncc_response(window, 3.0 * template + 0.25)
        assert np.allclose(a, b, atol=1e-9)
