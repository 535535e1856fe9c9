import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickrefine import geometry as geo
from clickrefine.errors import InputError, InvalidGeometryError, PointOutsideBoxError


def raster_iou(a: geo.Box, b: geo.Box) -> float:
    """Pixel-count IoU oracle for integer boxes on an explicit grid."""
    x_hi = int(max(a.x1, b.x1)) + 1
    y_hi = int(max(a.y1, b.y1)) + 1
    grid_a = np.zeros((y_hi, x_hi), dtype=bool)
    grid_b = np.zeros((y_hi, x_hi), dtype=bool)
    grid_a[int(a.y0) : int(a.y1), int(a.x0) : int(a.x1)] = True
    grid_b[int(b.y0) : int(b.y1), int(b.x0) : int(b.x1)] = True
    inter = np.count_nonzero(grid_a & grid_b)
    union = np.count_nonzero(grid_a | grid_b)
    return inter / union


def random_int_box(rng, lo=0, hi=200):
    x0, x1 = sorted(rng.integers(lo, hi, 2).tolist())
    y0, y1 = sorted(rng.integers(lo, hi, 2).tolist())
    return geo.Box(x0, y0, x1 + 1, y1 + 1)


class TestTypes:
    def test_box_rejects_zero_area(self):
        with pytest.raises(InvalidGeometryError):
            geo.Box(0, 0, 0, 10)

    def test_box_rejects_nonfinite(self):
        with pytest.raises(InvalidGeometryError):
            geo.Box(0, 0, math.inf, 10)

    def test_point_rejects_negative(self):
        with pytest.raises(InvalidGeometryError):
            geo.Point(-1, 5)

    def test_distances_reject_negative(self):
        with pytest.raises(InvalidGeometryError):
            geo.EdgeDistances(1, -2, 3, 4)

    def test_anchor_config_count(self):
        assert geo.AnchorConfig().count == 12

    def test_box_json_round_trip(self):
        b = geo.Box(1.5, 2.5, 3.5, 4.5)
        assert geo.Box.from_list(b.to_list()) == b


class TestPointDistanceConversion:
    def test_direct_substitution(self):
        b = geo.box_from_point_distances(geo.Point(50, 50), geo.EdgeDistances(10, 20, 30, 40))
        assert b == geo.Box(40, 30, 80, 90)

    def test_symmetric_case(self):
        b = geo.box_from_point_distances(geo.Point(50, 50), geo.EdgeDistances(10, 10, 10, 10))
        assert b == geo.Box(40, 40, 60, 60)

    def test_zero_area_degenerate(self):
        with pytest.raises(InvalidGeometryError):
            geo.box_from_point_distances(geo.Point(5, 5), geo.EdgeDistances(0, 0, 0, 0))

    def test_inverse(self):
        d = geo.distances_from_box(geo.Point(50, 50), geo.Box(40, 30, 80, 90))
        assert d == geo.EdgeDistances(10, 20, 30, 40)

    def test_center_symmetry(self):
        d = geo.distances_from_box(geo.Point(5, 5), geo.Box(0, 0, 10, 10))
        assert d == geo.EdgeDistances(5, 5, 5, 5)

    def test_boundary_point_rejected(self):
        with pytest.raises(PointOutsideBoxError):
            geo.distances_from_box(geo.Point(0, 5), geo.Box(0, 0, 10, 10))

    @given(
        px=st.floats(1, 99),
        py=st.floats(1, 99),
        l=st.floats(0.5, 50),
        t=st.floats(0.5, 50),
        r=st.floats(0.5, 50),
        b=st.floats(0.5, 50),
    )
    def test_round_trip_exact(self, px, py, l, t, r, b):
        p = geo.Point(px + 60, py + 60)
        d = geo.EdgeDistances(l, t, r, b)
        box = geo.box_from_point_distances(p, d)
        back = geo.distances_from_box(p, box)
        # float subtraction of the same terms: exact round trip
        assert back == geo.EdgeDistances(
            (p.x - box.x0), (p.y - box.y0), (box.x1 - p.x), (box.y1 - p.y)
        )
        assert math.isclose(back.l, d.l, abs_tol=1e-9)
        assert math.isclose(back.t, d.t, abs_tol=1e-9)
        assert math.isclose(back.r, d.r, abs_tol=1e-9)
        assert math.isclose(back.b, d.b, abs_tol=1e-9)


class TestIoU:
    def test_identity(self):
        b = geo.Box(0, 0, 10, 10)
        assert geo.iou(b, b) == 1.0

    def test_disjoint(self):
        assert geo.iou(geo.Box(0, 0, 10, 10), geo.Box(20, 20, 30, 30)) == 0.0

    def test_hand_computed_third(self):
        assert geo.iou(geo.Box(0, 0, 10, 10), geo.Box(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_symmetry_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a, b = random_int_box(rng), random_int_box(rng)
            assert geo.iou(a, b) == geo.iou(b, a)
            assert 0.0 <= geo.iou(a, b) <= 1.0

    def test_matches_rasterized_oracle_exactly(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            a, b = random_int_box(rng), random_int_box(rng)
            assert geo.iou(a, b) == raster_iou(a, b)

    def test_iou_matrix_agrees_with_scalar(self):
        rng = np.random.default_rng(3)
        boxes_a = [random_int_box(rng) for _ in range(8)]
        boxes_b = [random_int_box(rng) for _ in range(5)]
        mat = geo.iou_matrix(
            np.stack([b.as_array() for b in boxes_a]),
            np.stack([b.as_array() for b in boxes_b]),
        )
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                assert mat[i, j] == pytest.approx(geo.iou(a, b), abs=1e-12)


class TestPrototypes:
    def test_square_anchor(self):
        cfg = geo.AnchorConfig(scales=(64.0**2,), ratios=(1.0,))
        [b] = geo.generate_prototypes(geo.Point(100, 100), cfg, (400, 400))
        assert b == geo.Box(68, 68, 132, 132)

    def test_wide_anchor(self):
        cfg = geo.AnchorConfig(scales=(64.0**2,), ratios=(2.0,))
        [b] = geo.generate_prototypes(geo.Point(100, 100), cfg, (400, 400))
        assert b.x0 == pytest.approx(54.75, abs=0.01)
        assert b.y0 == pytest.approx(77.37, abs=0.01)
        assert b.x1 == pytest.approx(145.25, abs=0.01)
        assert b.y1 == pytest.approx(122.63, abs=0.01)

    def test_clipping_against_interval_oracle(self):
        cfg = geo.AnchorConfig(scales=(256.0**2,), ratios=(1.0,))
        [b] = geo.generate_prototypes(geo.Point(10, 10), cfg, (200, 200))
        # interval-clamp oracle: raw box (-118, -118, 138, 138) intersected
        # with [0, 200] per axis
        assert b == geo.Box(
            max(0, 10 - 128), max(0, 10 - 128), min(200, 10 + 128), min(200, 10 + 128)
        )
        assert b == geo.Box(0, 0, 138, 138)

    def test_default_config_yields_twelve(self):
        boxes = geo.generate_prototypes(geo.Point(128, 128), geo.AnchorConfig(), (256, 256))
        assert len(boxes) == 12

    def test_order_is_scales_major(self):
        cfg = geo.AnchorConfig(scales=(32.0**2, 64.0**2), ratios=(2.0, 1.0))
        boxes = geo.generate_prototypes(geo.Point(200, 200), cfg, (400, 400))
        areas = [b.area for b in boxes]
        assert areas == pytest.approx([1024, 1024, 4096, 4096])
        assert boxes[0].width > boxes[1].width  # ratio 2:1 before 1:1


class TestDeltas:
    def test_direct_substitution(self):
        d = geo.encode_delta(geo.Box(40, 40, 60, 60), geo.Box(45, 40, 65, 64))
        assert d.dx == pytest.approx(0.25)
        assert d.dy == pytest.approx(0.10)
        assert d.dw == pytest.approx(0.0)
        assert d.dh == pytest.approx(math.log(1.2))

    def test_zero_delta_is_identity(self):
        anchor = geo.Box(13.5, 7.25, 99.5, 42.0)
        out = geo.apply_delta(anchor, geo.BoxDelta(0, 0, 0, 0))
        assert out.x0 == pytest.approx(anchor.x0, abs=1e-12)
        assert out.y0 == pytest.approx(anchor.y0, abs=1e-12)
        assert out.x1 == pytest.approx(anchor.x1, abs=1e-12)
        assert out.y1 == pytest.approx(anchor.y1, abs=1e-12)

    def test_round_trip_1000_random_pairs(self):
        # side ratios stay below e**DELTA_CLAMP so the clamp never bites
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(1000):
            anchor = self._sized_box(rng)
            target = self._sized_box(rng)
            back = geo.apply_delta(anchor, geo.encode_delta(anchor, target))
            err = max(
                abs(back.x0 - target.x0),
                abs(back.y0 - target.y0),
                abs(back.x1 - target.x1),
                abs(back.y1 - target.y1),
            )
            worst = max(worst, err)
        assert worst < 1e-6

    @staticmethod
    def _sized_box(rng):
        x0 = float(rng.uniform(0, 200))
        y0 = float(rng.uniform(0, 200))
        return geo.Box(x0, y0, x0 + rng.uniform(8, 300), y0 + rng.uniform(8, 300))

    def test_clamp_applies_before_exponentiation(self):
        anchor = geo.Box(0, 0, 10, 10)
        big = geo.apply_delta(anchor, geo.BoxDelta(0, 0, 50.0, -50.0))
        assert big.width == pytest.approx(10 * math.e**geo.DELTA_CLAMP)
        assert big.height == pytest.approx(10 * math.e**-geo.DELTA_CLAMP)

    def test_encode_deltas_array_matches_scalar(self):
        rng = np.random.default_rng(4)
        anchors = [random_int_box(rng) for _ in range(6)]
        target = random_int_box(rng)
        arr = geo.encode_deltas(np.stack([a.as_array() for a in anchors]), target)
        for i, a in enumerate(anchors):
            d = geo.encode_delta(a, target)
            assert arr[i] == pytest.approx([d.dx, d.dy, d.dw, d.dh], abs=1e-12)


class TestSampleClick:
    def test_membership(self):
        gt = geo.Box(0, 0, 100, 60)
        rng = np.random.default_rng(123)
        for _ in range(2000):
            p = geo.sample_click(gt, rng)
            assert ((p.x - 50) / 25) ** 2 + ((p.y - 30) / 15) ** 2 <= 1.0 + 1e-12
            assert gt.contains(p)

    def test_monte_carlo_mean(self):
        gt = geo.Box(0, 0, 100, 60)
        rng = np.random.default_rng(5)
        pts = np.array([(c.x, c.y) for c in (geo.sample_click(gt, rng) for _ in range(100_000))])
        assert abs(pts[:, 0].mean() - 50) < 0.5
        assert abs(pts[:, 1].mean() - 30) < 0.5

    def test_tiny_box_stays_near_center(self):
        gt = geo.Box(10, 10, 12, 12)
        rng = np.random.default_rng(9)
        for _ in range(200):
            p = geo.sample_click(gt, rng)
            assert abs(p.x - 11) <= 0.5 and abs(p.y - 11) <= 0.5


class TestPerturbBox:
    def test_rate_zero_identity(self):
        gt = geo.Box(3, 4, 50, 60)
        rng = np.random.default_rng(0)
        assert geo.perturb_box(gt, 0.0, rng) == gt

    def test_bound_property(self):
        gt = geo.Box(0, 0, 100, 100)
        rng = np.random.default_rng(2)
        for _ in range(500):
            b = geo.perturb_box(gt, 0.2, rng)
            assert abs(b.x0 - 0) <= 20 and abs(b.x1 - 100) <= 20
            assert abs(b.y0 - 0) <= 20 and abs(b.y1 - 100) <= 20

    def test_mean_iou_decreasing_in_rate(self):
        gt = geo.Box(20, 20, 120, 100)
        means = []
        for rate in (0.1, 0.2, 0.3):
            rng = np.random.default_rng(42)
            vals = [geo.iou(gt, geo.perturb_box(gt, rate, rng)) for _ in range(10_000)]
            means.append(float(np.mean(vals)))
        assert means[0] > means[1] > means[2]

    def test_rate_out_of_range(self):
        with pytest.raises(InputError):
            geo.perturb_box(geo.Box(0, 0, 10, 10), 0.6, np.random.default_rng(0))
