import json
import math

import numpy as np
import pytest

from zoomdet.errors import AnnotationError
from zoomdet.histogram import (
    HistogramSpec,
    ImageAnnotation,
    LandmarkBoxOffsets,
    Landmarks5,
    ScaleHistogram,
    box_from_landmarks,
    gaussian_label,
    gt_histogram,
    merge_max,
    read_annotations,
    write_annotations,
    write_histogram_csv,
)

SPEC60 = HistogramSpec(3.0, 9.0, 60)
SPEC40 = HistogramSpec(3.0, 7.0, 40)


class TestBinGrid:
    def test_first_bin_edges(self):
        assert SPEC60.bin_edges(1) == pytest.approx((3.0, 3.1), abs=1e-12)

    def test_last_bin_touches_right_edge(self):
        assert SPEC60.bin_edges(60) == pytest.approx((8.9, 9.0), abs=1e-12)

    def test_single_bin_spans_range(self):
        assert HistogramSpec(0.0, 1.0, 1).bin_edges(1) == (0.0, 1.0)

    def test_bin_centers(self):
        assert SPEC60.bin_center(1) == pytest.approx(3.05, abs=1e-12)
        assert SPEC60.bin_center(31) == pytest.approx(6.05, abs=1e-12)
        assert SPEC40.bin_center(40) == pytest.approx(6.95, abs=1e-12)

    def test_out_of_range_index_rejected(self):
        for i in (0, 61, -1):
            with pytest.raises(ValueError):
                SPEC60.bin_edges(i)

    def test_edges_partition_range_without_gaps(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            s0 = rng.uniform(-4, 8)
            sn = s0 + rng.uniform(0.5, 8)
            n = int(rng.integers(1, 120))
            spec = HistogramSpec(s0, sn, n)
            prev_right = s0
            for i in range(1, n + 1):
                left, right = spec.bin_edges(i)
                assert left == pytest.approx(prev_right, abs=1e-12)
                assert right - left == pytest.approx(spec.d, abs=1e-12)
                prev_right = right
            assert prev_right == pytest.approx(sn, abs=1e-9)

    def test_centers_vector_matches_scalar(self):
        c = SPEC40.centers()
        for i in range(1, 41):
            assert c[i - 1] == pytest.approx(SPEC40.bin_center(i), abs=1e-12)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            HistogramSpec(5.0, 5.0, 10)
        with pytest.raises(ValueError):
            HistogramSpec(3.0, 9.0, 0)


class TestBoxFromLandmarks:
    def test_worked_example(self):
        lm = Landmarks5(points=((-5, 0), (5, 0), (0, 5), (-3, 10), (3, 10)))
        box = box_from_landmarks(lm, LandmarkBoxOffsets(0, 0, 2.0))
        assert box.cx == pytest.approx(0.0)
        assert box.cy == pytest.approx(5.0)
        # population std of (0,0,5,10,10) is sqrt(20)
        assert box.side == pytest.approx(2.0 * math.sqrt(20.0), abs=1e-12)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(11)
        off = LandmarkBoxOffsets(0.1, -0.2, 3.0)
        for _ in range(200):
            pts = rng.uniform(-30, 30, size=(5, 2))
            if np.std(pts[:, 1]) < 1e-6:
                continue
            tx, ty = rng.uniform(-100, 100, size=2)
            b0 = box_from_landmarks(Landmarks5(tuple(map(tuple, pts))), off)
            shifted = pts + np.array([tx, ty])
            b1 = box_from_landmarks(Landmarks5(tuple(map(tuple, shifted))), off)
            assert b1.cx == pytest.approx(b0.cx + tx, abs=1e-9)
            assert b1.cy == pytest.approx(b0.cy + ty, abs=1e-9)
            assert b1.side == pytest.approx(b0.side, abs=1e-9)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(13)
        off = LandmarkBoxOffsets(0, 0, 2.5)
        for _ in range(200):
            pts = rng.uniform(-20, 20, size=(5, 2))
            if np.std(pts[:, 1]) < 1e-6:
                continue
            b0 = box_from_landmarks(Landmarks5(tuple(map(tuple, pts))), off)
            b1 = box_from_landmarks(Landmarks5(tuple(map(tuple, pts * 2.0))), off)
            assert b1.side == pytest.approx(2.0 * b0.side, rel=1e-9)

    def test_degenerate_landmarks_rejected(self):
        lm = Landmarks5(points=((0, 4), (1, 4), (2, 4), (3, 4), (4, 4)))
        with pytest.raises(AnnotationError):
            box_from_landmarks(lm, LandmarkBoxOffsets(0, 0, 2.0))

    def test_wrong_point_count_rejected(self):
        with pytest.raises(ValueError):
            Landmarks5(points=((0, 0), (1, 1)))

    def test_nonpositive_os_rejected(self):
        with pytest.raises(ValueError):
            LandmarkBoxOffsets(0, 0, 0.0)


class TestGaussianLabel:
    def test_peak(self):
        assert gaussian_label(6.0, 6.0, 0.4) == 1.0

    def test_one_sigma_off(self):
        assert gaussian_label(math.log2(64), 6.4, 0.4) == pytest.approx(
            0.6065306597126334, abs=1e-12
        )

    def test_quarter_bin_off(self):
        assert gaussian_label(math.log2(64), 6.1, 0.4) == pytest.approx(
            0.9692332344763441, abs=1e-12
        )

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            gaussian_label(6.0, 6.0, 0.0)


class TestGtHistogram:
    def test_empty_face_list_all_zero(self):
        h = gt_histogram(SPEC60, [], 0.4)
        assert np.all(h.values == 0.0)

    def test_duplicate_face_idempotent(self):
        h1 = gt_histogram(SPEC60, [64.0], 0.4)
        h2 = gt_histogram(SPEC60, [64.0, 64.0], 0.4)
        np.testing.assert_array_equal(h1.values, h2.values)

    def test_single_face_value_at_nearest_center(self):
        h = gt_histogram(SPEC60, [64.0], 0.4)
        # center 6.05 is bin 31, distance 0.05 in log2
        assert h.values[30] == pytest.approx(0.9922179382602435, abs=1e-12)

    def test_matches_closed_form_on_random_triples(self):
        rng = np.random.default_rng(101)
        for _ in range(100):
            s0 = rng.uniform(-2, 6)
            sn = s0 + rng.uniform(1, 8)
            n = int(rng.integers(1, 100))
            spec = HistogramSpec(s0, sn, n)
            size = float(2.0 ** rng.uniform(s0 - 1, sn + 1))
            sigma = float(rng.uniform(0.1, 1.5))
            h = gt_histogram(spec, [size], sigma)
            for i in range(1, n + 1):
                c = spec.bin_center(i)
                expected = math.exp(-((c - math.log2(size)) ** 2) / (2 * sigma * sigma))
                assert abs(h.values[i - 1] - expected) < 1e-12

    def test_single_face_unimodal(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            size = float(2.0 ** rng.uniform(3, 9))
            h = gt_histogram(SPEC60, [size], 0.4).values
            peak = int(np.argmax(h))
            assert np.all(np.diff(h[: peak + 1]) >= 0)
            assert np.all(np.diff(h[peak:]) <= 0)

    def test_out_of_range_face_still_contributes(self):
        h = gt_histogram(SPEC60, [2.0 ** 10.5], 0.4)
        assert h.values[-1] > 0.0
        assert np.argmax(h.values) == 59

    def test_nonpositive_size_rejected(self):
        with pytest.raises(AnnotationError):
            gt_histogram(SPEC60, [0.0], 0.4)
        with pytest.raises(AnnotationError):
            gt_histogram(SPEC60, [-4.0], 0.4)


class TestMergeMax:
    def test_identity_element(self):
        h = gt_histogram(SPEC60, [32.0], 0.4)
        z = ScaleHistogram(SPEC60, np.zeros(60))
        np.testing.assert_array_equal(merge_max(h, z).values, h.values)

    def test_spec_mismatch_rejected(self):
        with pytest.raises(ValueError):
            merge_max(
                ScaleHistogram(SPEC60, np.zeros(60)),
                ScaleHistogram(SPEC40, np.zeros(40)),
            )

    def test_union_equals_merge(self):
        h16 = gt_histogram(SPEC60, [16.0], 0.4)
        h64 = gt_histogram(SPEC60, [64.0], 0.4)
        both = gt_histogram(SPEC60, [16.0, 64.0], 0.4)
        np.testing.assert_allclose(merge_max(h16, h64).values, both.values, atol=1e-15)

    def test_algebra_on_random_cases(self):
        rng = np.random.default_rng(42)
        spec = SPEC40
        for _ in range(1000):
            sizes_a = list(2.0 ** rng.uniform(2.5, 7.5, size=rng.integers(0, 4)))
            sizes_b = list(2.0 ** rng.uniform(2.5, 7.5, size=rng.integers(0, 4)))
            sizes_c = list(2.0 ** rng.uniform(2.5, 7.5, size=rng.integers(0, 4)))
            ha = gt_histogram(spec, sizes_a, 0.4)
            hb = gt_histogram(spec, sizes_b, 0.4)
            hc = gt_histogram(spec, sizes_c, 0.4)
            # commutative
            np.testing.assert_array_equal(
                merge_max(ha, hb).values, merge_max(hb, ha).values
            )
            # associative
            np.testing.assert_array_equal(
                merge_max(merge_max(ha, hb), hc).values,
                merge_max(ha, merge_max(hb, hc)).values,
            )
            # idempotent
            np.testing.assert_array_equal(merge_max(ha, ha).values, ha.values)
            # union of face lists equals merge of histograms
            np.testing.assert_allclose(
                gt_histogram(spec, sizes_a + sizes_b, 0.4).values,
                merge_max(ha, hb).values,
                atol=1e-15,
            )

    def test_values_stay_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            sizes = list(2.0 ** rng.uniform(1, 10, size=rng.integers(0, 6)))
            v = gt_histogram(SPEC60, sizes, 0.4).values
            assert v.min() >= 0.0 and v.max() <= 1.0


class TestAnnotationIO:
    def _records(self):
        lm1 = Landmarks5(points=((10.0, 20.0), (18.0, 20.0), (14.0, 24.0), (11.0, 28.0), (17.0, 28.0)))
        lm2 = Landmarks5(points=((50.5, 60.25), (58.5, 60.25), (54.5, 64.0), (51.5, 68.0), (57.5, 68.0)))
        return [
            ImageAnnotation("images/a.pgm", [lm1, lm2], [(0.0, 0.0, 8.0, 8.0)]),
            ImageAnnotation("images/b.pgm", [], []),
        ]

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        recs = self._records()
        write_annotations(path, recs)
        back = read_annotations(path)
        assert len(back) == 2
        assert back[0].image_path == "images/a.pgm"
        assert back[0].landmark_sets[0].points == recs[0].landmark_sets[0].points
        assert back[0].ignore_rects == [(0.0, 0.0, 8.0, 8.0)]
        assert back[1].landmark_sets == []

    def test_line_delimited_one_image_per_line(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        write_annotations(path, self._records())
        lines = [l for l in path.read_text().splitlines() if l.strip()]
        assert len(lines) == 2
        for line in lines:
            obj = json.loads(line)
            assert set(obj) == {"image", "landmarks", "ignore"}

    def test_bad_record_raises(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"image": "x.pgm", "landmarks": [[[0,0],[1,1]]]}\n')
        with pytest.raises(AnnotationError):
            read_annotations(path)

    def test_face_sizes_derive_from_landmarks(self):
        rec = self._records()[0]
        off = LandmarkBoxOffsets(0.0, 0.0, 2.0)
        sizes = rec.face_sizes(off)
        assert len(sizes) == 2
        assert sizes[0] == pytest.approx(
            box_from_landmarks(rec.landmark_sets[0], off).side
        )


class TestHistogramCsv:
    def test_columns_and_values(self, tmp_path):
        h = gt_histogram(SPEC40, [32.0], 0.4)
        path = tmp_path / "hist.csv"
        write_histogram_csv(path, h)
        lines = path.read_text().splitlines()
        assert lines[0] == "bin_index,left_edge_log2,right_edge_log2,value"
        assert len(lines) == 41
        first = lines[1].split(",")
        assert int(first[0]) == 1
        assert float(first[1]) == pytest.approx(3.0)
        assert float(first[2]) == pytest.approx(3.1)
        assert float(first[3]) == pytest.approx(h.values[0])
