import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import nearest_exhaustive
from s4sits import (
    Modality,
    ModalitySeries,
    SitsPair,
    cloud_cover_ratio,
    fit_normalization,
    nearest_timestamp_align,
    normalize,
)
from s4sits.errors import ChannelMismatch, EmptyDataset, EmptySeries, ShapeMismatch


def series(ts, modality=Modality.RADAR, C=None, H=2, W=2, fill=None):
    C = C or modality.default_channels
    T = len(ts)
    data = np.arange(T * C * H * W, dtype=np.float32).reshape(T, C, H, W) if fill is None else \
        np.full((T, C, H, W), fill, dtype=np.float32)
    return ModalitySeries(data, ts, modality)


class TestAlignment:
    def test_radar_anchor_example(self):
        al = nearest_timestamp_align(series([0, 10, 20]), series([1, 9, 12, 21], Modality.OPTICAL))
        assert al.anchor_modality is Modality.RADAR
        assert al.T == 3
        assert [j for _, j in al.pairing] == [0, 1, 3]

    def test_identity(self):
        r, o = series([5]), series([5], Modality.OPTICAL)
        al = nearest_timestamp_align(r, o)
        assert al.pairing == [(0, 0)]
        assert al.radar.equals(r) and al.optical.equals(o)

    def test_tie_goes_to_earlier_frame(self):
        al = nearest_timestamp_align(series([0, 10]), series([5, 15, 25], Modality.OPTICAL))
        assert al.pairing == [(0, 0), (1, 0)]

    def test_shorter_series_unchanged_and_longer_gathered(self):
        r = series([0, 3, 6, 9, 12])
        o = series([4, 11], Modality.OPTICAL)
        al = nearest_timestamp_align(r, o)
        assert al.anchor_modality is Modality.OPTICAL
        assert al.optical.equals(o)
        np.testing.assert_array_equal(al.radar.data, r.data[[1, 4]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nearest_timestamp_align(series([0], H=2), series([0], Modality.OPTICAL, H=3))

    def test_empty_series_rejected(self):
        with pytest.raises(EmptySeries):
            ModalitySeries(np.zeros((0, 2, 2, 2)), [], Modality.RADAR)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 200), min_size=1, max_size=30, unique=True),
           st.lists(st.integers(0, 200), min_size=1, max_size=30, unique=True))
    def test_optimality_and_length(self, a, b):
        r, o = series(sorted(a), H=1, W=1), series(sorted(b), Modality.OPTICAL, H=1, W=1)
        al = nearest_timestamp_align(r, o)
        assert al.radar.T == al.optical.T == min(len(a), len(b))
        if al.anchor_modality is Modality.RADAR:
            anchor, other = r.timestamps, o.timestamps
        else:
            anchor, other = o.timestamps, r.timestamps
        assert [j for _, j in al.pairing] == nearest_exhaustive(anchor, other)
        for i, j in al.pairing:
            d = abs(anchor[i] - other[j])
            assert all(abs(anchor[i] - s) >= d for s in other)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 500), min_size=1, max_size=20, unique=True))
    def test_idempotent_on_equal_timestamps(self, ts):
        ts = sorted(ts)
        al = nearest_timestamp_align(series(ts, H=1, W=1), series(ts, Modality.OPTICAL, H=1, W=1))
        again = nearest_timestamp_align(al.radar, al.optical)
        assert al.pairing == again.pairing == [(i, i) for i in range(len(ts))]


class TestCloudRatio:
    def test_clear(self):
        assert cloud_cover_ratio(np.zeros((2, 4, 4), bool)) == 0.0

    def test_full(self):
        assert cloud_cover_ratio(np.ones((2, 4, 4), bool)) == 1.0

    def test_quarter(self):
        m = np.zeros((2, 4, 4), bool)
        m.flat[[0, 3, 5, 9, 17, 20, 30, 31]] = True
        assert cloud_cover_ratio(m) == 0.25

    def test_empty(self):
        with pytest.raises(EmptySeries):
            cloud_cover_ratio(np.zeros((0, 4, 4), bool))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.uniform(size=(3, 5, 4)) < rng.uniform()
        shuffled = rng.permutation(m.ravel()).reshape(m.shape)
        assert cloud_cover_ratio(m) == cloud_cover_ratio(shuffled)


class TestNormalization:
    def test_constant_series(self):
        stats = fit_normalization([series([0, 1], fill=3.0)])
        np.testing.assert_allclose(stats.mean[Modality.RADAR], [3.0, 3.0])
        np.testing.assert_allclose(stats.std[Modality.RADAR], [1.0, 1.0])

    def test_two_pixel_channel(self):
        data = np.array([0.0, 2.0], dtype=np.float32).reshape(1, 1, 1, 2)
        stats = fit_normalization([ModalitySeries(data, [0], Modality.RADAR)])
        assert stats.mean[Modality.RADAR][0] == 1.0
        assert stats.std[Modality.RADAR][0] == 1.0

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            fit_normalization([])

    def test_mean_maps_to_zero_and_unit_step(self):
        s = series([0, 1, 2], C=2)
        stats = fit_normalization([s])
        at_mean = ModalitySeries(np.broadcast_to(stats.mean[Modality.RADAR][None, :, None, None],
                                                 s.data.shape).copy(), s.timestamps, Modality.RADAR)
        np.testing.assert_allclose(normalize(at_mean, stats).data, 0.0, atol=1e-6)
        one_up = ModalitySeries(at_mean.data + stats.std[Modality.RADAR][None, :, None, None],
                                s.timestamps, Modality.RADAR)
        np.testing.assert_allclose(normalize(one_up, stats).data, 1.0, atol=1e-5)

    def test_channel_mismatch(self):
        stats = fit_normalization([series([0], C=2)])
        with pytest.raises(ChannelMismatch):
            normalize(series([0], C=3), stats)

    def test_timestamps_unchanged(self):
        s = series([3, 7])
        out = normalize(s, fit_normalization([s]))
        np.testing.assert_array_equal(out.timestamps, s.timestamps)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_normalized_fit_set_is_standardized(self, seed):
        rng = np.random.default_rng(seed)
        samples = [
            ModalitySeries(rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3), size=(3, 2, 4, 4)),
                           [0, 1, 2], Modality.RADAR)
            for _ in range(int(rng.integers(1, 4)))
        ]
        stats = fit_normalization(samples)
        z = np.concatenate([normalize(s, stats).data.astype(np.float64).transpose(1, 0, 2, 3).reshape(2, -1)
                            for s in samples], axis=1)
        assert np.all(np.abs(z.mean(axis=1)) < 1e-5)
        assert np.all(np.abs(z.std(axis=1) - 1) < 1e-5)


class TestSitsPair:
    def test_spatial_alignment_enforced(self):
        with pytest.raises(ShapeMismatch):
            SitsPair("x", series([0], H=2), series([0], Modality.OPTICAL, H=3))

    def test_label_shape_enforced(self):
        with pytest.raises(ShapeMismatch):
            SitsPair("x", series([0]), series([0], Modality.OPTICAL), label=np.zeros((3, 3)))

    def test_cloud_mask_shape_enforced(self):
        with pytest.raises(ShapeMismatch):
            SitsPair("x", series([0]), series([0, 1], Modality.OPTICAL), cloud_mask=np.zeros((1, 2, 2)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ModalitySeries(np.full((1, 2, 2, 2), np.nan), [0], Modality.RADAR)

    def test_unsorted_timestamps_rejected(self):
        with pytest.raises(ValueError):
            series([5, 3])
