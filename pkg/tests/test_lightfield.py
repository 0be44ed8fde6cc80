import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfrr.errors import ChannelMismatch, DimensionMismatch, IndexOutOfRange, ValueOutOfRange
from lfrr.lightfield import (
    DIHEDRAL,
    IDENTITY,
    LightField,
    LfTransform,
    apply_transform,
    crop_patch,
    extract_epi,
    flat_index,
    lf_new,
    microlens_image,
    rgb_to_luma,
    subaperture_view,
    unflatten,
)
from lfrr.verify import planar_error, planar_lf

dims_st = st.tuples(*(st.integers(1, 4) for _ in range(5)))


def test_single_pixel():
    lf = lf_new(1, 1, 1, 1, 1, [0.5])
    assert lf.shape == (1, 1, 1, 1, 1)
    assert lf.data[0, 0, 0, 0, 0] == 0.5


def test_layout_position_matches_numpy_oracle():
    shape = (2, 2, 3, 3, 3)
    values = np.arange(108) / 107.0
    lf = lf_new(*shape, values)
    oracle = np.arange(108).reshape(shape)[1, 0, 2, 1, 0]
    assert flat_index(shape, 1, 0, 2, 1, 0) == oracle == 1 * 54 + 0 * 27 + 2 * 9 + 1 * 3 + 0
    assert lf.data[1, 0, 2, 1, 0] == values[oracle]


def test_wrong_length_rejected():
    with pytest.raises(DimensionMismatch):
        lf_new(2, 2, 3, 3, 3, np.zeros(107))


@pytest.mark.parametrize("bad", [-0.01, 1.01, np.nan, np.inf])
def test_out_of_range_values_rejected(bad):
    data = np.full(8, 0.5)
    data[3] = bad
    with pytest.raises(ValueOutOfRange):
        lf_new(1, 2, 2, 2, 1, data)


def test_signed_allows_negative_and_is_immutable():
    lf = LightField(-np.ones((1, 1, 2, 2, 3)), signed=True)
    with pytest.raises(ValueError):
        lf.data[0, 0, 0, 0, 0] = 1.0


def test_clamped_constructor():
    lf = LightField.clamped(np.array([-1.0, 0.5, 2.0]).reshape(1, 1, 1, 3, 1))
    assert lf.data.ravel().tolist() == [0.0, 0.5, 1.0]


@settings(max_examples=50, deadline=None)
@given(dims_st, st.data())
def test_flat_index_roundtrip(shape, data):
    i = data.draw(st.integers(0, int(np.prod(shape)) - 1))
    assert flat_index(shape, *unflatten(shape, i)) == i
    assert np.ravel_multi_index(unflatten(shape, i), shape) == i


def test_views_and_microlens(rng):
    lf = LightField(rng.random((2, 3, 4, 5, 3)))
    assert np.array_equal(subaperture_view(lf, 1, 2), lf.data[1, 2])
    assert microlens_image(lf, 3, 4).shape == (2, 3, 3)
    with pytest.raises(IndexOutOfRange):
        subaperture_view(lf, 2, 0)
    with pytest.raises(IndexOutOfRange):
        microlens_image(lf, 4, 0)
    single = LightField(rng.random((1, 1, 4, 5, 3)))
    assert np.array_equal(subaperture_view(single, 0, 0), single.data[0, 0])
    const = LightField(np.full((3, 3, 4, 4, 3), 0.25))
    views = [subaperture_view(const, u, v) for u in range(3) for v in range(3)]
    assert all(np.array_equal(views[0], w) for w in views)


def test_epi_of_shifted_ramp():
    U, X, d = 5, 20, 2
    ramp = np.linspace(0, 1, 40)
    data = np.zeros((U, 2, X, 3, 1))
    for u in range(U):
        data[u, :, :, :, 0] = ramp[10 + d * u : 10 + d * u + X][None, :, None]
    epi = extract_epi(LightField(data), "horizontal", 1, 2)
    assert epi.plane.shape == (U, X, 1)
    for u in range(1, U):
        # row u is row 0 shifted by d*u samples
        assert np.allclose(epi.plane[u, : X - d * u], epi.plane[0, d * u :])


def test_epi_shapes_and_bounds():
    lf = LightField(np.full((7, 7, 96, 8, 1), 0.3))
    h = extract_epi(lf, "horizontal", 0, 0)
    assert h.plane.shape == (7, 96, 1) and np.all(h.plane == 0.3)
    assert extract_epi(lf, "vertical", 6, 95).plane.shape == (7, 8, 1)
    with pytest.raises(IndexOutOfRange):
        extract_epi(lf, "horizontal", 7, 0)
    with pytest.raises(IndexOutOfRange):
        extract_epi(lf, "vertical", 0, 96)


@pytest.mark.parametrize("rgb,y", [((1, 1, 1), 1.0), ((0, 0, 0), 0.0), ((1, 0, 0), 0.299),
                                   ((0, 1, 0), 0.587), ((0, 0, 1), 0.114)])
def test_luma_weights(rgb, y):
    lf = LightField(np.array(rgb, dtype=float).reshape(1, 1, 1, 1, 3))
    assert rgb_to_luma(lf).data.item() == pytest.approx(y, abs=1e-15)


def test_luma_needs_rgb(rng):
    with pytest.raises(ChannelMismatch):
        rgb_to_luma(LightField(rng.random((1, 1, 2, 2, 2))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_luma_stays_in_unit_range(seed):
    arr = np.random.default_rng(seed).random((2, 2, 3, 3, 3))
    arr[0, 0, 0, 0] = 1.0
    out = rgb_to_luma(LightField(arr)).data
    assert out.min() >= 0 and out.max() <= 1


def test_dihedral_group_closed_with_inverses():
    assert len(set(DIHEDRAL)) == 8
    for a in DIHEDRAL:
        assert a.then(a.inverse()) == IDENTITY
        for b in DIHEDRAL:
            assert a.then(b) in DIHEDRAL
    # flip_y is a flip_x followed by a half turn
    assert LfTransform(flip_y=True).then(IDENTITY) == LfTransform(True, False, 2)


def test_transform_composition_matches_sequential_application(rng):
    lf = LightField(rng.random((3, 3, 5, 5, 2)))
    for a in DIHEDRAL:
        for b in DIHEDRAL:
            seq = apply_transform(apply_transform(lf, a), b)
            assert seq == apply_transform(lf, a.then(b))


def test_transform_basics(rng):
    lf = LightField(rng.random((3, 2, 4, 5, 3)))
    assert apply_transform(lf, IDENTITY) == lf
    fx = LfTransform(flip_x=True)
    assert apply_transform(apply_transform(lf, fx), fx) == lf
    for t in DIHEDRAL:
        out = apply_transform(lf, t)
        assert np.array_equal(np.sort(out.data, axis=None), np.sort(lf.data, axis=None))
    rot = apply_transform(lf, LfTransform(rotate90=1))
    assert rot.shape == (2, 3, 5, 4, 3)


def test_flip_x_reverses_horizontal_epi(rng):
    lf = LightField(rng.random((3, 3, 6, 6, 1)))
    flipped = apply_transform(lf, LfTransform(flip_x=True))
    a = extract_epi(lf, "horizontal", 1, 2).plane
    b = extract_epi(flipped, "horizontal", 1, 2).plane
    assert np.array_equal(b, a[::-1, ::-1])


@pytest.mark.parametrize("t", DIHEDRAL)
@pytest.mark.parametrize("d,du,dv", [(1.0, 1, 1), (-1.0, 2, -1), (0.5, 2, 2)])
def test_transformed_planar_lf_stays_planar(t, d, du, dv):
    lf = apply_transform(planar_lf(d, dims=(5, 5, 20, 20)), t)
    err, n = planar_error(lf.data, d, du, dv)
    assert n > 0 and err <= 1e-5


def test_crop(rng):
    lf = LightField(rng.random((2, 2, 10, 12, 3)))
    assert crop_patch(lf, 0, 0, 10, 12) == lf
    c = crop_patch(lf, 2, 3, 4, 5)
    assert c.shape == (2, 2, 4, 5, 3)
    assert np.array_equal(c.data, lf.data[:, :, 2:6, 3:8])
    with pytest.raises(IndexOutOfRange):
        crop_patch(lf, 8, 0, 3, 3)


def test_paper_scale_crop_shape():
    lf = LightField(np.zeros((2, 2, 400, 600, 1)), copy=False)
    assert crop_patch(lf, 100, 200, 96, 96).shape == (2, 2, 96, 96, 1)
