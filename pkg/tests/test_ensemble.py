import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drln.ensemble import N_TRANSFORMS, dihedral, inverse_dihedral, self_ensemble
from drln.imageio import quantize


def nearest(scale):
    def model(img):
        return np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    return model


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), k=st.integers(0, 7), seed=st.integers(0, 100))
def test_inverse_undoes_transform(h, w, k, seed):
    a = np.random.default_rng(seed).uniform(size=(h, w, 3))
    np.testing.assert_array_equal(inverse_dihedral(dihedral(a, k), k), a)


def test_eight_distinct_elements():
    a = np.arange(9.0).reshape(3, 3)
    images = {dihedral(a, k).tobytes() for k in range(N_TRANSFORMS)}
    assert len(images) == 8
    np.testing.assert_array_equal(dihedral(a, 0), a)
    np.testing.assert_array_equal(dihedral(a, 4), a.T)


def test_transform_id_range():
    with pytest.raises(ValueError):
        dihedral(np.zeros((2, 2)), 8)
    with pytest.raises(ValueError):
        inverse_dihedral(np.zeros((2, 2)), -1)


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_equivariant_stub_matches_single_pass(scale):
    img = quantize(np.random.default_rng(scale).uniform(size=(7, 5, 3)))
    model = nearest(scale)
    single = model(img)
    ens = self_ensemble(model, img)
    assert ens.shape == (7 * scale, 5 * scale, 3)
    np.testing.assert_array_equal(ens, single)


def test_ensemble_averages_before_quantizing():
    img = np.zeros((2, 2, 1))
    img[0, 0] = 1.0
    calls = []

    def biased(x):
        # adds 0.4/255 only when the bright pixel lands at the top-left
        calls.append(x.copy())
        return x + (0.4 / 255 if x[0, 0, 0] == 1.0 else 0.0)

    out = self_ensemble(biased, img)
    assert len(calls) == 8
    # two of eight transforms keep (0, 0) fixed, so the mean offset is 0.1/255 there
    assert out[0, 0, 0] == pytest.approx(1.0 + 0.1 / 255)
