import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icereg.errors import ContractError, EmptyInputError
from icereg.groundtruth import (LayerMask, ThicknessVector, extract_thickness,
                                max_layer_count, pixels_to_cm, validate_mask)
from icereg.rng import Rng

from oracles import thickness_naive


def random_mask(rng: Rng, max_h=32, max_w=32, max_label=27) -> np.ndarray:
    h = 1 + int(rng.uniform(1)[0] * (max_h - 1))
    w = 1 + int(rng.uniform(1)[0] * (max_w - 1))
    return (rng.uniform(h * w, 0, max_label + 1).astype(np.int64)).reshape(h, w)


def test_extract_basic_two_rows():
    labels = np.zeros((4, 6), dtype=np.int64)
    labels[0:2, :] = 1  # 12 pixels of label 1
    tv = extract_thickness(LayerMask(labels))
    assert tv.values[0] == 2.0
    assert np.all(tv.values[1:] == 0.0)


def test_extract_all_zero_mask():
    tv = extract_thickness(LayerMask(np.zeros((5, 5), dtype=np.int64)))
    assert np.all(tv.values == 0.0)


def test_extract_matches_counting_oracle_200_random_masks():
    rng = Rng(77)
    for _ in range(200):
        labels = random_mask(rng)
        got = extract_thickness(LayerMask(labels)).values
        want = thickness_naive(labels)
        assert np.array_equal(got, want)


def test_extract_column_permutation_invariance():
    rng = Rng(78)
    for _ in range(20):
        labels = random_mask(rng)
        perm = rng.permutation(labels.shape[1])
        a = extract_thickness(LayerMask(labels)).values
        b = extract_thickness(LayerMask(labels[:, perm])).values
        assert np.array_equal(a, b)


def test_extract_horizontal_self_concat_invariance():
    rng = Rng(79)
    for _ in range(20):
        labels = random_mask(rng)
        a = extract_thickness(LayerMask(labels)).values
        b = extract_thickness(LayerMask(np.hstack([labels, labels]))).values
        assert np.array_equal(a, b)


@given(st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=8),
       st.integers(min_value=1, max_value=12))
@settings(max_examples=60, deadline=None)
def test_constant_thickness_layers_recovered_exactly(thicknesses, width):
    """Layers spanning every column with constant thickness c_i extract to c_i."""
    rows = []
    for i, c in enumerate(thicknesses, start=1):
        rows.extend([i] * c)
    rows.extend([0] * 2)
    labels = np.tile(np.array(rows, dtype=np.int64)[:, None], (1, width))
    tv = extract_thickness(LayerMask(labels))
    for i, c in enumerate(thicknesses):
        assert tv.values[i] == float(c)
    assert np.all(tv.values >= 0) and np.all(np.isfinite(tv.values))


def test_max_layer_count():
    m1 = LayerMask(np.array([[0, 1], [3, 0]]))
    assert max_layer_count([m1]) == 3
    zeros = LayerMask(np.zeros((2, 2), dtype=np.int64))
    assert max_layer_count([zeros, zeros]) == 0
    with pytest.raises(EmptyInputError):
        max_layer_count([])


def test_max_layer_count_matches_scan_oracle():
    rng = Rng(80)
    masks = [LayerMask(random_mask(rng)) for _ in range(30)]
    want = 0
    for m in masks:
        for row in m.labels:
            for v in row:
                want = max(want, int(v))
    assert max_layer_count(masks) == want


def test_pixels_to_cm_reference_values():
    assert pixels_to_cm(1.251, 4.0) == pytest.approx(5.004)
    assert pixels_to_cm(0.595, 4.0) == pytest.approx(2.38)
    # both sit inside the 2-5 cm error band typical of snow-radar targets
    assert 2.0 <= pixels_to_cm(0.595, 4.0) <= pixels_to_cm(1.251, 4.0) <= 5.004
    assert pixels_to_cm(0.0, 4.0) == 0.0


def test_pixels_to_cm_contract():
    with pytest.raises(ContractError):
        pixels_to_cm(-1.0, 4.0)
    with pytest.raises(ContractError):
        pixels_to_cm(1.0, 0.0)


def test_validate_clean_mask_no_warnings():
    labels = np.zeros((10, 8), dtype=np.int64)
    for i in range(1, 6):
        labels[i, :] = i
    assert validate_mask(LayerMask(labels)) == []


def test_validate_non_contiguous_names_missing_label():
    labels = np.zeros((4, 4), dtype=np.int64)
    labels[0, :] = 1
    labels[2, :] = 3
    warnings = validate_mask(LayerMask(labels))
    assert any("label 2" in w for w in warnings)


def test_validate_sparse_layer():
    labels = np.zeros((4, 100), dtype=np.int64)
    labels[0, 0] = 1  # present in 1 of 100 columns
    warnings = validate_mask(LayerMask(labels))
    assert any("sparse" in w and "99" in w for w in warnings)


def test_validate_label_above_27():
    labels = np.zeros((2, 2), dtype=np.int64)
    labels[0, 0] = 30
    warnings = validate_mask(LayerMask(labels))
    assert any("30" in w for w in warnings)


def test_thickness_vector_invariants():
    with pytest.raises(ContractError):
        ThicknessVector(np.full(27, -1.0))
