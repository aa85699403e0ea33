import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densehar import model as fcn
from densehar.errors import (
    BadMagicError,
    ModelFormatError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
)
from densehar.model import ArchConfig, build_fcn, forward


@pytest.fixture(scope="module")
def small_model():
    return build_fcn(ArchConfig(input_rows=4, class_count=3, filters=8), rng=0)


def test_opportunity_sized_shapes():
    m = build_fcn(ArchConfig(input_rows=113, class_count=5), rng=0)
    assert m.blocks[0].weights.shape == (32, 1, 3, 3)
    for block in m.blocks[1:]:
        assert block.weights.shape == (32, 32, 3, 3)
    assert len(m.blocks) == 6
    assert m.head.weights.shape == (5, 32, 113, 1)
    assert m.head.weights.size == 113 * 32 * 5


def test_minimal_config_parameter_arithmetic():
    cfg = ArchConfig(input_rows=1, class_count=2, block_count=1, conv_kernel=(1, 1))
    expected = 1 * 1 * 1 * 32 + 32 + 1 * 1 * 32 * 2 + 2  # 130
    assert fcn.parameter_count(cfg) == expected
    assert build_fcn(cfg, rng=0).parameter_count() == expected


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5), st.integers(1, 4), st.integers(1, 5),
       st.integers(1, 4), st.integers(1, 9))
def test_parameter_count_formula_matches_allocation(rows, classes, blocks, kh, kw, filters):
    cfg = ArchConfig(rows, classes, blocks, (kh, kw), filters)
    m = build_fcn(cfg, rng=1)
    assert m.parameter_count() == fcn.parameter_count(cfg)
    assert m.flat_parameters().size == fcn.parameter_count(cfg)


def test_same_seed_builds_identical_models():
    cfg = ArchConfig(input_rows=5, class_count=3)
    a, b = build_fcn(cfg, rng=42), build_fcn(cfg, rng=42)
    assert fcn.model_to_bytes(a) == fcn.model_to_bytes(b)
    assert fcn.model_to_bytes(a) != fcn.model_to_bytes(build_fcn(cfg, rng=43))


def test_he_init_statistics():
    m = build_fcn(ArchConfig(input_rows=4, class_count=3), rng=3)
    w = m.blocks[1].weights
    assert abs(w.std() - np.sqrt(2 / (32 * 9))) < 0.01
    assert not m.blocks[1].biases.any()
    with pytest.raises(ValueError):
        build_fcn(ArchConfig(input_rows=4, class_count=3), init="lecun")


def test_invalid_configs_rejected():
    for kwargs in ({"block_count": 0}, {"filters": 0}, {"class_count": 1}, {"input_rows": 0},
                   {"dropout_rate": 1.0}):
        base = {"input_rows": 3, "class_count": 2, **kwargs}
        with pytest.raises(ValueError):
            ArchConfig(**base)


def test_receptive_field_radius_default():
    assert fcn.receptive_field_radius(ArchConfig(4, 3)) == 18


def test_forward_output_shape_and_normalization():
    m = build_fcn(ArchConfig(input_rows=113, class_count=5), rng=0)
    x = np.random.default_rng(0).random((113, 100), dtype=np.float32)
    p = forward(m, x)
    assert p.shape == (5, 100)
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-6)
    assert np.all(p >= 0)


def test_single_step_input(small_model):
    p = forward(small_model, np.ones((4, 1), np.float32))
    assert p.shape == (3, 1)


def test_input_layouts_agree(small_model):
    x = np.random.default_rng(1).random((4, 20), dtype=np.float32)
    a = forward(small_model, x)
    np.testing.assert_array_equal(forward(small_model, x[None]), a)
    batch = forward(small_model, np.stack([x, x])[:, None])
    assert batch.shape == (2, 3, 20)
    np.testing.assert_allclose(batch[1], a, atol=1e-6)


def test_row_mismatch_is_structured_error(small_model):
    with pytest.raises(ShapeError) as exc:
        forward(small_model, np.zeros((5, 10), np.float32))
    assert exc.value.axis == "rows"


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 512))
def test_any_length_preserved(t):
    m = build_fcn(ArchConfig(input_rows=3, class_count=3, filters=4), rng=0)
    x = np.random.default_rng(t).random((3, t), dtype=np.float32)
    p = forward(m, x)
    assert p.shape == (3, t)
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-6)


def test_eval_forward_is_pure(small_model):
    x = np.random.default_rng(2).random((4, 37), dtype=np.float32)
    np.testing.assert_array_equal(forward(small_model, x), forward(small_model, x))


def test_train_mode_dropout_is_seeded(small_model):
    x = np.random.default_rng(3).random((4, 30), dtype=np.float32)
    a = forward(small_model, x, train=True, rng=np.random.default_rng(5))
    b = forward(small_model, x, train=True, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, forward(small_model, x))


def test_concatenation_seam_only_affects_radius(small_model):
    r = fcn.receptive_field_radius(small_model.config)
    rng = np.random.default_rng(4)
    a = rng.random((4, 70), dtype=np.float32)
    b = rng.random((4, 80), dtype=np.float32)
    joint = forward(small_model, np.concatenate([a, b], axis=1))
    pa, pb = forward(small_model, a), forward(small_model, b)
    np.testing.assert_allclose(joint[:, :70 - r], pa[:, :70 - r], atol=1e-5)
    np.testing.assert_allclose(joint[:, 70 + r:], pb[:, r:], atol=1e-5)
    # the radius is needed: right at the seam the outputs do differ
    assert not np.allclose(joint[:, 69], pa[:, 69], atol=1e-5)


@pytest.mark.parametrize("shift", [1, 7, 25])
def test_translation_covariance(small_model, shift):
    r = fcn.receptive_field_radius(small_model.config)
    x = np.random.default_rng(shift).random((4, 120), dtype=np.float32)
    full = forward(small_model, x)
    part = forward(small_model, x[:, shift:])
    t = part.shape[1]
    np.testing.assert_allclose(part[:, r:t - r], full[:, shift + r:shift + t - r], atol=1e-5)


def test_pass_counter(small_model):
    x = np.zeros((4, 10), np.float32)
    with fcn.count_forward_passes() as count:
        forward(small_model, x)
        forward(small_model, np.zeros((3, 1, 4, 10), np.float32))
    assert (count.calls, count.passes) == (2, 4)
    forward(small_model, x)
    assert count.calls == 2


# serialization

def test_roundtrip_is_bitwise(small_model, tmp_path):
    path = tmp_path / "m.dhfc"
    fcn.save_model(small_model, path)
    loaded = fcn.load_model(path)
    assert loaded.config == small_model.config
    x = np.random.default_rng(6).random((4, 64), dtype=np.float32)
    np.testing.assert_array_equal(forward(loaded, x), forward(small_model, x))
    assert fcn.model_to_bytes(loaded) == path.read_bytes()


def test_header_layout(small_model):
    data = fcn.model_to_bytes(small_model)
    assert data[:4] == b"DHFC"
    fields = struct.unpack_from("<I8I", data, 4)
    assert fields == (1, 4, 3, 6, 3, 3, 8, 4, 500_000)
    assert len(data) == 40 + 4 * small_model.parameter_count()
    first_weight = np.frombuffer(data, "<f4", count=1, offset=40)[0]
    assert first_weight == small_model.blocks[0].weights[0, 0, 0, 0]


@pytest.mark.parametrize("cut", [0, 2, 4, 20, 39, 40, 41, -1])
def test_truncated_file(small_model, cut):
    data = fcn.model_to_bytes(small_model)
    with pytest.raises(TruncatedFileError):
        fcn.model_from_bytes(data[:cut] if cut >= 0 else data[:-1])


def test_bad_magic(small_model):
    data = bytearray(fcn.model_to_bytes(small_model))
    data[:4] = b"NOPE"
    with pytest.raises(BadMagicError):
        fcn.model_from_bytes(bytes(data))


def test_version_mismatch(small_model):
    data = bytearray(fcn.model_to_bytes(small_model))
    struct.pack_into("<I", data, 4, 2)
    with pytest.raises(VersionMismatchError):
        fcn.model_from_bytes(bytes(data))


def test_trailing_bytes_and_bad_header(small_model):
    data = fcn.model_to_bytes(small_model)
    with pytest.raises(ModelFormatError):
        fcn.model_from_bytes(data + b"\0")
    broken = bytearray(data)
    struct.pack_into("<I", broken, 12, 1)  # class count 1 is not a valid architecture
    with pytest.raises(ModelFormatError):
        fcn.model_from_bytes(bytes(broken))
