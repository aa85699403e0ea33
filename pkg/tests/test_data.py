import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densehar import data as dt
from densehar.data import LabeledSequence, SynthSpec
from densehar.errors import DataError


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_small_file(tmp_path):
    s = dt.load_csv(write(tmp_path, "a,b,label\n1,2,0\n3,4,1\n5,6,1\n"))
    assert s.channels == 2 and len(s) == 3
    np.testing.assert_array_equal(s.features, [[1, 3, 5], [2, 4, 6]])
    np.testing.assert_array_equal(s.labels, [0, 1, 1])
    assert s.channel_names == ["a", "b"]


def test_header_autodetect_and_delimiter(tmp_path):
    s = dt.load_csv(write(tmp_path, "1;2;0\n3;4;2\n"), delimiter=";")
    assert s.channels == 2 and s.channel_names is None
    s = dt.load_csv(write(tmp_path, "1,9,2,0\n3,9,4,2\n"), feature_columns=[0, 2])
    np.testing.assert_array_equal(s.features, [[1, 3], [2, 4]])


@pytest.mark.parametrize("text,row,column", [
    ("a,b,label\n1,2,0\n3,4\n", 1, None),
    ("a,b,label\n1,2,0\n3,x,1\n", 1, 1),
    ("a,b,label\n1,2,0\n3,,1\n", 1, 1),
    ("a,b,label\n1,2,0.5\n", 0, 2),
    ("a,b,label\n1,2,-1\n", 0, 2),
    ("a,b,label\n1,inf,1\n", 0, 1),
])
def test_malformed_rows_are_located(tmp_path, text, row, column):
    with pytest.raises(DataError) as exc:
        dt.load_csv(write(tmp_path, text))
    assert exc.value.row == row
    if column is not None:
        assert exc.value.column == column
    assert f"row {row}" in str(exc.value)


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(DataError, match="not found"):
        dt.load_csv(tmp_path / "nope.csv")
    with pytest.raises(DataError):
        dt.load_csv(write(tmp_path, "a,b,label\n"))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_csv_roundtrip(tmp_path_factory, rows, length, seed):
    rng = np.random.default_rng(seed)
    seq = LabeledSequence((rng.standard_normal((rows, length)) * 10.0 ** rng.integers(-3, 4))
                          .astype(np.float32), rng.integers(0, 7, length))
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    dt.write_csv(seq, path)
    back = dt.load_csv(path)
    np.testing.assert_array_equal(back.features, seq.features)
    np.testing.assert_array_equal(back.labels, seq.labels)


def test_sequence_validation():
    with pytest.raises(DataError):
        LabeledSequence(np.zeros((2, 3)), np.zeros(4, int))
    with pytest.raises(DataError):
        LabeledSequence(np.array([[np.nan]]), np.zeros(1, int))


def test_schema_roundtrip(tmp_path):
    schema = dt.DatasetSchema(class_count=5, null_class=0, feature_columns=113)
    dt.write_schema(schema, tmp_path / "schema.txt")
    assert dt.read_schema(tmp_path / "schema.txt") == schema
    write(tmp_path, "classCount=3\nnullClass=none\n", "s2.txt")
    assert dt.read_schema(tmp_path / "s2.txt").null_class is None
    write(tmp_path, "nullClass=0\n", "s3.txt")
    with pytest.raises(DataError):
        dt.read_schema(tmp_path / "s3.txt")
    write(tmp_path, "classCount=3\ncolour=blue\n", "s4.txt")
    with pytest.raises(DataError):
        dt.read_schema(tmp_path / "s4.txt")


# scaling

def channel(values):
    return LabeledSequence(np.array([values], dtype=np.float32), np.zeros(len(values), int))


def test_scaler_examples():
    params = dt.fit_scaler([channel([0, 10])])
    assert dt.apply_scaler(params, channel([5])).features[0, 0] == 0.5
    assert dt.apply_scaler(params, channel([12])).features[0, 0] == 1.0
    assert dt.apply_scaler(params, channel([-3])).features[0, 0] == 0.0
    flat = dt.fit_scaler([channel([4, 4, 4])])
    assert not dt.apply_scaler(flat, channel([1, 4, 9])).features.any()


def test_scaler_empty_training_set():
    with pytest.raises(DataError):
        dt.fit_scaler([])


def test_scaler_file_roundtrip(tmp_path):
    params = dt.fit_scaler([LabeledSequence(np.random.default_rng(0).standard_normal((4, 50)),
                                            np.zeros(50, int))])
    dt.write_scaler(params, tmp_path / "s.csv")
    back = dt.read_scaler(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.mins, params.mins)
    np.testing.assert_array_equal(back.maxs, params.maxs)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 40), st.floats(0.01, 1e4), st.integers(0, 2**31 - 1))
def test_scaler_range_and_endpoints(rows, length, scale, seed):
    rng = np.random.default_rng(seed)
    train = LabeledSequence(rng.standard_normal((rows, length)) * scale, np.zeros(length, int))
    test = LabeledSequence(rng.standard_normal((rows, length)) * scale * 3, np.zeros(length, int))
    params = dt.fit_scaler([train])
    assert np.all(params.maxs >= params.mins)
    out = dt.apply_scaler(params, test).features
    assert np.all((out >= 0) & (out <= 1))
    fitted = dt.apply_scaler(params, train).features
    for c in range(rows):
        if params.maxs[c] > params.mins[c]:
            assert fitted[c].min() == 0.0 and fitted[c].max() == 1.0


# splits

def test_split_volunteer_pattern():
    seqs = [channel([float(i)] * 10) for i in range(12)]
    splits = dt.split_by_fraction(seqs, (8 / 12, 3 / 12, 1 / 12))
    assert [len(s) for s in splits] == [8, 3, 1]
    assert [s.features[0, 0] for s in splits[0]] == list(range(8))


def test_split_identity_and_errors():
    seqs = [channel([1.0, 2.0]), channel([3.0])]
    assert dt.split_by_fraction(seqs, [1.0]) == [seqs]
    with pytest.raises(DataError):
        dt.split_by_fraction(seqs, (0.5, 0.3, 0.2))
    with pytest.raises(ValueError):
        dt.split_by_fraction(seqs, (0.5, 0.6))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=3, max_size=15),
       st.lists(st.floats(0.05, 1), min_size=1, max_size=3))
def test_split_partition(lengths, weights):
    seqs = [channel([float(i)] * n) for i, n in enumerate(lengths)]
    total = sum(weights)
    splits = dt.split_by_fraction(seqs, [w / total for w in weights])
    flat = [s for part in splits for s in part]
    assert [id(s) for s in flat] == [id(s) for s in seqs]
    assert all(part for part in splits)


# synthetic generator

def test_synth_is_deterministic():
    spec = SynthSpec(train_length=2000, test_length=500, validation_length=500, seed=3)
    a, b = dt.synth_generate(spec), dt.synth_generate(spec)
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.labels.tobytes() == y.labels.tobytes()
    other = dt.synth_generate(SynthSpec(train_length=2000, test_length=500,
                                        validation_length=500, seed=4))
    assert other[0].features.tobytes() != a[0].features.tobytes()


def test_synth_splits_are_independent_draws():
    train, test, val = dt.synth_generate(SynthSpec(train_length=3000, test_length=3000,
                                                   validation_length=3000))
    assert not np.array_equal(train.labels, test.labels)
    assert not np.array_equal(test.labels, val.labels)
    assert (len(train), len(test), len(val)) == (3000, 3000, 3000)
    assert train.channels == 6


def test_synth_noise_free_signal():
    spec = SynthSpec(noise_std=0.0, train_length=3000, test_length=3000, validation_length=10)
    train, test, _ = dt.synth_generate(spec)
    sig = dt.class_signatures(spec)
    np.testing.assert_array_equal(train.features, sig.clean_signal(train.labels).astype(np.float32))
    same = train.labels == test.labels
    assert same.sum() > 100
    np.testing.assert_array_equal(train.features[:, same], test.features[:, same])


def test_synth_label_histogram():
    spec = SynthSpec()
    length = 300_000
    labels = dt.synth_labels(spec, length, np.random.default_rng(5))
    d = np.arange(spec.min_duration, spec.max_duration + 1)
    mean_d, mean_d2 = d.mean(), (d ** 2).mean()
    p = 1 / spec.class_count
    segments = length / mean_d
    # each segment adds d samples to a class with probability p
    sd = np.sqrt(segments * (mean_d2 * p - (mean_d * p) ** 2)) / length
    frac = np.bincount(labels, minlength=3) / length
    assert np.all(np.abs(frac - p) < 3 * sd)
    runs = np.flatnonzero(np.diff(labels)) + 1
    assert np.diff(runs).min() >= spec.min_duration


def test_synth_majority_baseline_is_weak():
    _, test, _ = dt.synth_generate(SynthSpec())
    assert np.bincount(test.labels).max() / len(test) < 0.6


def test_synth_spec_validation():
    for kwargs in ({"class_count": 1}, {"min_duration": 0}, {"min_duration": 50,
                                                             "max_duration": 40},
                   {"noise_std": -1}, {"train_length": 0}):
        with pytest.raises(ValueError):
            SynthSpec(**kwargs)
