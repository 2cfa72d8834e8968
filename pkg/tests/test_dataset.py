import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monomal import (
    BENIGN,
    MALWARE,
    Dataset,
    FeatureSpace,
    FormatError,
    ParameterError,
    Sample,
    SplitError,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    load_feature_space,
    sample_batch,
    save_dataset,
    save_feature_space,
    split,
)
from monomal.dataset import mean_density, sample_batch_indices, to_csr


def small_spec(**overrides):
    base = dict(
        n_features=10,
        manifest_fraction=0.5,
        n_samples=4,
        malware_fraction=0.5,
        mean_density=3.0,
        n_rules=1,
        seed=7,
    )
    base.update(overrides)
    return SynthSpec(**base)


class TestFeatureSpace:
    def test_needs_manifest_feature(self):
        with pytest.raises(ParameterError):
            FeatureSpace(3, [False, False, False])

    def test_mask_length_checked(self):
        with pytest.raises(ParameterError):
            FeatureSpace(3, [True, False])

    def test_checksum_stable_and_mask_sensitive(self):
        a = FeatureSpace.prefix(10, 4)
        b = FeatureSpace.prefix(10, 4)
        c = FeatureSpace.prefix(10, 5)
        assert a.checksum == b.checksum
        assert a.checksum != c.checksum


class TestSample:
    def test_rejects_unsorted(self):
        with pytest.raises(ParameterError):
            Sample((3, 1), MALWARE)

    def test_rejects_duplicates(self):
        with pytest.raises(ParameterError):
            Sample((1, 1), BENIGN)

    @given(st.lists(st.integers(min_value=0, max_value=50)), st.sampled_from([BENIGN, MALWARE]))
    def test_from_indices_canonicalizes(self, raw, label):
        s = Sample.from_indices(raw, label)
        assert list(s.indices) == sorted(set(raw))

    def test_with_enabled_is_idempotent(self):
        s = Sample((1, 4), MALWARE)
        assert s.with_enabled(4) == s
        assert s.with_enabled(2).indices == (1, 2, 4)


class TestGenerateSynthetic:
    def test_malware_count_forced_by_rounding(self):
        d = generate_synthetic(small_spec())
        assert int(d.labels().sum()) == 2

    def test_determinism(self):
        assert generate_synthetic(small_spec()) == generate_synthetic(small_spec())

    def test_distinct_seeds_differ(self):
        assert generate_synthetic(small_spec()) != generate_synthetic(small_spec(seed=8))

    def test_desk_scale_density_band(self):
        # Density target carries a 10% tolerance: 48 -> [43.2, 52.8].
        spec = SynthSpec(n_features=5000, n_samples=20000, mean_density=48.0, seed=1)
        d = generate_synthetic(spec)
        assert 43.2 <= mean_density(d) <= 52.8
        assert int(d.labels().sum()) == round(20000 * spec.malware_fraction)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ParameterError):
            small_spec(mean_density=20.0)  # >= n_features
        with pytest.raises(ParameterError):
            small_spec(malware_fraction=1.0)
        with pytest.raises(ParameterError):
            small_spec(n_rules=5)  # 10 features cannot host 5 rules

    def test_indices_in_range_and_canonical(self):
        d = generate_synthetic(small_spec(n_samples=50))
        for s in d.samples:
            assert all(0 <= i < 10 for i in s.indices)
            assert list(s.indices) == sorted(set(s.indices))


class TestSplit:
    def make(self, n_mal, n_ben):
        space = FeatureSpace.prefix(6, 3)
        samples = [Sample((i % 6,), MALWARE) for i in range(n_mal)]
        samples += [Sample((i % 6,), BENIGN) for i in range(n_ben)]
        return Dataset(space, samples)

    def test_forced_stratification(self):
        d = self.make(5, 5)
        _, test = split(d, 0.2, seed=0)
        labels = test.labels()
        assert (labels == MALWARE).sum() == 1
        assert (labels == BENIGN).sum() == 1

    def test_partition_law(self):
        d = generate_synthetic(small_spec(n_samples=40))
        train_d, test_d = split(d, 0.3, seed=2)
        merged = sorted(train_d.samples + test_d.samples, key=lambda s: (s.label, s.indices))
        original = sorted(d.samples, key=lambda s: (s.label, s.indices))
        assert merged == original

    def test_determinism(self):
        d = self.make(6, 8)
        assert split(d, 0.25, seed=9)[0].samples == split(d, 0.25, seed=9)[0].samples

    def test_tags(self):
        d = self.make(5, 5)
        train_d, test_d = split(d, 0.2, seed=0)
        assert train_d.split_tag == "train" and test_d.split_tag == "test"

    def test_starved_label_is_error(self):
        with pytest.raises(SplitError):
            split(self.make(1, 5), 0.2, seed=0)

    @given(st.integers(2, 30), st.integers(2, 30), st.floats(0.1, 0.9), st.integers(0, 100))
    @settings(max_examples=30, deadline=None)
    def test_each_side_keeps_both_labels(self, n_mal, n_ben, frac, seed):
        d = self.make(n_mal, n_ben)
        train_d, test_d = split(d, frac, seed)
        for side in (train_d, test_d):
            labels = side.labels()
            assert (labels == MALWARE).any() and (labels == BENIGN).any()
        assert len(train_d) + len(test_d) == len(d)


class TestSampleBatch:
    @pytest.fixture()
    def corpus(self):
        return generate_synthetic(small_spec(n_samples=100, malware_fraction=0.2))

    def test_paper_ratio_is_exact(self, corpus):
        batch = sample_batch(corpus, 1000, 0.3, np.random.default_rng(0))
        labels = [s.label for s in batch]
        assert len(batch) == 1000
        assert labels.count(MALWARE) == 300
        assert labels.count(BENIGN) == 700

    def test_zero_ratio(self, corpus):
        batch = sample_batch(corpus, 10, 0.0, np.random.default_rng(0))
        assert all(s.label == BENIGN for s in batch)

    def test_small_pool_oversampled_with_replacement(self):
        space = FeatureSpace.prefix(4, 2)
        samples = [Sample((0,), MALWARE), Sample((1,), MALWARE)]
        samples += [Sample((i % 4,), BENIGN) for i in range(1000)]
        d = Dataset(space, samples)
        batch = sample_batch(d, 1000, 0.3, np.random.default_rng(5))
        malware = [s for s in batch if s.label == MALWARE]
        assert len(malware) == 300
        assert {s.indices for s in malware} <= {(0,), (1,)}

    def test_zero_batch_rejected(self, corpus):
        with pytest.raises(ParameterError):
            sample_batch(corpus, 0, 0.3, np.random.default_rng(0))

    def test_single_label_pool_rejected(self):
        space = FeatureSpace.prefix(4, 2)
        d = Dataset(space, [Sample((0,), MALWARE)])
        with pytest.raises(ParameterError):
            sample_batch(d, 4, 0.5, np.random.default_rng(0))

    @given(st.integers(1, 500), st.floats(0.0, 1.0), st.integers(0, 50))
    @settings(max_examples=40, deadline=None)
    def test_counts_always_exact(self, batch_size, ratio, seed):
        space = FeatureSpace.prefix(4, 2)
        samples = [Sample((0,), MALWARE)] * 3 + [Sample((1,), BENIGN)] * 7
        d = Dataset(space, samples)
        idx = sample_batch_indices(d, batch_size, ratio, np.random.default_rng(seed))
        labels = d.labels()[idx]
        assert len(idx) == batch_size
        assert (labels == MALWARE).sum() == round(batch_size * ratio)


class TestDiskFormat:
    def test_line_parses(self, tmp_path):
        space = FeatureSpace.prefix(50, 25)
        path = tmp_path / "d.txt"
        path.write_text("malware 3 17 42\nbenign\n")
        d = load_dataset(path, space)
        assert d.samples[0] == Sample((3, 17, 42), MALWARE)
        assert d.samples[1] == Sample((), BENIGN)

    def test_round_trip(self, tmp_path):
        d = generate_synthetic(small_spec(n_samples=30))
        path = tmp_path / "d.txt"
        save_dataset(d, path)
        assert load_dataset(path, d.space) == d

    def test_unknown_label_names_line(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("benign 1\nmalicious 2\n")
        with pytest.raises(FormatError, match=":2"):
            load_dataset(path, FeatureSpace.prefix(5, 2))

    def test_unsorted_indices_rejected(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("malware 5 3\n")
        with pytest.raises(FormatError, match=":1"):
            load_dataset(path, FeatureSpace.prefix(10, 5))

    def test_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("malware 99\n")
        with pytest.raises(FormatError, match="range"):
            load_dataset(path, FeatureSpace.prefix(10, 5))

    def test_space_round_trip(self, tmp_path):
        space = FeatureSpace(8, [True, False, True, False, False, True, False, False])
        path = tmp_path / "space.txt"
        save_feature_space(space, path)
        assert load_feature_space(path) == space

    def test_space_bad_header(self, tmp_path):
        path = tmp_path / "space.txt"
        path.write_text("features 5\n")
        with pytest.raises(FormatError):
            load_feature_space(path)


def test_to_csr_matches_samples():
    samples = [Sample((0, 3), MALWARE), Sample((), BENIGN), Sample((1,), BENIGN)]
    x = to_csr(samples, 4).toarray()
    expected = np.array([[1, 0, 0, 1], [0, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
    assert np.array_equal(x, expected)
