import numpy as np
import pytest

from eegadapter.synth import SynthSpec, coupling_matrix, synthesize_dataset


def mean_abs_offdiag_corr(segments):
    vals = []
    for seg in segments:
        c = np.corrcoef(seg.samples)
        vals.append(np.abs(c[~np.eye(len(c), dtype=bool)]).mean())
    return float(np.mean(vals))


@pytest.fixture(scope="module")
def dataset():
    spec = SynthSpec(n_subjects_per_class=6, segments_per_subject=2,
                     segment_len=1024, coupling=0.75)
    return spec, synthesize_dataset(spec, seed=11)


class TestSynthesizeDataset:
    def test_deterministic_per_seed(self, dataset):
        spec, data = dataset
        again = synthesize_dataset(spec, seed=11)
        assert len(data) == len(again) == 2 * 6 * 2
        for a, b in zip(data, again):
            assert np.array_equal(a.samples, b.samples)
            assert a.label == b.label and a.source == b.source
        other = synthesize_dataset(spec, seed=12)
        assert not np.array_equal(data[0].samples, other[0].samples)

    def test_classes_differ_in_spatial_correlation(self, dataset):
        _, data = dataset
        c0 = mean_abs_offdiag_corr([s for s in data if s.label == 0])
        c1 = mean_abs_offdiag_corr([s for s in data if s.label == 1])
        assert c1 - c0 >= 0.2

    def test_marginal_variances_match_across_classes(self, dataset):
        _, data = dataset
        v0 = np.mean([s.samples.var(axis=1) for s in data if s.label == 0], axis=0)
        v1 = np.mean([s.samples.var(axis=1) for s in data if s.label == 1], axis=0)
        assert np.all(np.abs(v1 - v0) / v0 < 0.10)

    def test_degenerate_spec_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(n_subjects_per_class=0)

    def test_labels_balanced(self, dataset):
        _, data = dataset
        labels = np.array([s.label for s in data])
        assert (labels == 0).sum() == (labels == 1).sum() == 12


class TestCouplingMatrix:
    def test_rows_unit_norm(self):
        m = coupling_matrix(19, 0.75)
        np.testing.assert_allclose(np.linalg.norm(m, axis=1), np.ones(19), atol=1e-12)

    def test_zero_coupling_is_identity(self):
        np.testing.assert_allclose(coupling_matrix(5, 0.0), np.eye(5), atol=1e-12)
