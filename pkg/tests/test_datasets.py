import numpy as np
import pytest
from scipy import stats

from maxsquare.datasets import (
    AppearanceShift,
    ClassificationDomainSpec,
    Dataset,
    SegmentationDomainSpec,
    dataset_equal,
    eval_dataset,
    gen_classification_pair,
    gen_segmentation_pair,
    read_dataset,
    with_seed,
    write_dataset,
)
from maxsquare.errors import FormatError, GenerationError, ShapeError
from maxsquare.losses import ABSTAIN

CLS_SPEC = ClassificationDomainSpec(
    num_classes=3,
    samples_per_class=40,
    means=((0.0, 2.0), (-2.0, -1.0), (2.0, -1.0)),
    cov_scale=0.5,
    target_shift=(0.8, 0.4),
    target_noise=0.1,
    seed=11,
)

SEG_SPEC = SegmentationDomainSpec(
    image_size=(16, 16),
    num_classes=3,
    class_frequency_weights=(8.0, 1.0, 1.0),
    shapes_per_image=6,
    num_images=8,
    appearance_shift=AppearanceShift(0.1, (0.05, -0.05, 0.02), 0.05),
    seed=12,
)


class TestClassificationGenerator:
    def test_deterministic(self):
        a_src, a_tgt = gen_classification_pair(CLS_SPEC)
        b_src, b_tgt = gen_classification_pair(CLS_SPEC)
        assert dataset_equal(a_src, b_src) and dataset_equal(a_tgt, b_tgt)
        assert np.array_equal(a_tgt.eval_labels, b_tgt.eval_labels)

    def test_per_class_counts_exact(self):
        src, tgt = gen_classification_pair(CLS_SPEC)
        assert list(np.bincount(src.labels)) == [40, 40, 40]
        assert list(np.bincount(tgt.eval_labels)) == [40, 40, 40]

    def test_target_labels_abstain_truth_held_out(self):
        _, tgt = gen_classification_pair(CLS_SPEC)
        assert np.all(tgt.labels == ABSTAIN)
        assert tgt.eval_labels is not None
        assert np.all(tgt.eval_labels != ABSTAIN)

    def test_identity_shift_matches_source_distribution(self):
        spec = ClassificationDomainSpec(
            num_classes=2, samples_per_class=400,
            means=((0.0, 0.0), (4.0, 0.0)), cov_scale=0.5,
            target_shift=(0.0, 0.0), target_noise=0.0, seed=13,
        )
        src, tgt = gen_classification_pair(spec)
        # Same parameters, independent draws: compare per-class means/spreads.
        for k in range(2):
            sm = src.features[src.labels == k].mean(axis=0)
            tm = tgt.features[tgt.eval_labels == k].mean(axis=0)
            assert np.abs(sm - tm).max() < 0.15

    def test_seed_changes_data(self):
        a_src, _ = gen_classification_pair(CLS_SPEC)
        b_src, _ = gen_classification_pair(with_seed(CLS_SPEC, 99))
        assert not np.array_equal(a_src.features, b_src.features)


class TestSegmentationGenerator:
    def test_deterministic(self):
        a_src, a_tgt = gen_segmentation_pair(SEG_SPEC)
        b_src, b_tgt = gen_segmentation_pair(SEG_SPEC)
        assert dataset_equal(a_src, b_src) and dataset_equal(a_tgt, b_tgt)

    def test_shapes_and_kinds(self):
        src, tgt = gen_segmentation_pair(SEG_SPEC)
        assert src.features.shape == (8, 3, 16, 16)
        assert src.labels.shape == (8, 16, 16)
        assert np.all(tgt.labels == ABSTAIN)
        assert tgt.eval_labels.shape == (8, 16, 16)

    def test_weighted_imbalance_shows_in_pixels(self):
        spec = SegmentationDomainSpec(
            image_size=(16, 16), num_classes=3,
            class_frequency_weights=(8.0, 1.0, 1.0),
            shapes_per_image=6, num_images=100, seed=14,
        )
        src, _ = gen_segmentation_pair(spec)
        freq = np.bincount(src.labels.ravel(), minlength=3) / src.labels.size
        assert freq[1] < freq[0] and freq[2] < freq[0]

    def test_shape_class_frequencies_chi_square(self):
        # Goodness of fit of painted-shape classes against the configured
        # weights over 1100 shapes, tallied through an rng recorder.
        from maxsquare.datasets import _paint_scene

        spec = SegmentationDomainSpec(
            image_size=(8, 8), num_classes=4,
            class_frequency_weights=(4.0, 2.0, 1.0, 1.0),
            shapes_per_image=5, num_images=220, seed=16,
        )
        weights = np.asarray(spec.class_frequency_weights)
        counts = np.zeros(4)

        class Recorder:
            def __init__(self, inner):
                self.inner = inner

            def choice(self, *a, **k):
                v = self.inner.choice(*a, **k)
                counts[int(v)] += 1
                return v

            def __getattr__(self, name):
                return getattr(self.inner, name)

        for i in range(spec.num_images):
            _paint_scene(spec, Recorder(np.random.default_rng((spec.seed, 0, i))))
        total = counts.sum()
        assert total == spec.num_images * spec.shapes_per_image
        expected = weights / weights.sum() * total
        assert stats.chisquare(counts, expected).pvalue > 0.01

    def test_identity_shift_identical_pixels(self):
        spec = SegmentationDomainSpec(
            image_size=(12, 12), num_classes=3,
            class_frequency_weights=(2.0, 1.0, 1.0),
            shapes_per_image=4, num_images=4,
            appearance_shift=AppearanceShift(0.0, (0.0, 0.0, 0.0), 0.0), seed=17,
        )
        src, tgt = gen_segmentation_pair(spec)
        # Distinct corpora (independent draws) but the same generator path;
        # per-image streams differ only by the domain tag.
        assert src.features.shape == tgt.features.shape
        assert not np.array_equal(src.features, tgt.features)

    def test_area_budget_enforced(self):
        with pytest.raises(GenerationError):
            SegmentationDomainSpec(
                image_size=(3, 3), num_classes=2,
                class_frequency_weights=(1.0, 1.0),
                shapes_per_image=10, num_images=1, seed=0,
            )


class TestUds1:
    def test_roundtrip_classification(self, tmp_path):
        src, _ = gen_classification_pair(CLS_SPEC)
        path = tmp_path / "c.uds"
        write_dataset(src, path)
        assert dataset_equal(src, read_dataset(path))

    def test_roundtrip_segmentation(self, tmp_path):
        src, tgt = gen_segmentation_pair(SEG_SPEC)
        for name, ds in (("s.uds", src), ("t.uds", tgt), ("e.uds", eval_dataset(tgt))):
            path = tmp_path / name
            write_dataset(ds, path)
            assert dataset_equal(ds, read_dataset(path))

    def test_empty_roundtrip(self, tmp_path):
        empty = Dataset("classification", np.zeros((0, 2)), np.zeros(0, np.int64), 3)
        path = tmp_path / "empty.uds"
        write_dataset(empty, path)
        assert dataset_equal(empty, read_dataset(path))

    def test_byte_deterministic(self, tmp_path):
        src, _ = gen_segmentation_pair(SEG_SPEC)
        a, b = tmp_path / "a.uds", tmp_path / "b.uds"
        write_dataset(src, a)
        write_dataset(src, b)
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt_magic(self, tmp_path):
        src, _ = gen_classification_pair(CLS_SPEC)
        path = tmp_path / "x.uds"
        write_dataset(src, path)
        data = path.read_bytes()
        path.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(FormatError) as err:
            read_dataset(path)
        assert err.value.offset == 0

    def test_truncation_reports_offset(self, tmp_path):
        src, _ = gen_classification_pair(CLS_SPEC)
        path = tmp_path / "x.uds"
        write_dataset(src, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(FormatError) as err:
            read_dataset(path)
        assert err.value.offset is not None and err.value.offset > 0

    def test_bad_version_and_kind(self, tmp_path):
        src, _ = gen_classification_pair(CLS_SPEC)
        path = tmp_path / "x.uds"
        write_dataset(src, path)
        data = bytearray(path.read_bytes())
        data[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError) as err:
            read_dataset(path)
        assert err.value.offset == 4

    def test_eval_view_requires_truth(self):
        src, _ = gen_classification_pair(CLS_SPEC)
        src.eval_labels = None
        with pytest.raises(ShapeError):
            eval_dataset(src)
