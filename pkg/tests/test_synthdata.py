import itertools
from collections import Counter

import numpy as np
import pytest

from nevncd import SynthData
from nevncd.Core import ConfigError, DataError, DatasetSpec, ParseError
from nevncd.SynthData import GeneratorConfig, generate, obfuscate_views, place_centroids


def test_generate_is_deterministic(spec):
    config = GeneratorConfig(spec, n_per_class=20)
    first, second = generate(config, seed=4), generate(config, seed=4)
    other = generate(config, seed=5)
    assert all(np.array_equal(a.features, b.features) for a, b in zip(first.train, second.train))
    assert first.provenance == second.provenance
    assert not np.array_equal(first.train[0].features, other.train[0].features)


def test_generate_counts_and_statuses(small_dataset):
    spec = small_dataset.spec
    assert len(small_dataset.train) == 24 * spec.n_classes
    assert len(small_dataset.test) == 6 * spec.n_classes
    for example in small_dataset.train + small_dataset.test:
        assert example.features.shape == spec.feature_shape
        assert example.isLabeled == (example.label < spec.L)
    assert Counter(example.label for example in small_dataset.test) == {c: 6 for c in range(spec.n_classes)}


def test_holdout_is_balanced_per_view(multiview_dataset):
    spec = multiview_dataset.spec
    cells = Counter((example.label, example.view) for example in multiview_dataset.test)
    assert cells == {(c, v): 2 for c in range(spec.n_classes) for v in range(spec.K)}


def test_uneven_views_per_class():
    config = GeneratorConfig(DatasetSpec(L=1, U=1, K=3, feature_dim=2), n_per_class=31)
    dataset = generate(config, seed=0)
    views = Counter(example.view for example in dataset.train + dataset.test if example.label == 0)
    assert views == {0: 11, 1: 10, 2: 10}


def test_holdout_leaving_empty_training_cell():
    config = GeneratorConfig(DatasetSpec(L=1, U=1, K=3, feature_dim=2), n_per_class=3, holdout_fraction=0.6)
    with pytest.raises(ConfigError) as error:
        generate(config, seed=0)
    assert error.value.key == 'n_per_class'


@pytest.mark.parametrize('field, value', [('n_per_class', 1), ('sigma', 0.0), ('view_mode', 'mirror'),
                                          ('holdout_fraction', 1.0), ('hidden_labeled_views', [1])])
def test_generator_config_validation(spec, field, value):
    config = GeneratorConfig(spec, **{field: value})
    with pytest.raises(ConfigError) as error:
        config.validate()
    assert error.value.key == field


def test_generator_config_dict(spec):
    config = GeneratorConfig(spec, n_per_class=12, hidden_unlabeled_views=[0])
    assert GeneratorConfig.fromDict(config.toDict()) == config


# GEOMETRY -----------------------------------------------------------------------------------------

def test_centroid_separation():
    centroids = place_centroids(6, 3, 4.0, np.random.default_rng(0))
    distances = [np.linalg.norm(a - b) for a, b in itertools.combinations(centroids, 2)]
    assert min(distances) == pytest.approx(4.0 * np.sqrt(2), abs=1e-9)
    assert np.linalg.norm(centroids, axis=1) == pytest.approx(np.full(6, 4.0), abs=1e-9)


def test_centroids_need_enough_dimensions():
    with pytest.raises(ConfigError) as error:
        place_centroids(5, 2, 1.0, np.random.default_rng(0))
    assert error.value.key == 'feature_dim'
    assert 'at least 3' in error.value.message


def test_view_transforms_are_rigid():
    config = GeneratorConfig(DatasetSpec(L=2, U=2, K=3, feature_dim=4), view_shift=2.0)
    _, transforms = SynthData.build_geometry(config, seed=0)
    assert np.array_equal(transforms[0].rotation, np.eye(4))
    assert not transforms[0].shift.any()
    x = np.random.default_rng(1).standard_normal((5, 4))
    for transform in transforms[1:]:
        assert transform.rotation @ transform.rotation.T == pytest.approx(np.eye(4), abs=1e-9)
        assert np.linalg.norm(transform.shift) == pytest.approx(2.0, abs=1e-9)
        assert transform.invert(transform.apply(x)) == pytest.approx(x, abs=1e-9)


def test_nuisance_views_fix_the_class_subspace():
    config = GeneratorConfig(DatasetSpec(L=2, U=2, K=3, feature_dim=6), view_mode='nuisance', view_shift=3.0)
    centroids, transforms = SynthData.build_geometry(config, seed=0)
    x = np.random.default_rng(2).standard_normal((5, 6))
    for transform in transforms[1:]:
        assert transform.rotation @ transform.rotation.T == pytest.approx(np.eye(6), abs=1e-9)
        assert centroids @ transform.rotation.T == pytest.approx(centroids, abs=1e-9)
        assert centroids @ transform.shift == pytest.approx(np.zeros(4), abs=1e-9)
        assert np.linalg.norm(transform.shift) == pytest.approx(3.0, abs=1e-9)
        assert transform.invert(transform.apply(x)) == pytest.approx(x, abs=1e-9)


def test_nuisance_views_need_a_spare_dimension():
    config = GeneratorConfig(DatasetSpec(L=2, U=2, K=2, feature_dim=2), view_mode='nuisance')
    with pytest.raises(ConfigError) as error:
        generate(config, seed=0)
    assert error.value.key == 'feature_dim'


def test_identity_view_mode():
    config = GeneratorConfig(DatasetSpec(L=1, U=1, K=3, feature_dim=2), view_mode='identity')
    _, transforms = SynthData.build_geometry(config, seed=0)
    for transform in transforms:
        assert np.array_equal(transform.rotation, np.eye(2))


def test_view_means_follow_transformed_centroids():
    config = GeneratorConfig(DatasetSpec(L=1, U=1, K=2, feature_dim=2), n_per_class=4000)
    dataset = generate(config, seed=2)
    examples = dataset.train + dataset.test
    for classId, view in itertools.product(range(2), range(2)):
        cell = np.array([example.features[0] for example in examples
                         if example.label == classId and example.view == view])
        expected = dataset.transforms[view].apply(dataset.centroids[classId])
        assert cell.mean(axis=0) == pytest.approx(expected, abs=0.15)


def test_oracle_on_separable_data():
    config = GeneratorConfig(DatasetSpec(L=2, U=2, K=1, feature_dim=4), n_per_class=1000, class_separation=6.0)
    assert generate(config, seed=0).provenance['oracle_accuracy'] >= 0.99


def test_oracle_without_separation_is_chance():
    config = GeneratorConfig(DatasetSpec(L=2, U=2, K=1, feature_dim=4), n_per_class=50, class_separation=0.0)
    assert generate(config, seed=0).provenance['oracle_accuracy'] == 0.25


# VIEW OBFUSCATION ---------------------------------------------------------------------------------

def test_hidden_unlabeled_views():
    spec = DatasetSpec(L=3, U=2, K=3, feature_dim=4)
    dataset = generate(GeneratorConfig(spec, n_per_class=30, hidden_unlabeled_views=[0, 2]), seed=1)
    unlabeledViews = set(example.view for example in dataset.train if not example.isLabeled)
    labeledViews = set(example.view for example in dataset.train if example.isLabeled)
    assert unlabeledViews == {1}
    assert labeledViews == {0, 1, 2}
    assert set(example.view for example in dataset.test) == {0, 1, 2}
    assert dataset.provenance['obfuscated'] == [{'split': 'unlabeled', 'hidden_views': [0, 2]}]


def test_obfuscate_is_a_copy(multiview_dataset):
    before = len(multiview_dataset.train)
    hidden = obfuscate_views(multiview_dataset, 'labeled', [1])
    assert len(multiview_dataset.train) == before
    assert multiview_dataset.provenance['obfuscated'] == []
    assert all(example.view != 1 for example in hidden.train if example.isLabeled)
    assert obfuscate_views(multiview_dataset, 'labeled', []) is multiview_dataset


def test_hiding_two_of_three_labeled_views_keeps_a_third():
    spec = DatasetSpec(L=3, U=2, K=3, feature_dim=6)
    dataset = generate(GeneratorConfig(spec, n_per_class=31), seed=3)
    original = sum(example.isLabeled for example in dataset.train)
    hidden = obfuscate_views(dataset, 'labeled', [0, 1])
    remaining = sum(example.isLabeled for example in hidden.train)
    # one rounding step per labeled class at most
    assert abs(remaining - original / 3) <= spec.L
    assert sum(not example.isLabeled for example in hidden.train) == sum(not example.isLabeled
                                                                           for example in dataset.train)


def test_obfuscate_rejects_bad_arguments(multiview_dataset):
    with pytest.raises(ConfigError):
        obfuscate_views(multiview_dataset, 'test', [0])
    with pytest.raises(ConfigError):
        obfuscate_views(multiview_dataset, 'labeled', [3])
    with pytest.raises(DataError):
        obfuscate_views(multiview_dataset, 'unlabeled', [0, 1, 2])


# FILES --------------------------------------------------------------------------------------------

def test_save_and_load(tmp_path, multiview_dataset):
    SynthData.save(multiview_dataset, tmp_path / 'data')
    loaded = SynthData.load(tmp_path / 'data')
    assert loaded.spec == multiview_dataset.spec
    assert loaded.provenance == multiview_dataset.provenance
    assert len(loaded.train) == len(multiview_dataset.train)
    for a, b in zip(loaded.train + loaded.test, multiview_dataset.train + multiview_dataset.test):
        assert np.array_equal(a.features, b.features)
        assert (a.status, a.label, a.view) == (b.status, b.label, b.view)
    assert np.array_equal(loaded.centroids, multiview_dataset.centroids)


def test_load_without_provenance(tmp_path):
    with pytest.raises(FileNotFoundError):
        SynthData.load(tmp_path)


def _writeText(path, text):
    path.write_text(text, encoding='utf-8')
    return path


def test_read_rows_header_mismatch(tmp_path):
    path = _writeText(tmp_path / 'bad.csv', 'status,label,f0\nlabeled,0,1.0\n')
    with pytest.raises(ParseError) as error:
        SynthData.read_rows(path, 2, 'f')
    assert error.value.lineNumber == 1


@pytest.mark.parametrize('row, message', [('maybe,0,0,1.0', 'invalid status'),
                                          ('labeled,0,0', 'expected 4 fields'),
                                          ('labeled,zero,0,1.0', 'invalid literal')])
def test_read_rows_reports_line(tmp_path, row, message):
    path = _writeText(tmp_path / 'bad.csv', 'status,label,view,f0\nlabeled,0,0,1.0\n{}\n'.format(row))
    with pytest.raises(ParseError) as error:
        SynthData.read_rows(path, 1, 'f')
    assert error.value.lineNumber == 3
    assert message in error.value.message


def test_load_rejects_out_of_range_view(tmp_path, small_dataset):
    SynthData.save(small_dataset, tmp_path)
    width = small_dataset.spec.input_dim
    SynthData.write_rows(tmp_path / SynthData.TRAIN_FILE, [('labeled', 0, 4, np.zeros(width))], width, 'f')
    with pytest.raises(ParseError) as error:
        SynthData.load(tmp_path)
    assert error.value.lineNumber == 2


def test_save_load_round_trip_on_random_datasets(tmp_path):
    rng = np.random.default_rng(11)
    for index in range(100):
        L, U, K = (int(value) for value in rng.integers(1, 4, 3))
        spec = DatasetSpec(L=L, U=U, K=K, feature_dim=int(rng.integers(L + U + 1, L + U + 4)),
                           seq_len=int(rng.integers(1, 3)))
        config = GeneratorConfig(spec, n_per_class=int(rng.integers(3 * K, 5 * K + 1)),
                                 class_separation=float(rng.uniform(0.0, 8.0)),
                                 view_mode=SynthData.VIEW_MODES[index % len(SynthData.VIEW_MODES)],
                                 hidden_unlabeled_views=[K - 1] if K > 1 and index % 2 else [])
        dataset = generate(config, seed=index)
        SynthData.save(dataset, tmp_path / str(index))
        loaded = SynthData.load(tmp_path / str(index))
        assert loaded.spec == dataset.spec
        assert loaded.provenance == dataset.provenance
        assert len(loaded.train) == len(dataset.train) and len(loaded.test) == len(dataset.test)
        for a, b in zip(loaded.train + loaded.test, dataset.train + dataset.test):
            assert np.array_equal(a.features, b.features)
            assert (a.status, a.label, a.view) == (b.status, b.label, b.view)
