import pytest

from nevncd.Core import DatasetSpec, Hyperparams
from nevncd.Model import init_params
from nevncd.SynthData import GeneratorConfig, generate


@pytest.fixture
def spec():
    return DatasetSpec(L=3, U=2, K=1, feature_dim=4, seq_len=1)


@pytest.fixture
def hyper():
    return Hyperparams()


@pytest.fixture
def small_dataset(spec):
    # 24 train / 6 test examples per class
    return generate(GeneratorConfig(spec, n_per_class=30, class_separation=6.0), seed=0)


@pytest.fixture
def multiview_dataset():
    multiview = DatasetSpec(L=3, U=2, K=3, feature_dim=4, seq_len=1)
    return generate(GeneratorConfig(multiview, n_per_class=30, class_separation=6.0), seed=1)


@pytest.fixture
def tiny_network(spec):
    return init_params(spec, [6], seed=0, embed_dim=4, disc_widths=[3])
