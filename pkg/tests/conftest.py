import warnings

import pytest

from avcl.data import SpectrogramCache, SyntheticSpec, generate
from avcl.train import TrainConfig


def tiny_spec(seed=0, **kw):
    defaults = dict(n_classes=3, per_class=12, visual_dim=8,
                    audio_seconds=0.25, noise_sigma=0.1, seed=seed)
    defaults.update(kw)
    return SyntheticSpec(**defaults)


def tiny_config(seed=0, **kw):
    defaults = dict(seed=seed, epochs=3, batch_size=4,
                    embed_dim=8, hidden_dim=8, probe_epochs=20)
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def tiny_dataset():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        split = generate(tiny_spec())
    cache = SpectrogramCache()
    cache.warm(split.all_samples())
    return split, cache
