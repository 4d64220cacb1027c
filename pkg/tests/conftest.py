import numpy as np
import pytest

from contentalign.corpus import SyntheticSpec, generate_synthetic_corpus
from contentalign.model import ContentAlignModel, ModelConfig


@pytest.fixture(scope="session")
def small_corpus():
    """16 classes x 6 docs; cheap enough for every module's tests."""
    return generate_synthetic_corpus(SyntheticSpec(docs_per_class=6))


@pytest.fixture(scope="session")
def clean_corpus():
    return generate_synthetic_corpus(SyntheticSpec(docs_per_class=6, noise_rate=0.0))


@pytest.fixture
def tiny_config():
    return ModelConfig(
        vocab_size=32, height=8, width=8, channels=1, patch=4,
        text_context=8, content_context=8, d_enc=8, layers=1, heads=2, ff_dim=12, joint_dim=5,
    )


@pytest.fixture
def fast_model(small_corpus):
    cfg = ModelConfig(vocab_size=small_corpus.tokenizer_vocab, layers=0, d_enc=16, joint_dim=16)
    return ContentAlignModel(cfg, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def full_corpus():
    """The acceptance corpus: 16 classes x 50 docs, noise 0.1, seed 7."""
    return generate_synthetic_corpus(SyntheticSpec())
