from __future__ import annotations

import pytest

from euphdet import EmbeddingBundle, MockEncoderConfig, PetExample, encode_corpus

from pipeline_helpers import ex


@pytest.fixture
def mock_config() -> MockEncoderConfig:
    return MockEncoderConfig(dimension=16, hash_seed=99)


@pytest.fixture
def tiny_corpus() -> list[PetExample]:
    return [
        ex("s1", "Can it be <disabled>?", 1),
        ex("s2", "The alarm was <disabled> by the guard.", 0),
        ex("s3", "He is <disabled> and proud.", 1),
        ex("s4", "The feature was <disabled> in settings.", 0),
        ex("s5", "She passed <away> last night.", 1),
        ex("s6", "The crowd drifted <away> from the stage.", 0),
        ex("s7", "Grandpa passed <away> peacefully.", 1),
        ex("s8", "Keep <away> from the edge.", 0),
    ]


@pytest.fixture
def tiny_bundle(tiny_corpus, mock_config) -> EmbeddingBundle:
    return encode_corpus(tiny_corpus, mock_config)
