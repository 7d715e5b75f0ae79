import pytest

from fedchain.config import ExperimentConfig, DatasetSpec


@pytest.fixture
def small_cfg():
    """Three collaborators, three rounds, tiny dataset: runs in well under a second."""
    return ExperimentConfig(
        seed=3, n_collaborators=3, rounds=3, local_epochs=1,
        dataset=DatasetSpec(n_samples=600), centralized_baseline=False,
    )
