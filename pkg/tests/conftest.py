import numpy as np
import pytest
import torch

from openedit.synthdata import DatasetConfig, generate_dataset
from openedit.vse import Vocabulary, VseModel


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)
    np.random.seed(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A 24/8/8 corpus for fast IO and pipeline tests."""
    root = tmp_path_factory.mktemp("corpus")
    config = DatasetConfig(root=str(root), counts={"train": 24, "val": 8, "test": 8}, base_seed=100)
    generate_dataset(config)
    return str(root)


@pytest.fixture()
def small_vse():
    torch.manual_seed(7)
    vocab = Vocabulary(
        ["a", "and", "red", "green", "blue", "yellow", "purple", "orange", "circle", "square", "triangle"]
    )
    model = VseModel(vocab)
    model.eval()
    return model
