import pytest

from idt.scenes import DatasetConfig, make_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 scenes x 3 views at 16x16, shared by the pipeline tests."""
    root = tmp_path_factory.mktemp("data") / "tiny"
    make_dataset(DatasetConfig(scenes=4, views=3, height=16, width=16,
                               seed=5), root)
    return root
