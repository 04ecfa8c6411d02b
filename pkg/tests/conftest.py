import pytest

from gaf.cli import main


@pytest.fixture(scope="session")
def default_data_dir(tmp_path_factory):
    """Default-scale dataset (200 train + 50 eval), generated once per session."""
    d = tmp_path_factory.mktemp("default_data")
    assert main(["generate", "--out", str(d)]) == 0
    return d
