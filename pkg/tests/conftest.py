import pytest

from sipswitch.cli import load_config


@pytest.fixture(scope="session")
def make_config(tmp_path_factory):
    """Build a fully validated ExperimentConfig from a preset plus overrides."""
    def _make(preset=None, **overrides):
        path = tmp_path_factory.mktemp("cfg") / "config.yaml"
        path.write_text("{}\n")
        return load_config(str(path), preset=preset,
                           overrides=overrides or None)
    return _make
