import pytest

from dhaseg.data import BenchmarkConfig, SceneConfig, build_benchmark


@pytest.fixture(scope="session")
def tiny_benchmark(tmp_path_factory):
    """Small benchmark shared by unit tests (not the acceptance runs)."""
    out = tmp_path_factory.mktemp("tiny_bench")
    config = BenchmarkConfig(out_dir=out, master_seed=0, n_source=6,
                             n_per_style=4, n_open=3,
                             scene=SceneConfig(height=32, width=32))
    return build_benchmark(config), config
