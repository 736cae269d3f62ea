import pytest

from detourlab.llmgen import OfflineBackend
from detourlab.pipeline import curate
from detourlab.world import WorldConfig, gen_world


@pytest.fixture(scope="session")
def small_world():
    return gen_world(WorldConfig(n_tasks=8, seed=3))


@pytest.fixture(scope="session")
def clean_world():
    return gen_world(WorldConfig(n_tasks=8, noise=0.0, seed=5))


@pytest.fixture(scope="session")
def world():
    """The default benchmark world (40 tasks x 6 videos, D=32, sigma 0.3, seed 7)."""
    return gen_world(WorldConfig())


@pytest.fixture(scope="session")
def small_curation(small_world):
    videos = [small_world.by_id[v] for v in small_world.train_videos]
    return curate(videos, OfflineBackend(small_world))


# -- acceptance bookkeeping ---------------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(n: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[n] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
