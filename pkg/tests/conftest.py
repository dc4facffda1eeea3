import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kgvqa.synth import SynthConfig, generate_synthetic, write_corpus

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record a one-line criterion verdict for the terminal summary."""
    def emit(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


SMALL = SynthConfig(n_entities=40, n_relations=2, n_edges=120, n_images=10, n_questions=40,
                    seed=3, cluster_size=20, word_dim=8, planted_dim=4)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SMALL)


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory, small_corpus):
    d = tmp_path_factory.mktemp("corpus")
    write_corpus(small_corpus, d)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
