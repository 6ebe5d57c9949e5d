import pytest

from polyfuzz.classifier import ClassifierConfig
from polyfuzz.grammar import load_grammars
from polyfuzz.pipeline import BuildConfig, build_models
from polyfuzz.translator import TranslatorConfig
from polyfuzz.waf import SimulatorOracle, bundled_ruleset

TINY = BuildConfig(corpus_size=300, pairs_per_direction=60, embed_dim=16, embed_epochs=2,
                   classifier=ClassifierConfig(hidden_size=16, epochs=3),
                   translator=TranslatorConfig(hidden_size=16, epochs=4))


@pytest.fixture(scope="session")
def sim_oracle():
    return SimulatorOracle(bundled_ruleset())


@pytest.fixture(scope="session")
def tiny_build(sim_oracle):
    """Small but complete model set: six classifiers and 30 translators."""
    return build_models(load_grammars(), sim_oracle, TINY)


@pytest.fixture(scope="session")
def tiny_models(tiny_build):
    return tiny_build[0]


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
