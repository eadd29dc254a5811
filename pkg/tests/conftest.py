from dataclasses import replace

import pytest
import torch

from corefdre.corpus import dump_corpus, dump_sidecar, fixture_paths, load_corpus, sidecar_of

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def fixture_files():
    return fixture_paths()


@pytest.fixture(scope="session")
def fixture_corpus(fixture_files):
    corpus, chains = fixture_files
    return load_corpus(corpus, chains)


@pytest.fixture
def frank_dialogue(fixture_corpus):
    return fixture_corpus[0]


def write_split(dialogues, directory, name):
    """Write ``dialogues`` as ``name.json`` + ``name.chains.json`` with loader-compatible ids."""
    renamed = [replace(d, id=f"{name}-{i}") for i, d in enumerate(dialogues)]
    dump_corpus(renamed, directory / f"{name}.json")
    dump_sidecar(sidecar_of(renamed), directory / f"{name}.chains.json")
    return renamed


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
