import numpy as np
import pytest

from ivlid.data_io import Corpus


def make_corpus(n_per_lang=20, langs=("a", "b", "c"), dim=4, seed=0, spread=3.0, prefix="r"):
    rng = np.random.default_rng(seed)
    centres = spread * rng.standard_normal((len(langs), dim))
    ids, durs, labels, vecs = [], [], [], []
    for k, lang in enumerate(langs):
        for i in range(n_per_lang):
            ids.append(f"{prefix}_{lang}_{i}")
            durs.append(float(rng.uniform(3, 30)))
            labels.append(lang)
            vecs.append(centres[k] + rng.standard_normal(dim))
    return Corpus(ids, durs, labels, np.array(vecs), dim=dim)


@pytest.fixture
def small_corpus():
    return make_corpus()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one line per criterion, repeated in the terminal summary
_CRITERIA = {}


@pytest.fixture
def criterion():
    def report(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
