import os

import pytest

from lgsum.attention import FusionSpec
from lgsum.model import ModelConfig
from lgsum.numerics import LrSchedule
from lgsum.pipeline.corpus import load_corpus
from lgsum.pipeline.training import TrainConfig

DATA = os.path.join(os.path.dirname(__file__), "data")
TOY_TSV = os.path.join(DATA, "toy.tsv")
TOY_CONLLU = os.path.join(DATA, "toy.conllu")
FIG2_TSV = os.path.join(DATA, "fig2.tsv")
FIG2_CONLLU = os.path.join(DATA, "fig2.conllu")
FIG2_DEPMAT = os.path.join(DATA, "fig2.depmat")


def random_heads(rng, n):
    """Heads of a random valid tree: each token attaches to an earlier node of a random order."""
    order = rng.permutation(n) + 1
    heads = [0] * n
    for k in range(1, n):
        heads[order[k] - 1] = int(order[rng.integers(0, k)])
    return heads


def overfit_configs(fusion: FusionSpec = FusionSpec.soft(1.0), max_steps: int = 300):
    """Desk-scale model and schedule that memorize the 8-example toy corpus."""
    model = ModelConfig(width=64, heads=8, enc_layers=4, dec_layers=4, ffn_width=256,
                        dropout=0.1, fusion=fusion, min_gen=1, max_gen=30)
    train = TrainConfig(batch_tokens=200, accum_steps=4, max_steps=max_steps, seed=0,
                        schedule=LrSchedule(1e-3, 30))
    return model, train


def tiny_configs(fusion: FusionSpec = FusionSpec.soft(1.0), max_steps: int = 3):
    model = ModelConfig(width=16, heads=2, enc_layers=1, dec_layers=1, ffn_width=32,
                        dropout=0.1, fusion=fusion, min_gen=1, max_gen=6)
    train = TrainConfig(batch_tokens=200, accum_steps=2, max_steps=max_steps, seed=3,
                        schedule=LrSchedule(1e-3, 5))
    return model, train


@pytest.fixture(scope="session")
def toy_corpus():
    return load_corpus(TOY_TSV, TOY_CONLLU)


@pytest.fixture(scope="session")
def fig2_corpus():
    return load_corpus(FIG2_TSV, FIG2_CONLLU)


# -- acceptance reporting ---------------------------------------------------

_RESULTS: dict[int, tuple[str, str, float, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    detail = "; ".join(f"{k} {v}" for k, v in item.user_properties)
    verdict = "PASS" if rep.passed else "FAIL"
    if number in _RESULTS and _RESULTS[number][0] == "FAIL":
        return
    _RESULTS[number] = (verdict, title, rep.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for number in sorted(_RESULTS):
        verdict, title, secs, detail = _RESULTS[number]
        line = f"{verdict} criterion {number}: {title} [{secs:.1f}s]"
        tr.write_line(line + (f" ({detail})" if detail else ""))
