import numpy as np
import pytest

from msdatf.generator import GeneratorConfig


def tiny_generator(**kw):
    """Smallest generator that still exercises every layer type."""
    base = dict(c1_filters=(3, 3, 4), c2_filters=(4, 4, 4), embed_dim=4, heads=2, depth=1,
                mlp_units=(6, 5))
    base.update(kw)
    return GeneratorConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return tiny_generator()


ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
