import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from dimgp.dimensions import FUNCTION_SET, FUNCTIONS, TERMINAL_SET  # noqa: E402
from dimgp.tree import Individual, Node  # noqa: E402

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much],
)
settings.load_profile("default")


def _terminal(draw):
    name = draw(st.sampled_from(TERMINAL_SET))
    if name == "alpha":
        return Node(name, value=float(draw(st.integers(0, 2))))
    if name == "beta":
        return Node(name, value=draw(st.floats(0, 1, exclude_max=True)))
    return Node(name)


@st.composite
def trees(draw, max_depth=5, functions=FUNCTION_SET):
    """Random well-formed trees of depth at most ``max_depth``."""

    def build(d):
        if d >= max_depth or draw(st.booleans()) and d > 1 and draw(st.booleans()):
            return _terminal(draw)
        if d == 1 and draw(st.integers(0, 5)) == 0:
            return _terminal(draw)
        name = draw(st.sampled_from(functions))
        return Node(name, tuple(build(d + 1) for _ in range(FUNCTIONS[name].arity)))

    return build(1)


@st.composite
def individuals(draw, max_depth=5):
    return Individual((draw(trees(max_depth)), draw(trees(max_depth))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
