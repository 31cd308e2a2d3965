import numpy as np
import pytest
from hypothesis import settings

from roap.geometry import Document, TextBox

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_doc(rects, width=1000, height=1000, doc_id="doc"):
    """Document from (x0, y0, x1, y1) tuples; ids follow list position."""
    return Document([TextBox(i, *map(float, r)) for i, r in enumerate(rects)], width, height, doc_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
