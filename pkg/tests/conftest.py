import numpy as np
import pytest
from hypothesis import strategies as st

from retargetkit import synth

finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


@st.composite
def unit_quats(draw):
    v = np.array([draw(st.floats(-1, 1)) for _ in range(4)])
    if np.linalg.norm(v) < 1e-3:
        v = np.array([1.0, 0.0, 0.0, 0.0])
    return v / np.linalg.norm(v)


@st.composite
def vec3(draw, lo=-2.0, hi=2.0):
    return np.array([draw(st.floats(lo, hi)) for _ in range(3)])


@pytest.fixture(scope="session")
def human_motions():
    return synth.human_corpus(6, seed=11, n_frames=12)


# acceptance outcomes, printed once at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
