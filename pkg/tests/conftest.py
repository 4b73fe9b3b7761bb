import numpy as np
import pytest
from hypothesis import strategies as st

from gaussrio.ekf import DIM, EkfState
from gaussrio.geom import PoseSE3, quat_normalize, rotvec_to_quat

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def unit_quats(draw):
    q = np.array(draw(st.tuples(*(st.floats(-1.0, 1.0, allow_nan=False),) * 4)))
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    return quat_normalize(q)


@st.composite
def poses(draw):
    return PoseSE3(draw(vec3), draw(unit_quats()))


@st.composite
def small_rotvecs(draw, max_angle=np.pi - 1e-3):
    v = draw(vec3)
    n = np.linalg.norm(v)
    if n > max_angle:
        v = v / n * max_angle
    return v


def random_ekf_state(rng):
    """Random nominal state with a random SPD covariance."""
    A = rng.normal(size=(DIM, DIM)) * 0.1
    return EkfState(
        p=rng.normal(size=3),
        v=rng.normal(size=3),
        b_a=rng.normal(size=3) * 0.05,
        b_w=rng.normal(size=3) * 0.01,
        q=rotvec_to_quat(rng.normal(size=3)),
        P=A @ A.T + 1e-4 * np.eye(DIM),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report ----------------------------------------------------------

_criteria: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "acceptance: slow end-to-end acceptance checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _criteria.append((mark.args[0], mark.args[1], "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, status, detail in sorted(_criteria):
        terminalreporter.write_line(f"[{status}] {num:>2}. {title}: {detail}")
