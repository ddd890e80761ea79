import numpy as np
import pytest

from cluttergrasp.scene import Scene, make_object

_criteria: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion reported in the summary")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", (m.args[0], m.args[1])))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    n, title = crit
    key = f"{n:02d}"
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else ("SKIP" if report.outcome == "skipped" else "FAIL")
        prev = _criteria.get(key)
        if prev is None or prev[1] == "PASS":
            _criteria[key] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria):
        title, status = _criteria[key]
        terminalreporter.write_line(f"criterion {int(key):2d}  {status}  {title}")


def obj(obj_id, category, color="red", xy=(0.0, 0.0), yaw=0.0, dims=None, z=None):
    o = make_object(obj_id, category, color, np.random.default_rng(obj_id), xy=xy, yaw=yaw, dims=dims)
    return o if z is None else o.with_z(z)


@pytest.fixture
def lone_ball():
    return Scene((obj(0, "ball", "blue", dims=(0.03,)),))


@pytest.fixture
def buried_mango():
    """Mango hidden behind a wide green bottle, as seen from the default camera."""
    mango = obj(0, "mango", "orange", xy=(0.0, 0.03), dims=(0.03,))
    bottle = obj(1, "bottle", "green", xy=(0.0, -0.04), dims=(0.045, 0.2))
    return Scene((mango, bottle))
