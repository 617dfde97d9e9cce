import numpy as np
import pytest

from kddgan import synthetic
from kddgan.ingest import load_schema, parse_nslkdd

SCHEMA = load_schema()
FEATURES = [c.name for c in SCHEMA if c.kind != "label"]


def record(label="normal", difficulty=None, **cells):
    """One NSL-KDD line with all-zero numeric cells unless overridden."""
    row = []
    for c in SCHEMA:
        if c.kind == "label":
            row.append(label)
        elif c.name in cells:
            row.append(str(cells[c.name]))
        elif c.name == "protocol_type":
            row.append("tcp")
        elif c.name == "service":
            row.append("http")
        elif c.name == "flag":
            row.append("SF")
        else:
            row.append("0")
    if difficulty is not None:
        row.append(str(difficulty))
    return ",".join(row)


@pytest.fixture(scope="session")
def small_text():
    counts = {"normal": 300, "neptune": 200, "smurf": 60, "satan": 60, "ipsweep": 60,
              "portsweep": 50, "nmap": 40, "back": 20, "teardrop": 20, "warezclient": 10}
    return synthetic.generate_records(seed=3, counts=counts, missing_rate=0.01, sentinel_rate=0.01)


@pytest.fixture(scope="session")
def small_ds(small_text):
    return parse_nslkdd(small_text)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------

_VERDICTS: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    entry = _VERDICTS.setdefault(number, [title, True, []])
    entry[1] = entry[1] and rep.passed
    if detail:
        entry[2].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, ok, details = _VERDICTS[number]
        line = f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {title}"
        if details:
            line += f" [{' | '.join(details)}]"
        terminalreporter.write_line(line)
