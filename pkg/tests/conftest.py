import pytest

# (criterion number, passed, detail) collected by the acceptance suite
RESULTS = {}


class Verdict:
    def __init__(self, number: int):
        self.number = number

    def __call__(self, passed: bool, detail: str) -> bool:
        line = f"C{self.number} {'PASS' if passed else 'FAIL'} {detail}"
        RESULTS[self.number] = line
        print(line)
        return passed


@pytest.fixture
def verdict(request):
    number = request.node.get_closest_marker("criterion").args[0]
    v = Verdict(number)
    yield v
    if number not in RESULTS:
        RESULTS[number] = f"C{number} FAIL did not complete"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
