import pytest

from qauth import kernel

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES.append


@pytest.fixture(params=kernel.available_backends())
def backend(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section(f"acceptance criteria (kernel backend: {kernel.BACKEND})")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
