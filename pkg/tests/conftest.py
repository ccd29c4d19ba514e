import pytest

from cimnas.prepare import prepare_mnist, prepare_synthetic_cifar


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    prepare_mnist(root)
    prepare_synthetic_cifar(root)
    return root


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(capsys):
    """Record and immediately print one verdict line per criterion."""

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
