import os

# single-threaded BLAS keeps timings comparable and results bit-stable
os.environ.setdefault("OMP_NUM_THREADS", os.environ.get("FSENET_THREADS", "1"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
