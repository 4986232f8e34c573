import pytest

from unidyg.synthetic import planted_ctdg, planted_dtdg
from unidyg.training import TrainConfig, train

# Training setup for the planted synthetic graphs: smaller widths and a larger
# step than the full-scale defaults so that a run takes seconds, not minutes.
SYNTHETIC = dict(dim=32, time_dim=32, batch_size=100, lr=1e-3, epochs=10, patience=5)

ACCEPTANCE: list[str] = []


def record(criterion, status: str, detail: str) -> None:
    ACCEPTANCE.append(f"CRITERION {criterion}: {status} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[1].rstrip(":").split(".")[0]), s)):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def planted_ctdg_stream():
    return planted_ctdg(seed=0)


@pytest.fixture(scope="session")
def planted_dtdg_stream():
    return planted_dtdg(seed=0)


@pytest.fixture(scope="session")
def planted_ctdg_run(planted_ctdg_stream):
    return train(TrainConfig(**SYNTHETIC), planted_ctdg_stream)
