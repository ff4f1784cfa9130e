import pytest

from debris_twin import synth

# acceptance verdicts, printed together at the end of the run
VERDICTS: dict[str, str] = {}


def record(criterion: str, ok: bool, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}"
    if detail:
        line += f"  ({detail})"
    VERDICTS[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[key])


@pytest.fixture(scope="session")
def unit_box():
    return synth.generate(synth.unit_box_spec(seed=0))


@pytest.fixture(scope="session")
def occlusion():
    return synth.generate(synth.occlusion_spec(seed=0))
