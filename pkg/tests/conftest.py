import pytest

_ACCEPTANCE_LINES: list[str] = []


class Criterion:
    """Collects named checks for one acceptance criterion and reports a single line."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.parts: list[tuple[str, bool]] = []

    def check(self, label: str, ok: bool) -> bool:
        self.parts.append((label, bool(ok)))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return bool(self.parts) and all(ok for _, ok in self.parts)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = "; ".join(f"{label} [{'ok' if ok else 'FAILED'}]" for label, ok in self.parts)
        return f"criterion {self.number:2d} {status}  {self.title}: {detail}"


@pytest.fixture
def criterion(request):
    made = []

    def make(number: int, title: str) -> Criterion:
        c = Criterion(number, title)
        made.append(c)
        return c

    yield make
    for c in made:
        line = c.line()
        _ACCEPTANCE_LINES.append(line)
        print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
