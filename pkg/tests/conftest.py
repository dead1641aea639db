import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from chardep.corpus_io import Sentence, Token  # noqa: E402

EIN_HAUS = "1\tein\t_\t_\tART\t_\t2\tdet\t_\t_\n2\tHaus\t_\t_\tN\t_\t0\troot\t_\t_\n\n"


def make_sentence(heads, labels=None, forms=None, tags=None) -> Sentence:
    n = len(heads)
    labels = labels or [f"l{i % 3}" for i in range(n)]
    forms = forms or [f"w{i}" for i in range(1, n + 1)]
    tags = tags or ["T"] * n
    return Sentence(
        tuple(Token(i + 1, forms[i], tags[i], heads[i], labels[i]) for i in range(n))
    )


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Max elementwise relative error, with an absolute floor for tiny entries."""
    return float(np.max(np.abs(a - b) / np.maximum(1e-7, np.abs(a) + np.abs(b))))


@pytest.fixture
def ein_haus():
    return EIN_HAUS


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def acceptance_line(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
