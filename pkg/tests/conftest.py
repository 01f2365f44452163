import os
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    """Small train/dev/eval synthetic corpus shared by training and harness tests."""
    from spoofbench.dataio import generate_synthetic_corpus
    root = tmp_path_factory.mktemp("synthetic")
    return {split: generate_synthetic_corpus(n, 0.5, 11, root / split, split=split)
            for split, n in (("train", 24), ("dev", 12), ("eval", 12))}


# -- acceptance summary: one line per criterion at the end of the run ----------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _CRITERIA[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:2d}: {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
