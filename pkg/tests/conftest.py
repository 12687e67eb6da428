import json
import os
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk_ablation.yaml"

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def desk_ablation(tmp_path_factory):
    """Runs (or reuses, via DECOLEARN_ABLATION_DIR) the desk ablation column and loads its outputs."""
    from decolearn.config import build_config
    from decolearn.experiments import run_ablation

    reuse = os.environ.get("DECOLEARN_ABLATION_DIR")
    if reuse and list(Path(reuse).glob("*/column.json")):
        out = Path(reuse)
        wall = None
    else:
        out = Path(reuse) if reuse else tmp_path_factory.mktemp("ablation")
        t0 = time.perf_counter()
        run_ablation(build_config(DESK_CONFIG), out)
        wall = time.perf_counter() - t0
    column = json.loads(next(out.glob("*/column.json")).read_text())
    runtime = column["runtime_s"]
    column["wall_s"] = wall if wall is not None else runtime.get("total", sum(runtime.values()))
    column["dir"] = out
    return column


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:>2}. {title}: {detail}")
