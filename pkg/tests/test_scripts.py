import json
import subprocess
import sys
from pathlib import Path

import pytest

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


@pytest.mark.parametrize("script,args", [
    ("spiral_experiment.py", ["--series", "3", "--iterations", "2"]),
    ("compare_baselines.py", ["--iterations", "2"]),
])
def test_script_runs(tmp_path, script, args):
    proc = subprocess.run([sys.executable, str(SCRIPTS / script), "--out", str(tmp_path), *args],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "summary.json").read_text())["config"]
