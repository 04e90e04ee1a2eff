from __future__ import annotations

import subprocess
import sys
from pathlib import Path

from harness import scripted_entries, write_dataset

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def _run(*args, cwd):
    res = subprocess.run([sys.executable, *map(str, args)], capture_output=True, text=True, cwd=cwd)
    assert res.returncode == 0, res.stderr
    return res.stdout


def test_replay_example_script(tmp_path):
    out = _run(SCRIPTS / "replay_example.py", cwd=tmp_path)
    assert "label: REFUTE" in out and "model calls: 6" in out
    again = _run(SCRIPTS / "replay_example.py", "--out", "second.json", cwd=tmp_path)
    assert "recorded" not in again
    assert (tmp_path / "example_trace.json").read_bytes() == (tmp_path / "second.json").read_bytes()


def test_transition_table_script(tmp_path):
    rows = _run(SCRIPTS / "transition_table.py", "--max-plans", "1", cwd=tmp_path).splitlines()[2:]
    assert len(rows) == 12
    assert "| F | T | REFUTE | EARLY_REFUTE | 1 | 6 |" in rows


def test_dataset_report_script(tmp_path, xlpe):
    ds = write_dataset(tmp_path / "d.jsonl", scripted_entries(10, xlpe))
    out = _run(SCRIPTS / "dataset_report.py", ds, "--split-dir", "s", "--train", "6", "--val", "2", cwd=tmp_path)
    assert out.splitlines()[3].startswith("Sum\t2\t2")
    assert len((tmp_path / "s" / "test.jsonl").read_text().splitlines()) == 2
