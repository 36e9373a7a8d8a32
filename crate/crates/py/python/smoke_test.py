"""Smoke test for the provsched_py extension.

Builds the extension with cargo unless PROVSCHED_PY_LIB points at a built
library, then exercises the backbone and one train/eval round.
"""

import importlib.util
import json
import os
import shutil
import subprocess
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def load_module(tmp):
    lib = os.environ.get("PROVSCHED_PY_LIB")
    if lib is None:
        subprocess.run(
            ["cargo", "build", "--release", "-p", "provsched-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
        lib = ROOT / "target" / "release" / "libprovsched_py.so"
    target = Path(tmp) / "provsched_py.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("provsched_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    with tempfile.TemporaryDirectory() as tmp:
        ps = load_module(tmp)

        report = ps.table5()
        assert report["result"] == "2,3,4,2,1,2,3,2,1,2,3,4", report

        qs = ps.QueueSystem([2, 4, 8], 1)
        for task, queue in [(1, 1), (2, 2), (3, 3), (4, 4)]:
            qs.enqueue(task, queue)
        assert qs.lengths() == [1, 1, 1, 1]
        assert qs.hungry_factors()[0] == 0
        picked = qs.tick_and_dispatch()
        assert picked is not None and picked[0] in (1, 2, 3, 4)

        assert ps.starvation_bound([2, 4, 8], 9, 4) == Fraction(9 * 4 * 8, 2)
        assert ps.finish_time_ratio_bound([2, 4, 8], 9) == Fraction(16)
        try:
            ps.starvation_bound([2, 4, 8], 8, 4)
        except ValueError:
            pass
        else:
            raise AssertionError("slice <= longest wait must be rejected")

        exp = ps.Experiment.load(str(ROOT / "configs" / "super_producer.json"))
        again = ps.Experiment.from_json(exp.to_json())
        assert again.seed == exp.seed

        out = Path(tmp) / "run"
        train = exp.train(out=str(out), weights=str(out / "weights.json"))
        assert train["converged"], train["decisions"]
        assert (out / "weights.json").exists()
        evaluation = exp.evaluate(out=str(out), weights=str(out / "weights.json"))
        losses = {row["scheduler"]: row["metrics"]["loss_ratio"] for row in evaluation["rows"]}
        assert losses["aegis"] == 0.0, losses
        assert losses["fifo"] > 0.0 and losses["rr"] > 0.0, losses

        try:
            ps.Experiment.from_json("{}")
        except ValueError:
            pass
        else:
            raise AssertionError("an empty config must be rejected")

        print(json.dumps({"train_decisions": train["decisions"], "loss": losses}))
    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
