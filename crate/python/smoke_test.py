"""Smoke test for the quadmix_py extension.

Run after `cargo build -p quadmix-py`. If the module is not importable yet,
the freshly built library is copied from target/ into a temporary directory.
"""

import importlib
import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load():
    try:
        return importlib.import_module("quadmix_py")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libquadmix_py.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "quadmix_py.so")
            sys.path.insert(0, str(tmp))
            return importlib.import_module("quadmix_py")
    raise SystemExit("quadmix_py not built; run `cargo build -p quadmix-py`")


def main():
    qm = load()

    assert qm.GAITS == ["recovery", "trot", "pace", "bound", "gallop"]
    assert abs(qm.rbf([1.0], [0.0], -2.35) - math.exp(-2.35)) < 1e-15

    assert qm.select_reference_gait(1.0, 2.0, 5.0) == "trot"
    assert qm.select_reference_gait(3.0, 2.0, 5.0) == "bound"
    assert qm.select_reference_gait(9.0, 2.0, 5.0) == "gallop"

    means = [[float(i + j) for j in range(12)] for i in range(5)]
    stds = [[0.5] * 12 for _ in range(5)]
    mean, std = qm.compose(means, stds, [0.0, 0.0, 1.0, 0.0, 0.0])
    assert mean == means[2] and std == stds[2]
    mean, std = qm.compose(means, stds, [0.2] * 5)
    assert all(abs(m - (2.0 + j)) < 1e-12 for j, m in enumerate(mean))

    preset = qm.reward_preset("gallop")
    assert len(preset) == 11 and all(v >= 0 for v in preset.values())

    assert json.loads(qm.parse_command('{"v":1,"set_goal":[1,0]}')) == {"v": 1, "set_goal": [1.0, 0.0]}
    try:
        qm.parse_command('{"set_goal":[3,0]}')
        raise AssertionError("out-of-range goal accepted")
    except ValueError:
        pass

    search = qm.CriteriaSearch(seed=1, population=12)
    for _ in range(40):
        cands = search.ask()
        assert all(0.0 <= a < b <= 15.0 for a, b in cands)
        search.tell([(a - 2.2) ** 2 + (b - 4.3) ** 2 for a, b in cands])
    (x1, x2), _ = search.best
    assert abs(x1 - 2.2) < 0.05 and abs(x2 - 4.3) < 0.05, search.best

    session = qm.Session(mode="hold", seed=3)
    first = json.loads(session.step())
    frame = json.loads(session.step(['{"v":1,"set_goal":[1,0]}']))
    assert first["v"] == qm.WIRE_VERSION == 1
    assert abs(frame["t"] - first["t"] - 0.04) < 1e-9
    assert frame["goal_command"] == [1.0, 0.0] and frame["ref_gait"] == "gallop"
    assert abs(sum(frame["expert_weights"]) - 1.0) < 1e-9
    session.reset()

    print("quadmix_py smoke test passed")


if __name__ == "__main__":
    main()
