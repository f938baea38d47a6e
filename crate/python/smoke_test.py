"""Smoke test for the dlotrack Python extension.

Build first with `cargo build --release -p dlotrack-python`, then run
`python3 python/smoke_test.py`. Set DLOTRACK_LIB to use a specific build.
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def find_library():
    if "DLOTRACK_LIB" in os.environ:
        return Path(os.environ["DLOTRACK_LIB"])
    for profile in ("release", "debug"):
        for name in ("libdlotrack_py.so", "libdlotrack_py.dylib", "dlotrack_py.dll"):
            path = ROOT / "target" / profile / name
            if path.exists():
                return path
    sys.exit("extension not built; run: cargo build --release -p dlotrack-python")


def load(lib):
    tmp = Path(tempfile.mkdtemp())
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    target = tmp / ("dlotrack" + suffix)
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("dlotrack", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    dt = load(find_library())

    cfg = dt.TrackerConfig(node_count=8, omega=0.1)
    assert cfg.node_count == 8 and cfg.omega == 0.1
    assert dt.TrackerConfig.from_json(cfg.to_json()).omega == 0.1
    try:
        dt.TrackerConfig(gamma=2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("gamma=2 accepted")

    chain = [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [6.0, 0.0]]
    out = dt.resample_chain(chain)
    assert all(abs(p[0] - 2.0 * i) < 1e-12 for i, p in enumerate(out)), out

    fwd, bwd, sym = dt.frame_error(chain, chain)
    assert fwd == bwd == sym == 0.0

    line = [[10.0 * i, 0.0, 0.0] for i in range(8)]
    cloud = [[0.5 * k, 0.0, 0.0] for k in range(141)]
    flags = dt.classify(line, cloud, r_vis=2.0, v_lim=3)
    assert flags == [True] * 8, flags

    moved = [[x + 0.3, y + 0.2, z] for x, y, z in cloud]
    pos, sigma2, iters = dt.register(line, moved, dt.TrackerConfig(node_count=8))
    assert sigma2 > 0 and iters >= 1
    assert all(abs(p[1] - 0.2) < 0.1 for p in pos), pos

    assert "s_static" in dt.scenarios()
    frames = dt.simulate("s_static", seed=7, frames=5)
    assert len(frames) == 5 and len(frames[0]["ground_truth"]) == 24

    tracker = dt.Tracker(frames[0]["ground_truth"])
    for f in frames[1:]:
        r = tracker.step(f["points"])
        assert r["status"] == "tracking", r["status"]
        _, _, err = dt.frame_error(r["chain"], f["ground_truth"])
        assert math.isfinite(err) and err < 5.0, err
    assert tracker.frame_index == 4 and len(tracker.chain) == 24
    assert tracker.step([])["status"] == "coasting"

    print("python smoke test passed")


if __name__ == "__main__":
    main()
