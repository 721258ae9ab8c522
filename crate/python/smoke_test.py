#!/usr/bin/env python3
"""Smoke test for the fare_py extension module.

Builds the extension with cargo if needed, imports it, and exercises the
pure helpers plus an expert rollout.  Pass a trained weight file (and
optionally a band file) to also score real frames:

    python3 python/smoke_test.py [policy.fwt [policy.band]]
"""

import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    lib = REPO / "target" / "release" / "libfare_py.so"
    if not lib.is_file():
        subprocess.run(
            ["cargo", "build", "--release", "-p", "fare-py"],
            cwd=REPO,
            check=True,
        )
    staging = Path(tempfile.mkdtemp(prefix="fare_py_"))
    shutil.copy2(lib, staging / "fare_py.so")
    sys.path.insert(0, str(staging))
    import fare_py

    return fare_py


def main():
    fare_py = load_module()

    # Closed-form KL: zero at the prior, 0.5 per unit mean offset.
    assert fare_py.kl_unit_gaussian([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert abs(fare_py.kl_unit_gaussian([1.0], [0.0]) - 0.5) < 1e-12

    # ROC hand case.
    auc = fare_py.roc_auc([0.1, 0.4, 0.35, 0.8], [False, False, True, True])
    assert abs(auc - 0.75) < 1e-12, auc

    # Heatmap binning: all mass on the left third flags only the left bin.
    rows, cols = 6, 9
    values = [1.0 if c < 3 else 0.0 for _ in range(rows) for c in range(cols)]
    assert fare_py.bin_flags(rows, cols, values) == (True, False, False)

    # Expert rollout renders plausible frames.
    frames = fare_py.expert_frames("corridor", 7, 20, 48, 64)
    assert len(frames) == 20 and len(frames[0]) == 48 * 64
    assert all(0.0 <= p <= 1.0 for p in frames[0])
    assert max(frames[0]) > 0.0

    if len(sys.argv) > 1:
        policy = fare_py.PolicyHandle(sys.argv[1])
        c, h, w = policy.frame_shape()
        frames = fare_py.expert_frames("plaza", 11, 5, h, w)
        score, v, omega = policy.eval(frames[-1])
        assert score >= 0.0 and 0.0 <= v <= 1.0 and -1.0 <= omega <= 1.0
        rh, rw, heat = policy.grad_cam()
        assert (rh, rw) == (h, w) and len(heat) == h * w
        print(f"scored a frame: kl={score:.3f} v={v:.3f} omega={omega:.3f}")
        if len(sys.argv) > 2:
            band = fare_py.BandHandle(sys.argv[2])
            print(
                f"band period {band.period()}, "
                f"upper[0]={band.upper(0):.3f}, "
                f"flagged={band.is_ood(score, 0)}"
            )

    print("smoke test passed")


if __name__ == "__main__":
    main()
