#!/usr/bin/env python3
"""Full calibration of the bundled spot-weld dataset.

Runs every pipeline stage at production settings and prints a compact
summary: surrogate quality, posterior moments for the absorption
coefficient, and before/after prediction errors.

Usage: python3 scripts/calibrate_bundled.py [out_dir] [seed]
"""

import sys

from meltcal.domain import PARAM_NAMES
from meltcal.pipeline import RunConfig, run_calibration


def main() -> None:
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "runs/bundled"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    cfg = RunConfig(out_dir=out_dir, seed=seed)
    report = run_calibration(cfg)
    cfg.to_json(f"{cfg.out_dir}/run_config.json")

    q2 = report["surrogate_q2"]
    print(f"surrogate Q2: length {q2['q2_length']:.4f}, depth {q2['q2_depth']:.4f}")
    post = report["posterior"]
    i = PARAM_NAMES.index("alpha")
    print(f"alpha posterior: mean {post['mean'][i]:.4f} "
          f"std {post['std'][i]:.4f} "
          f"95% CI [{post['ci_lower'][i]:.4f}, {post['ci_upper'][i]:.4f}]")
    val = report["validation"]
    for point in ("prior_nominal", "posterior_mean"):
        tab = val[point]
        print(f"{point}: avg |length error| {tab['average_length_error_mm']:.3f} mm, "
              f"avg |depth error| {tab['average_depth_error_mm']:.3f} mm")
    print(f"artifacts in {cfg.out_dir}/")


if __name__ == "__main__":
    main()
