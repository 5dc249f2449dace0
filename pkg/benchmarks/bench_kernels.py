"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--size 160x120] [--repeat 3] [--threads 1]
"""

from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from patchmvs import _backend
from patchmvs.frames import CameraFrame
from patchmvs.geometry import CameraIntrinsics, DepthRange
from patchmvs.matcher import MatchContext, MatchParams, run_stage
from patchmvs.refinement import RefineParams, global_refine
from patchmvs.seeding import SeedConfig, initial_grid
from patchmvs.synthetic import render_scene, textured_plane_scene

log = logging.getLogger("bench")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", default="160x120", help="image size WxH")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    W, H = (int(v) for v in args.size.lower().split("x"))
    cam = CameraIntrinsics(W * 0.95, W * 0.95, W / 2, H / 2, W, H)
    dr = DepthRange(2.0, 20.0)
    views = render_scene(textured_plane_scene(), cam)
    frames = [CameraFrame(v.image, cam, v.pose, k) for k, v in enumerate(views)]
    mp = MatchParams()
    rs = np.random.default_rng(0)
    n_q = 5000
    ys, xs = rs.integers(0, H, n_q), rs.integers(0, W, n_q)
    d = rs.uniform(3, 12, n_q)
    nrm = np.tile([0.0, 0.0, -1.0], (n_q, 1))
    conf = rs.uniform(size=(H, W))
    noisy = views[2].depth + rs.normal(0, 0.1, (H, W))

    names = ["python"] + (["cython"] if _backend.compiled_kernels is not None else [])
    rows = {}
    for name in names:
        k = _backend.get_kernels(name)
        _backend.kernels = k
        ctx = MatchContext(frames[2], frames[:2] + frames[3:], dr, radius=3, step=2, seed=1, threads=args.threads)

        def stage():
            g = initial_grid(None, SeedConfig(), cam, dr, seed=1, n_views=ctx.n_views)
            run_stage(ctx, g, mp, "photometric", n_iterations=1)

        rows[name] = {
            "photo_costs (5000 px)": best_of(lambda: k.photo_costs(ctx.args, ys, xs, d, nrm), args.repeat),
            "photometric iteration": best_of(stage, args.repeat),
            "global_refine": best_of(lambda: global_refine(noisy, views[2].normal, conf, views[2].image, cam, dr,
                                                           RefineParams(), threads=args.threads), args.repeat),
        }
    _backend.kernels = _backend.get_kernels()

    print(f"{W}x{H}, 4 sources, threads={args.threads}, best of {args.repeat}")
    print(f"{'kernel':<24}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for key in rows["python"]:
        line = f"{key:<24}" + "".join(f"{rows[n][key]:>11.4f}s" for n in names)
        if len(names) == 2:
            line += f"{rows['python'][key] / rows['cython'][key]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
