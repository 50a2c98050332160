"""Time fuse() on a 512 x 1024 synthetic scene with 20 instances and 19 classes."""

import argparse
import statistics
import time

from panfuse.fusion import fuse
from panfuse.synth import SceneSpec, generate_scene


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--repeats", type=int, default=11)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()

    scene = generate_scene(SceneSpec(args.seed, args.height, args.width, args.instances, args.noise))
    fuse(scene.semantic, scene.instances, scene.catalog)  # warm-up
    times = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        fuse(scene.semantic, scene.instances, scene.catalog)
        times.append(1000 * (time.perf_counter() - t0))
    print(f"{args.height}x{args.width}, {args.instances} instances, {len(scene.catalog)} classes")
    print(f"median {statistics.median(times):.1f} ms, min {min(times):.1f} ms, "
          f"max {max(times):.1f} ms over {args.repeats} runs")


if __name__ == "__main__":
    main()
