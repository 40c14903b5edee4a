"""Generate demo sharp images and motion kernels for the CLI walkthrough."""

import argparse
from pathlib import Path

from regiondeblur.demodata import eval_scene, random_motion_kernel, textured_scene
from regiondeblur.imagecore import write_image, write_kernel


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="demo_inputs", help="directory for sharp/ and kernels/")
    ap.add_argument("--scenes", type=int, default=6, help="number of sharp images")
    ap.add_argument("--side", type=int, default=160, help="image side in pixels")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    sharp = out / "sharp"
    kernels = out / "kernels"
    sharp.mkdir(parents=True, exist_ok=True)
    kernels.mkdir(parents=True, exist_ok=True)

    for i in range(args.scenes):
        if i % 2 == 0:
            image = eval_scene(args.side, seed=args.seed + i, stripe_period=2 + i % 3)
        else:
            image = textured_scene(args.side, seed=args.seed + i)
        write_image(image, sharp / f"scene{i:02d}.pgm")
    for side in (11, 13, 15):
        write_kernel(random_motion_kernel(side, seed=args.seed + side),
                     kernels / f"motion{side:02d}.txt")

    print(f"wrote {args.scenes} images to {sharp} and 3 kernels to {kernels}")


if __name__ == "__main__":
    main()
