"""
hlg-setr - Main Entry Point

    python main.py train     --config run.cfg [--out DIR] [--seed N] [--deterministic] [--resume]
    python main.py eval      --config run.cfg [--checkpoint FILE]
    python main.py analyze   --config run.cfg [--input-size H[,W]] [--verify]
    python main.py visualize --config run.cfg --what pos-sim|attention|features
                             [--layer N] [--head N] [--point r,c] [--input FILE.ppm]

Exit codes: 0 ok, 1 other error, 2 config, 3 checkpoint, 4 divergence.
"""

import os
import re
import sys

# Version check
if sys.version_info < (3, 8):
    print("❌ Error: Python 3.8 or higher is required")
    print(f"   Current version: {sys.version}")
    sys.exit(1)

THREAD_VARS = ("OMP_NUM_THREADS", "MKL_NUM_THREADS", "OPENBLAS_NUM_THREADS")


def _wants_determinism(argv) -> bool:
    """--deterministic on the command line, or deterministic = true in the config file"""
    if "--deterministic" in argv:
        return True
    for i, arg in enumerate(argv):
        path = None
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError:
                return False
            return re.search(r"^\s*deterministic\s*=\s*[\"']?true", text, re.MULTILINE | re.IGNORECASE) is not None
    return False


# BLAS thread pools are sized when numpy loads
if _wants_determinism(sys.argv[1:]):
    for _var in THREAD_VARS:
        os.environ[_var] = "1"

import argparse
import logging

from src.cli import cmd_analyze, cmd_eval, cmd_train, cmd_visualize, exit_code_for, parse_config


def _point(raw: str):
    try:
        r, c = (int(v) for v in raw.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected r,c but got '{raw}'") from None
    return r, c


def _size(raw: str):
    try:
        values = [int(v) for v in raw.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected H or H,W but got '{raw}'") from None
    if len(values) == 1:
        return values[0], values[0]
    if len(values) == 2:
        return values[0], values[1]
    raise argparse.ArgumentTypeError(f"expected H or H,W but got '{raw}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="main.py", description="SETR / HLG desk-scale toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--out", help="output directory (overrides [run] out)")
    common.add_argument("--seed", type=int, help="overrides [recipe] seed")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="single-threaded numerics")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    train = sub.add_parser("train", parents=[common], help="train and write checkpoint + metrics log")
    train.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.bin")

    ev = sub.add_parser("eval", parents=[common], help="score the corpus and write predicted masks")
    ev.add_argument("--checkpoint", help="checkpoint file (default <out>/checkpoint.bin)")

    analyze = sub.add_parser("analyze", parents=[common], help="parameter / FLOP report and audit")
    analyze.add_argument("--input-size", type=_size, help="H or H,W (default: the model's size)")
    analyze.add_argument("--verify", action="store_true",
                         help="cross-check against an instrumented forward pass")

    vis = sub.add_parser("visualize", parents=[common], help="write figure images")
    vis.add_argument("--what", required=True, choices=["pos-sim", "attention", "features"])
    vis.add_argument("--checkpoint", help="checkpoint file (default <out>/checkpoint.bin)")
    vis.add_argument("--layer", type=int, default=1, help="1-based layer (SETR) / block or stage (HLG)")
    vis.add_argument("--head", type=int, default=0, help="0-based attention head")
    vis.add_argument("--point", type=_point, default=(0, 0), help="query cell r,c")
    vis.add_argument("--input", help="PPM image (default: first corpus sample)")
    return parser


def _print_summary(summary) -> None:
    for key, value in summary.items():
        if isinstance(value, float):
            value = format(value, ".6g")
        elif isinstance(value, int):
            value = f"{value:,}"
        print(f"   {key}: {value}")


def main(argv=None) -> int:
    """Main execution function"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    print("=" * 80)
    print(f"hlg-setr {args.command}")
    print("=" * 80)

    try:
        print("\n⚙️ Loading configuration...")
        run = parse_config(args.config, out=args.out, seed=args.seed, deterministic=args.deterministic)
        print(f"✅ Model: {run.model.name}")
        print(f"   Output directory: {run.out}")

        if args.command == "train":
            print(f"\n🔍 Training for {run.recipe.max_iters} steps ({run.recipe.optimizer.value})...")
            result = cmd_train(run, resume=args.resume)
        elif args.command == "eval":
            print("\n🔍 Evaluating...")
            result = cmd_eval(run, checkpoint=args.checkpoint)
        elif args.command == "analyze":
            print("\n🔍 Counting parameters and multiply-accumulates...")
            result = cmd_analyze(run, input_size=args.input_size, verify=args.verify)
        else:
            print(f"\n🔍 Rendering {args.what}...")
            result = cmd_visualize(run, args.what, checkpoint=args.checkpoint, layer=args.layer,
                                   head=args.head, point=args.point, input_path=args.input)
    except Exception as e:
        code = exit_code_for(e)
        print(f"❌ Error: {e}")
        logging.getLogger(__name__).debug("command failed", exc_info=True)
        return code

    print("\n" + "=" * 80)
    print("📊 SUMMARY")
    print("=" * 80)
    _print_summary(result.summary)

    print("\n📄 Files written:")
    for path in result.artifacts:
        print(f"   {path}")

    print("\n" + "=" * 80)
    print(f"🎉 {args.command} complete!")
    print("=" * 80)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
