"""Command-line front door: correctness checks, scaling benchmarks,
attention-pattern rendering, and weight-bundle conversion.

Exit codes: 0 success, 1 property or I/O failure, 2 usage error.
The seed defaults to the LSG_SEED environment variable, then 0.
"""

import argparse
import os
import sys

from . import backends, bench, check
from .bundle import BundleError, _atomic_write, convert, load, save
from .config import LsgConfig
from .oracle import build_augmented, render_pattern
from .rng import Rng


def _seed_default():
    try:
        return int(os.environ.get("LSG_SEED", "0"))
    except ValueError:
        return 0


def _add_backend(p):
    p.add_argument("--backend", choices=["auto", "compiled", "pure"], default="auto",
                   help="kernel backend (default: compiled when available)")


def _add_mechanism(p, bt_default=128):
    p.add_argument("--bt", type=int, default=bt_default, help="block size")
    p.add_argument("--f", type=int, default=0, help="sparsity factor (0 = local only)")
    p.add_argument("--strategy", default="auto",
                   choices=["auto", "none", "strided", "block_strided", "pooling", "norm", "lsh"],
                   help="sparse selection; auto = none when --f 0, strided otherwise")
    p.add_argument("--g", type=int, default=0, help="global token count")
    p.add_argument("--causal", action="store_true", help="causal masking (requires --g 0)")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--head-dim", type=int, default=32)
    p.add_argument("--precision", choices=["single", "double"], default="single")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: $LSG_SEED or 0)")


def _mk_config(args, parser) -> LsgConfig:
    strategy = args.strategy
    if strategy == "auto":
        strategy = "none" if args.f == 0 else "strided"
    seed = args.seed if args.seed is not None else _seed_default()
    try:
        cfg = LsgConfig(
            block_size=args.bt, sparsity_factor=args.f, strategy=strategy,
            num_global=args.g, heads=args.heads, head_dim=getattr(args, "head_dim", 32),
            causal=args.causal, seed=seed, precision=args.precision,
        )
    except ValueError as exc:
        parser.error(str(exc))
    for warning in cfg.warnings():
        print(f"warning: {warning}", file=sys.stderr)
    return cfg


def _cmd_check(args):
    backends.use(args.backend)
    seed = args.seed if args.seed is not None else _seed_default()
    reports, ok = check.run_all(quick=args.quick, strategy=args.strategy, seed=seed)
    for rep in reports:
        print(rep.line())
        for failure in rep.failures[:20]:
            print(f"  FAIL {failure}")
    print(f"backend={backends.name()} overall: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_bench(args, parser):
    backends.use(args.backend)
    cfg = _mk_config(args, parser)
    lens = [int(x) for x in args.lens.split(",") if x]
    if not lens or any(n < 1 for n in lens):
        parser.error("--lens needs positive comma-separated lengths")
    if args.repeats < 3:
        parser.error("--repeats must be >= 3")
    attns = ("full", "lsg") if args.attn == "both" else (args.attn,)
    records = bench.run_bench(
        lens, cfg, attns=attns, repeats=args.repeats, threads=args.threads,
        seed=cfg.seed, mem=args.mem,
    )
    text = bench.render_csv(records)
    if args.out:
        _atomic_write(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return 0


def _cmd_pattern(args, parser):
    cfg = _mk_config(args, parser)
    if not 0 <= args.head < cfg.heads:
        parser.error(f"--head must be in [0, {cfg.heads})")
    r = Rng(cfg.seed)
    k = r.normal((args.n, cfg.model_dim), cfg.precision)
    v = r.normal((args.n, cfg.model_dim), cfg.precision)
    gk = gv = None
    if cfg.num_global:
        gk = r.normal((cfg.num_global, cfg.model_dim), cfg.precision)
        gv = r.normal((cfg.num_global, cfg.model_dim), cfg.precision)
    aug = build_augmented(k, v, gk, gv, cfg)
    pgm, csv_text = render_pattern(aug, args.head)
    csv_path = args.csv or (os.path.splitext(args.out)[0] + ".csv")
    _atomic_write(args.out, pgm)
    _atomic_write(csv_path, csv_text.encode("utf-8"))
    print(f"wrote {args.out} and {csv_path}")
    return 0


def _cmd_convert(args, parser):
    cfg = _mk_config(args, parser)
    bundle = load(args.input)
    converted = convert(bundle, cfg, args.target_len)
    save(converted, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsg",
        description="Blocked local-sparse-global attention: checks, benchmarks, "
                    "pattern renders, and weight-bundle conversion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run the correctness property grid")
    p.add_argument("--quick", action="store_true", help="coarse grid, under a minute")
    p.add_argument("--strategy", default=None,
                   choices=["none", "strided", "block_strided", "pooling", "norm", "lsh"])
    p.add_argument("--seed", type=int, default=None)
    _add_backend(p)

    p = sub.add_parser("bench", help="scaling benchmark, CSV output")
    p.add_argument("--lens", required=True, help="comma-separated sequence lengths")
    p.add_argument("--attn", choices=["full", "lsg", "both"], default="both")
    _add_mechanism(p)
    p.add_argument("--repeats", type=int, default=3, help="timed repeats (median)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--mem", choices=["measured", "analytic"], default="measured",
                   help="peak memory: tracemalloc pass or analytic lower bound")
    p.add_argument("--out", default=None, help="CSV file (default: stdout)")
    _add_backend(p)

    p = sub.add_parser("pattern", help="render one head's attention pattern")
    p.add_argument("--n", type=int, required=True, help="sequence length")
    _add_mechanism(p, bt_default=4)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--out", required=True, help="output .pgm path")
    p.add_argument("--csv", default=None, help="output .csv path (default: out with .csv)")

    p = sub.add_parser("convert", help="extend a weight bundle to a longer context")
    p.add_argument("--in", dest="input", required=True, help="input .lsgw bundle")
    p.add_argument("--out", required=True, help="output .lsgw bundle")
    p.add_argument("--target-len", type=int, required=True)
    p.add_argument("--globals", dest="g", type=int, default=1,
                   help="global tokens to initialize")
    p.add_argument("--bt", type=int, default=128)
    p.add_argument("--f", type=int, default=0)
    p.add_argument("--strategy", default="auto",
                   choices=["auto", "none", "strided", "block_strided", "pooling", "norm", "lsh"])
    p.set_defaults(causal=False, heads=4, precision="single", seed=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "check":
            return _cmd_check(args)
        if args.command == "bench":
            return _cmd_bench(args, parser)
        if args.command == "pattern":
            return _cmd_pattern(args, parser)
        if args.command == "convert":
            return _cmd_convert(args, parser)
    except BundleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {getattr(exc, 'filename', '')}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
