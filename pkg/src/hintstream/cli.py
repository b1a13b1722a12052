"""Command-line entry point: generate, bench and verify subcommands.

Frame and mask inputs are directories of golden tensor files named
``chunk_0000.video`` / ``chunk_0000.mask`` / ``chunk_0000.ref`` (one video
and mask file per chunk; one ref file per reference image). Generated
frames are written back in the same format plus a ``trace.jsonl`` with one
record per chunk.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import run_benchmark
from .conditioning import ConditioningInputs
from .config import BenchConfig, load_config
from .errors import InvalidInputError
from .pipeline import Architecture, chunk_noise, generate_chunk, open_session
from .tensor import read_tensor, write_tensor
from .verify import run_verify


def _load_stack(directory: str | None, suffix: str) -> np.ndarray | None:
    if directory is None:
        return None
    paths = sorted(Path(directory).glob(f"chunk_*.{suffix}"))
    if not paths:
        raise InvalidInputError(f"no chunk_*.{suffix} files under {directory}")
    parts = [read_tensor(p) for p in paths]
    if suffix == "ref":  # one image per file
        return np.stack(parts)
    return np.concatenate(parts)


def _cmd_generate(args) -> int:
    bench_cfg = load_config(args.config) if args.config else BenchConfig()
    cfg = bench_cfg.engine
    video = _load_stack(args.video, "video")
    mask = _load_stack(args.mask, "mask")
    refs = _load_stack(args.refs, "ref")
    inputs = ConditioningInputs(src_video=video, src_mask=mask, src_ref_images=refs)

    chunks = args.chunks
    if chunks is None:
        if video is not None:
            chunks = video.shape[0] // cfg.chunk_frames
        else:
            raise InvalidInputError("--chunks is required without a source video")

    session = open_session(cfg, inputs, Architecture(args.arch), args.seed,
                           alpha=args.alpha)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_lines = []
    for i in range(chunks):
        result = generate_chunk(session, chunk_noise(args.seed, i, cfg))
        write_tensor(out_dir / f"chunk_{i:04d}.out", result.frames)
        trace_lines.append(result.trace.to_json())
        print(trace_lines[-1])
    (out_dir / "trace.jsonl").write_text("\n".join(trace_lines) + "\n")
    print(f"wrote {chunks} chunks ({session.mode.value}, {args.arch}) to {out_dir}")
    return 0


def _cmd_bench(args) -> int:
    config = load_config(args.config) if args.config else BenchConfig()
    if args.scenarios:
        scenarios = tuple(s.strip() for s in args.scenarios.split(",") if s.strip())
        config = replace(config, scenarios=scenarios)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    report = run_benchmark(config)
    print(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
        print(f"report written to {args.report}")
    return 0


def _cmd_verify(args) -> int:
    ok = run_verify(suite=args.suite, fault=args.fault)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hintstream",
        description="Streaming chunked diffusion engine with a parallel hint pathway.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run a generation session on tensor inputs")
    gen.add_argument("--config", help="key-value config file ([model]/[bench] sections)")
    gen.add_argument("--video", help="directory of chunk_*.video tensors")
    gen.add_argument("--mask", help="directory of chunk_*.mask tensors")
    gen.add_argument("--refs", help="directory of chunk_*.ref tensors")
    gen.add_argument("--arch", choices=["adapted", "legacy"], default="adapted")
    gen.add_argument("--alpha", type=float, default=1.0, help="context scale")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--chunks", type=int, help="chunk count (required without video)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=_cmd_generate)

    bench = sub.add_parser("bench", help="run the scenario benchmark")
    bench.add_argument("--config", help="key-value config file")
    bench.add_argument("--scenarios", help="comma-separated subset to run")
    bench.add_argument("--seed", type=int)
    bench.add_argument("--report", help="write the structured JSON report here")
    bench.set_defaults(func=_cmd_bench)

    verify = sub.add_parser("verify", help="run the claim-by-claim check suites")
    verify.add_argument("--suite", help="run a single suite")
    verify.add_argument("--fault", help="fault-injection flag (negative controls)")
    verify.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
