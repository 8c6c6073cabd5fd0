"""Command-line front end.

Thin client over the service handlers: each subcommand builds the same
request models the HTTP endpoints take and prints the response. Exit
codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import sys
from pathlib import Path

from pydantic import ValidationError

from .checkpoint_io import CheckpointError
from .schemas import (
    BenchRequest,
    DecodeOptions,
    GenerateRequest,
    HarpOptions,
    SweepRequest,
    ToyCheckpointRequest,
    TraceRenderRequest,
)
from .trace import TraceParseError


def _add_harp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--harp", choices=["on", "off", "always"], default="off")
    p.add_argument("--theta", type=float, default=1.0, help="entropy threshold in bits")
    p.add_argument("--delta", type=float, default=0.20, help="embedding dropout rate")
    p.add_argument("--beta", type=float, default=0.5, help="weight of the original logits")
    p.add_argument("--max-reframes", type=int, default=1)
    p.add_argument("--noise", choices=["dropout", "neftune"], default="dropout")
    p.add_argument("--neftune-alpha", type=float, default=5.0)


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=["greedy", "nucleus", "beam"], default="greedy")
    p.add_argument("--temp", type=float, default=0.6, help="nucleus temperature")
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--beams", type=int, default=3)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--length-penalty", type=float, default=0.6)
    p.add_argument("--max-new-tokens", type=int, default=32)


def _harp_options(args: argparse.Namespace) -> HarpOptions:
    return HarpOptions(
        mode=args.harp,
        theta=args.theta,
        delta=args.delta,
        beta=args.beta,
        max_reframes=args.max_reframes,
        noise=args.noise,
        neftune_alpha=args.neftune_alpha,
    )


def _decode_options(args: argparse.Namespace) -> DecodeOptions:
    return DecodeOptions(
        method=args.method,
        max_new_tokens=args.max_new_tokens,
        temperature=args.temp,
        top_p=args.top_p,
        beams=args.beams,
        top_k=args.top_k,
        length_penalty=args.length_penalty,
    )


def _read_prompts(path: str) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    prompts = [line for line in lines if line.strip()]
    if not prompts:
        raise ValueError(f"prompt file {path} has no prompts")
    return prompts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harp",
        description="Entropy-gated reframed forward-pass inference engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="decode text from a checkpoint")
    gen.add_argument("--ckpt", required=True)
    src = gen.add_mutually_exclusive_group(required=True)
    src.add_argument("--prompt")
    src.add_argument("--prompt-file")
    _add_decode_flags(gen)
    _add_harp_flags(gen)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--cache", choices=["on", "off"], default="off")
    gen.add_argument("--trace", metavar="PATH", help="write a JSON-lines trace")

    ren = sub.add_parser("trace-render", help="render a trace with reframe highlights")
    ren.add_argument("--in", dest="path", required=True)
    ren.add_argument("--format", choices=["ansi", "html"], default="ansi")

    ben = sub.add_parser("bench", help="compare decoding arms over a prompt set")
    ben.add_argument("--ckpt", required=True)
    ben.add_argument("--prompt-file", required=True)
    ben.add_argument(
        "--arms",
        default="vanilla-greedy,harp-greedy",
        help="comma-separated arm list, e.g. vanilla-greedy,harp-greedy,harp-multistep:2",
    )
    ben.add_argument("--out", metavar="PATH.json", help="write the report as JSON")
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--cache", choices=["on", "off"], default="off")
    _add_decode_flags(ben)
    _add_harp_flags(ben)

    swp = sub.add_parser("sweep-theta", help="reframe rate and cost per threshold")
    swp.add_argument("--ckpt", required=True)
    swp.add_argument("--prompt-file", required=True)
    swp.add_argument(
        "--thetas",
        default="0.6,0.8,1.0,1.2,1.4,1.6,1.8,2.0",
        help="comma-separated thresholds in bits",
    )
    swp.add_argument("--out", metavar="PATH.csv", help="write the sweep as CSV")
    swp.add_argument("--seed", type=int, default=0)
    swp.add_argument("--cache", choices=["on", "off"], default="off")
    _add_decode_flags(swp)
    _add_harp_flags(swp)

    toy = sub.add_parser("make-toy", help="write a seeded random checkpoint")
    toy.add_argument("--vocab", type=int, default=259)
    toy.add_argument("--d-model", type=int, default=64)
    toy.add_argument("--layers", type=int, default=4)
    toy.add_argument("--heads", type=int, default=4)
    toy.add_argument("--dff", type=int, default=256)
    toy.add_argument("--max-seq", type=int, default=256)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--out", required=True)

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)

    return parser


def _cmd_generate(args: argparse.Namespace) -> int:
    from .service import handle_generate

    if args.prompt is not None:
        prompts = [args.prompt]
    else:
        prompts = _read_prompts(args.prompt_file)
    if args.trace and len(prompts) != 1:
        print("error: --trace requires a single --prompt", file=sys.stderr)
        return 2
    harp = _harp_options(args)
    dec = _decode_options(args)
    for idx, prompt in enumerate(prompts):
        req = GenerateRequest(
            checkpoint=args.ckpt,
            prompt=prompt,
            decode=dec,
            harp=harp,
            seed=args.seed,
            cache=args.cache == "on",
            include_trace=bool(args.trace),
            generation_id=idx,
        )
        resp = handle_generate(req)
        print(resp.text)
        if args.trace:
            Path(args.trace).write_text(resp.trace_jsonl, encoding="utf-8")
    return 0


def _cmd_trace_render(args: argparse.Namespace) -> int:
    from .service import handle_trace_render

    req = TraceRenderRequest(
        trace_jsonl=Path(args.path).read_text(encoding="utf-8"), format=args.format
    )
    print(handle_trace_render(req).rendered)
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    import json

    from .bench import format_report_table
    from .service import handle_bench

    req = BenchRequest(
        checkpoint=args.ckpt,
        prompts=_read_prompts(args.prompt_file),
        arms=[a.strip() for a in args.arms.split(",") if a.strip()],
        decode=_decode_options(args),
        harp=_harp_options(args),
        seed=args.seed,
        cache=args.cache == "on",
    )
    resp = handle_bench(req)
    print(format_report_table({name: arm.model_dump() for name, arm in resp.arms.items()}))
    if args.out:
        Path(args.out).write_text(
            json.dumps(resp.model_dump(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    from .service import handle_sweep

    thetas = [float(t) for t in args.thetas.split(",") if t.strip()]
    req = SweepRequest(
        checkpoint=args.ckpt,
        prompts=_read_prompts(args.prompt_file),
        thetas=thetas,
        decode=_decode_options(args),
        harp=_harp_options(args),
        seed=args.seed,
        cache=args.cache == "on",
    )
    resp = handle_sweep(req)
    sys.stdout.write(resp.csv)
    if args.out:
        Path(args.out).write_text(resp.csv, encoding="utf-8")
    return 0


def _cmd_make_toy(args: argparse.Namespace) -> int:
    from .service import handle_make_toy

    req = ToyCheckpointRequest(
        vocab_size=args.vocab,
        d_model=args.d_model,
        n_layers=args.layers,
        n_heads=args.heads,
        d_ff=args.dff,
        max_seq_len=args.max_seq,
        seed=args.seed,
        out_path=args.out,
    )
    resp = handle_make_toy(req)
    print(f"wrote {resp.path} ({resp.n_parameters} parameters, sha256 {resp.sha256})")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "trace-render": _cmd_trace_render,
    "bench": _cmd_bench,
    "sweep-theta": _cmd_sweep,
    "make-toy": _cmd_make_toy,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (
        ValueError,
        OSError,
        CheckpointError,
        TraceParseError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
