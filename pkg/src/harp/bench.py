"""Benchmark arms and the threshold sweep.

Costs are reported two ways: wall-clock ratio against the matching vanilla
arm (the hardware-dependent number) and the exact forward-pass ratio
(machine-independent). The pass ratio of an arm is its mean forward passes
per generated token divided by the baseline's, so for a gated arm it equals
1 + reframe_fraction exactly and a gate that always fires costs exactly 2x.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import tokenizer
from .checkpoint_io import checkpoint_sha256
from .decoding import DecodeConfig, decode
from .harp_pass import HarpConfig
from .model import Checkpoint
from .trace import DecodeTrace

THREADS_ENV = "HARP_THREADS"

KNOWN_ARMS = (
    "vanilla-greedy",
    "vanilla-nucleus",
    "beam",
    "harp-greedy",
    "harp-nucleus",
    "harp-always",
    "harp-multistep",
)


@dataclass(frozen=True)
class ArmSpec:
    """A named benchmark configuration; `multistep_k` only for multistep arms."""

    name: str
    method: str
    harp_mode: str  # "off" | "entropy" | "always"
    max_reframe_steps: int = 1

    @property
    def baseline(self) -> str:
        return "vanilla-nucleus" if self.method == "nucleus" else "vanilla-greedy"


def parse_arm(token: str) -> ArmSpec:
    """Parse an arm token such as 'harp-greedy' or 'harp-multistep:4'."""
    name, _, param = token.partition(":")
    if name == "vanilla-greedy":
        return ArmSpec(token, "greedy", "off")
    if name == "vanilla-nucleus":
        return ArmSpec(token, "nucleus", "off")
    if name == "beam":
        return ArmSpec(token, "beam", "off")
    if name == "harp-greedy":
        return ArmSpec(token, "greedy", "entropy")
    if name == "harp-nucleus":
        return ArmSpec(token, "nucleus", "entropy")
    if name == "harp-always":
        return ArmSpec(token, "greedy", "always")
    if name == "harp-multistep":
        k = int(param) if param else 2
        if k < 1:
            raise ValueError(f"multistep arm needs k >= 1, got {k}")
        return ArmSpec(token, "greedy", "entropy", max_reframe_steps=k)
    raise ValueError(f"unknown bench arm {token!r}; known: {', '.join(KNOWN_ARMS)}")


@dataclass
class ArmResult:
    name: str
    total_forward_passes: int
    total_steps: int
    total_reframes: int
    reframed_steps: int
    wall_seconds: float
    lengths: list[int]

    @property
    def reframe_fraction(self) -> float:
        return self.reframed_steps / self.total_steps if self.total_steps else 0.0

    @property
    def passes_per_token(self) -> float:
        """1 + reframes/steps when the pass count decomposes that way,
        otherwise the measured ratio (beam search)."""
        if self.total_steps == 0:
            return 1.0
        if self.total_forward_passes == self.total_steps + self.total_reframes:
            return 1.0 + self.total_reframes / self.total_steps
        return self.total_forward_passes / self.total_steps


@dataclass
class BenchReport:
    checkpoint_sha256: str
    seed: int
    cache_mode: str
    prompt_count: int
    arms: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "checkpoint_sha256": self.checkpoint_sha256,
            "seed": self.seed,
            "cache_mode": self.cache_mode,
            "prompt_count": self.prompt_count,
            "arms": self.arms,
        }


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def build_arm_config(spec: ArmSpec, base: DecodeConfig, harp_base: HarpConfig) -> DecodeConfig:
    """Decode configuration for one arm, sharing seeds and decode settings."""
    harp: HarpConfig | None = None
    if spec.harp_mode != "off":
        harp = HarpConfig(
            theta=harp_base.theta,
            delta=harp_base.delta,
            beta=harp_base.beta,
            max_reframe_steps=spec.max_reframe_steps,
            noise=harp_base.noise,
            neftune_alpha=harp_base.neftune_alpha,
            gate="entropy" if spec.harp_mode == "entropy" else "always",
            scaled_dropout=harp_base.scaled_dropout,
        )
    return DecodeConfig(
        method=spec.method,
        max_new_tokens=base.max_new_tokens,
        eos_token=base.eos_token,
        temperature=base.temperature,
        top_p=base.top_p,
        beams=base.beams,
        top_k=base.top_k,
        length_penalty=base.length_penalty,
        seed=base.seed,
        harp=harp,
    )


def _run_arm(
    spec: ArmSpec,
    ckpt: Checkpoint,
    prompts: list[list[int]],
    base: DecodeConfig,
    harp_base: HarpConfig,
    use_cache: bool,
    ckpt_sha: str,
) -> tuple[ArmResult, list[DecodeTrace]]:
    cfg = build_arm_config(spec, base, harp_base)

    def one(idx_prompt: tuple[int, list[int]]) -> tuple[list[int], DecodeTrace]:
        idx, prompt = idx_prompt
        return decode(
            prompt, ckpt, cfg, use_cache=use_cache, generation=idx, ckpt_sha=ckpt_sha
        )

    t0 = time.perf_counter()
    workers = _worker_count()
    items = list(enumerate(prompts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(one, items))
    else:
        outputs = [one(item) for item in items]
    wall = time.perf_counter() - t0

    result = ArmResult(
        name=spec.name,
        total_forward_passes=0,
        total_steps=0,
        total_reframes=0,
        reframed_steps=0,
        wall_seconds=wall,
        lengths=[],
    )
    traces = []
    for generated, trace in outputs:
        result.lengths.append(len(generated))
        result.total_steps += len(trace.steps)
        result.total_forward_passes += trace.summary.total_forward_passes
        result.total_reframes += sum(s.reframe_count for s in trace.steps)
        result.reframed_steps += sum(1 for s in trace.steps if s.reframed)
        traces.append(trace)
    return result, traces


def run_bench(
    ckpt: Checkpoint,
    prompts: list[str],
    arm_tokens: list[str],
    base: DecodeConfig,
    harp_base: HarpConfig | None = None,
    use_cache: bool = False,
    keep_traces: bool = False,
) -> tuple[BenchReport, dict[str, list[DecodeTrace]]]:
    """Run the requested arms over all prompts with shared seeds.

    Baseline vanilla arms are added automatically when a requested arm
    needs one for its relative-cost columns.
    """
    if not prompts:
        raise ValueError("prompt list is empty")
    specs = [parse_arm(tok) for tok in arm_tokens]
    names = {s.name for s in specs}
    for spec in list(specs):
        if spec.baseline not in names:
            specs.append(parse_arm(spec.baseline))
            names.add(spec.baseline)

    harp_base = harp_base if harp_base is not None else HarpConfig()
    ckpt_sha = checkpoint_sha256(ckpt)
    encoded = [tokenizer.encode(p, add_bos=True) for p in prompts]

    results: dict[str, ArmResult] = {}
    all_traces: dict[str, list[DecodeTrace]] = {}
    for spec in specs:
        result, traces = _run_arm(spec, ckpt, encoded, base, harp_base, use_cache, ckpt_sha)
        results[spec.name] = result
        if keep_traces:
            all_traces[spec.name] = traces

    report = BenchReport(
        checkpoint_sha256=ckpt_sha,
        seed=base.seed,
        cache_mode="on" if use_cache else "off",
        prompt_count=len(prompts),
    )
    for spec in specs:
        res = results[spec.name]
        baseline = results[spec.baseline]
        is_baseline = spec.name == spec.baseline
        wall_ratio = 1.0 if is_baseline else res.wall_seconds / baseline.wall_seconds
        pass_ratio = (
            1.0 if is_baseline else res.passes_per_token / baseline.passes_per_token
        )
        length_ratio = 1.0
        if not is_baseline:
            ratios = [
                a / b for a, b in zip(res.lengths, baseline.lengths) if b > 0
            ]
            length_ratio = sum(ratios) / len(ratios) if ratios else 1.0
        report.arms[spec.name] = {
            "baseline": spec.baseline,
            "total_forward_passes": res.total_forward_passes,
            "total_steps": res.total_steps,
            "wall_seconds": res.wall_seconds,
            "generated_length": sum(res.lengths),
            "mean_output_length": sum(res.lengths) / len(res.lengths),
            "reframe_fraction": res.reframe_fraction,
            "passes_per_token": res.passes_per_token,
            "relative_cost": {"wall_clock": wall_ratio, "forward_passes": pass_ratio},
            "mean_output_length_ratio": length_ratio,
        }
    return report, all_traces


def format_report_table(arms: dict[str, dict]) -> str:
    cols = [
        ("arm", 18),
        ("passes", 8),
        ("steps", 7),
        ("reframe%", 9),
        ("fp-ratio", 9),
        ("wall-ratio", 11),
        ("len-ratio", 10),
    ]
    head = " ".join(name.ljust(w) for name, w in cols)
    lines = [head, "-" * len(head)]
    for name, arm in arms.items():
        lines.append(
            " ".join(
                [
                    name.ljust(18),
                    str(arm["total_forward_passes"]).ljust(8),
                    str(arm["total_steps"]).ljust(7),
                    f"{100 * arm['reframe_fraction']:.1f}".ljust(9),
                    f"{arm['relative_cost']['forward_passes']:.4f}".ljust(9),
                    f"{arm['relative_cost']['wall_clock']:.3f}".ljust(11),
                    f"{arm['mean_output_length_ratio']:.4f}".ljust(10),
                ]
            )
        )
    return "\n".join(lines)


def sweep_theta(
    ckpt: Checkpoint,
    prompts: list[str],
    thetas: list[float],
    base: DecodeConfig,
    harp_base: HarpConfig | None = None,
    use_cache: bool = False,
) -> list[dict]:
    """Reframe fraction and cost ratios per threshold, against one vanilla run."""
    if not prompts:
        raise ValueError("prompt list is empty")
    harp_base = harp_base if harp_base is not None else HarpConfig()
    ckpt_sha = checkpoint_sha256(ckpt)
    encoded = [tokenizer.encode(p, add_bos=True) for p in prompts]

    vanilla, _ = _run_arm(
        parse_arm("vanilla-greedy"), ckpt, encoded, base, harp_base, use_cache, ckpt_sha
    )
    rows = []
    for theta in thetas:
        harp_cfg = HarpConfig(
            theta=theta,
            delta=harp_base.delta,
            beta=harp_base.beta,
            max_reframe_steps=harp_base.max_reframe_steps,
            noise=harp_base.noise,
            neftune_alpha=harp_base.neftune_alpha,
            gate="entropy",
            scaled_dropout=harp_base.scaled_dropout,
        )
        spec = ArmSpec(f"theta={theta}", "greedy", "entropy")
        res, _ = _run_arm(spec, ckpt, encoded, base, harp_cfg, use_cache, ckpt_sha)
        rows.append(
            {
                "theta": theta,
                "reframe_fraction": res.reframe_fraction,
                "forward_pass_ratio": res.passes_per_token / vanilla.passes_per_token,
                "wall_ratio": res.wall_seconds / vanilla.wall_seconds,
            }
        )
    return rows


def sweep_rows_to_csv(rows: list[dict]) -> str:
    lines = ["theta,reframe_fraction,forward_pass_ratio,wall_ratio"]
    for row in rows:
        lines.append(
            f"{row['theta']},{row['reframe_fraction']},"
            f"{row['forward_pass_ratio']},{row['wall_ratio']}"
        )
    return "\n".join(lines) + "\n"
