"""Command-line driver.

    sinkprune gen-model --mode dlm --out runs/
    sinkprune analyze --checkpoint runs/model.snkp --corpus text.txt --out runs/
    sinkprune analyze --synthetic-traces drifting --out runs/drift
    sinkprune prune --checkpoint runs/model.snkp --corpus text.txt \\
        --criterion wanda --sink-aware --sparsity 0.5 --out runs/sa
    sinkprune eval --checkpoint runs/sa/pruned.snkp --corpus text.txt --out runs/sa
    sinkprune report runs/sa/report.json runs/base/report.json

Flags may also come from a JSON file given with ``--config``; flags win.
Errors print one line ``error: <Code>: <message>`` and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .calib import load_corpus
from .errors import ConfigConflict, IoFailure, SinkPruneError
from .io import read_checkpoint, read_report, write_checkpoint, write_csv, write_report
from .model import AUTOREGRESSIVE, MASKED_DIFFUSION, ModelConfig, init_random_model
from .pipeline import RunConfig, analyze_model, analyze_traces, evaluate_checkpoint, prune_checkpoint
from .sinkstats import default_epsilon
from .synthetic import KINDS, synthetic_trace

MODES = {"ar": AUTOREGRESSIVE, "dlm": MASKED_DIFFUSION}
RUN_FIELDS = {f.name for f in fields(RunConfig)}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=None)
    common.add_argument("--config", help="JSON file of flag values (flags override it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint")
    common.add_argument("--corpus")
    common.add_argument("--mode", choices=sorted(MODES))
    common.add_argument("--criterion", choices=["magnitude", "wanda", "sparsegpt"])
    common.add_argument("--sink-aware", action="store_true", default=None)
    common.add_argument("--omega-one", action="store_true", default=None,
                        help="force omega = 1 (sink-aware path reduces to the baseline)")
    common.add_argument("--sparsity", type=float)
    common.add_argument("--pattern", help="rowwise | nm:N:M | heads:R")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--tsteps", type=int, help="number of calibration timesteps |T|")
    common.add_argument("--steps", type=int, help="diffusion steps T")
    common.add_argument("--calib-n", type=int)
    common.add_argument("--calib-len", type=int)
    common.add_argument("--eval-n", type=int)
    common.add_argument("--mask-ratio", type=float)
    common.add_argument("--blocksize", type=int)
    common.add_argument("--damp", type=float)
    common.add_argument("--tokenizer", choices=["byte", "whitespace-hash"])
    common.add_argument("--seed-model", type=_u64)
    common.add_argument("--seed-calib", type=_u64)
    common.add_argument("--seed-eval", type=_u64)
    # gen-model shape
    common.add_argument("--layers", type=int)
    common.add_argument("--heads", type=int)
    common.add_argument("--d-model", type=int)
    common.add_argument("--d-ff", type=int)
    common.add_argument("--vocab", type=int)
    common.add_argument("--max-len", type=int)
    common.add_argument("--synthetic-traces", choices=KINDS)

    parser = argparse.ArgumentParser(prog="sinkprune", description="Sink-aware pruning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-model", parents=[common], help="write a seeded random checkpoint")
    sub.add_parser("analyze", parents=[common], help="sink statistics (CSV + JSON)")
    sub.add_parser("prune", parents=[common], help="prune a checkpoint and write a report")
    sub.add_parser("eval", parents=[common], help="append quality metrics to the report")
    rep = sub.add_parser("report", parents=[common], help="print a summary table of reports")
    rep.add_argument("reports", nargs="*")
    return parser


def _settings(args) -> dict:
    merged = {}
    if args.config:
        try:
            merged.update(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError) as exc:
            raise IoFailure(f"cannot read config {args.config}: {exc}") from exc
    merged.update({k: v for k, v in vars(args).items() if v is not None})
    return merged


def _run_config(s: dict) -> RunConfig:
    return RunConfig(**{k: v for k, v in s.items() if k in RUN_FIELDS})


def _out_dir(s: dict) -> Path:
    if not s.get("out"):
        raise ConfigConflict("--out is required")
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(s: dict, key: str) -> str:
    if not s.get(key):
        raise ConfigConflict(f"--{key} is required")
    if not Path(s[key]).exists():
        raise IoFailure(f"missing file: {s[key]}")
    return s[key]


def _load(s: dict):
    ckpt = read_checkpoint(_need(s, "checkpoint"))
    if s.get("mode") and MODES[s["mode"]] != ckpt.config.mode:
        raise ConfigConflict(f"--mode {s['mode']} disagrees with checkpoint mode {ckpt.config.mode}")
    return ckpt


def _corpus(s: dict, ckpt):
    return load_corpus(_need(s, "corpus"), s.get("tokenizer", "byte"), ckpt.config.vocab_size)


def cmd_gen_model(s: dict) -> None:
    out = _out_dir(s)
    cfg = ModelConfig(
        mode=MODES[s.get("mode", "dlm")],
        n_layers=s.get("layers", 2),
        n_heads=s.get("heads", 4),
        d_model=s.get("d_model", 32),
        d_ff=s.get("d_ff", 64),
        vocab_size=s.get("vocab", 257),
        max_seq_len=s.get("max_len", 256),
        seed=s.get("seed_model", 0),
    ).validate()
    write_checkpoint(init_random_model(cfg), out / "model.snkp")


def _write_analysis(out: Path, analysis) -> None:
    write_csv(["step", "layer", "head", "position", "mass"], analysis.heatmap, out / "heatmap.csv")
    write_csv(["sequence", "step", "centroid"], analysis.centroids, out / "centroids.csv")
    write_csv(
        ["statistic", "value"],
        [
            ("spatial_variance", analysis.variance["spatial_variance"]),
            ("temporal_variance", analysis.variance["temporal_variance"]),
        ],
        out / "variance.csv",
    )
    write_report(analysis.variance, out / "variance.json")
    if analysis.profile is not None:
        write_report(analysis.profile.to_dict(), out / "sink_profile.json")


def cmd_analyze(s: dict) -> None:
    out = _out_dir(s)
    kind = s.get("synthetic_traces")
    if kind:
        if s.get("checkpoint"):
            raise ConfigConflict("--synthetic-traces runs without a checkpoint")
        n_steps, seq_len = s.get("steps", 16), s.get("calib_len", 16)
        layers, heads = s.get("layers", 1), s.get("heads", 1)
        trace = synthetic_trace(kind, n_steps, seq_len, layers, heads)
        eps = s.get("epsilon", default_epsilon(layers, heads, seq_len))
        analysis = analyze_traces([trace], eps * seq_len, layers, heads)
        analysis.variance["source"] = f"synthetic:{kind}"
    else:
        ckpt = _load(s)
        analysis = analyze_model(ckpt, _corpus(s, ckpt), _run_config(s))
        analysis.variance["source"] = "model"
    _write_analysis(out, analysis)


def cmd_prune(s: dict) -> None:
    out = _out_dir(s)
    ckpt = _load(s)
    pruned, report = prune_checkpoint(ckpt, _corpus(s, ckpt), _run_config(s))
    write_checkpoint(pruned, out / "pruned.snkp")
    write_report(report, out / "report.json")


def cmd_eval(s: dict) -> None:
    out = _out_dir(s)
    ckpt = _load(s)
    metrics = evaluate_checkpoint(ckpt, _corpus(s, ckpt), _run_config(s))
    path = out / "report.json"
    report = read_report(path) if path.exists() else {}
    report["eval"] = metrics
    write_report(report, path)


def render_table(reports) -> str:
    header = ("report", "criterion", "sink", "pattern", "sparsity", "achieved", "recon_err", "acc", "ppl")
    rows = [header]
    for name, rep in reports:
        cfg = rep.get("config", {})
        layers = rep.get("layers") or []
        recon = sum(l["recon_error"] for l in layers) if layers else None
        ev = rep.get("eval", {})
        fmt = lambda v, f="{:.4f}": "-" if v is None else f.format(v)  # noqa: E731
        rows.append((
            name,
            str(cfg.get("criterion", "-")),
            "yes" if cfg.get("sink_aware") else "no",
            str(cfg.get("pattern", "-")),
            fmt(cfg.get("sparsity"), "{:.2f}"),
            fmt(rep.get("global_sparsity")),
            fmt(recon, "{:.4g}"),
            fmt(ev.get("accuracy")),
            fmt(ev.get("perplexity"), "{:.3f}"),
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_report(s: dict) -> None:
    paths = list(s.get("reports") or [])
    if not paths and s.get("out"):
        paths = [str(Path(s["out"]) / "report.json")]
    if not paths:
        raise ConfigConflict("give report paths or --out")
    reports = [(str(Path(p).parent.name or p), read_report(p)) for p in paths]
    text = render_table(reports)
    sys.stdout.write(text)
    if s.get("out"):
        (_out_dir(s) / "summary.txt").write_text(text)


COMMANDS = {
    "gen-model": cmd_gen_model,
    "analyze": cmd_analyze,
    "prune": cmd_prune,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = _settings(args)
        COMMANDS[args.command](settings)
    except SinkPruneError as exc:
        print(f"error: {exc.code}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigConflict) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
