"""
Command-line entry point.

Exit codes: 0 success, 1 domain or validation failure, 2 usage error.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Tuple

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_model_config, load_run_config
from .coordinator import (
    FINETUNED_CKPT,
    PRETRAINED_CKPT,
    create_distillation_coordinator,
    export_data,
    load_stage_data,
    load_teachers,
)
from .curriculum import with_steps
from .errors import DistillError
from .experiments import STUDIES, ged_gain, summarize
from .metrics import aggregate_summaries, format_table
from .trainer import TrainHooks, evaluate_student, finetune_teacher, pretrain_teacher
from .transformer import flop_estimate, param_count

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def _stage_steps(text: str) -> Tuple[str, int]:
    name, sep, value = text.partition("=")
    try:
        steps = int(value)
    except ValueError:
        steps = 0
    if not sep or not name.strip() or steps < 1:
        raise argparse.ArgumentTypeError(f"expected STAGE=STEPS with STEPS >= 1, got {text!r}")
    return name.strip().upper(), steps


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="progressive-distill", description="Progressive knowledge distillation at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="masked-token pretraining of the teacher")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: <output_dir>/teachers)")
    p.add_argument("--progress", action="store_true")

    p = sub.add_parser("finetune-teacher", parents=[common], help="finetune a pretrained teacher on task data")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True, help="pretrained teacher checkpoint")
    p.add_argument("--out", help="output directory (default: next to --ckpt)")
    p.add_argument("--progress", action="store_true")

    for name, help_text in (("distill", "run the configured schedule"), ("ablate", "run the schedule without some stages")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--run-id")
        p.add_argument("--seed", type=int)
        p.add_argument("--teacher-dir", help="reuse teacher checkpoints from this directory")
        p.add_argument(
            "--steps", type=_stage_steps, action="append", default=[], metavar="STAGE=STEPS",
            help="override one stage's step budget; repeatable",
        )
        p.add_argument("--progress", action="store_true")
        if name == "distill":
            p.add_argument("--allow-violations", action="store_true", help="advisory schedule validation")
        else:
            p.add_argument("--drop", required=True, help="comma-separated stages, e.g. GD,GED")

    p = sub.add_parser("evaluate", parents=[common], help="score a student or teacher checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="dev")

    p = sub.add_parser("datagen", parents=[common], help="write the synthetic corpus and task files")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="aggregate completed runs into mean and std")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", help="also write the table as TSV")

    p = sub.add_parser("paramcount", parents=[common], help="parameter count and FLOP estimate of a model config")
    p.add_argument("--config", required=True)
    p.add_argument("--seq-len", type=int, default=128)

    p = sub.add_parser("experiment", parents=[common], help="run a desk-scale study")
    p.add_argument("study", choices=sorted(STUDIES))
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--fractions", type=float, nargs="+", default=[0.1, 1.0])
    p.add_argument("--out", help="write per-run rows as TSV")
    p.add_argument("--progress", action="store_true")

    p = sub.add_parser("serve", parents=[common], help="start the run monitor")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)

    p = sub.add_parser("status", parents=[common], help="query the run monitor")
    p.add_argument("--run-id", required=True)
    p.add_argument("--url")
    p.add_argument("--stop", action="store_true", help="ask the monitor to stop the run first")

    p = sub.add_parser("submit", parents=[common], help="start a run on the monitor")
    p.add_argument("--config", required=True, help="config path as seen by the monitor")
    p.add_argument("--run-id")
    p.add_argument("--url")
    p.add_argument("--allow-violations", action="store_true")
    return parser


def _pretrain(args) -> int:
    config = load_run_config(args.config)
    data = load_stage_data(config)
    teacher_config, _ = config.model_configs(data.vocab.size)
    weights, report = pretrain_teacher(
        teacher_config, data.corpus, data.vocab, config.pretrain.optimizer, config.pretrain.steps,
        data.max_len, data.pair_mode, hooks=TrainHooks(progress=args.progress),
    )
    out = Path(args.out or Path(config.output_dir) / "teachers")
    path = save_checkpoint(out / PRETRAINED_CKPT, teacher_config, weights, metadata={"role": "pretrained"})
    print(f"pretrained teacher: {path} (final MLM loss {report.loss_total[-1]:.4f})")
    return EXIT_OK


def _finetune_teacher(args) -> int:
    config = load_run_config(args.config)
    data = load_stage_data(config)
    teacher_config, _ = config.model_configs(data.vocab.size)
    pretrained = load_checkpoint(args.ckpt, teacher_config, requires_grad=False)
    weights, report = finetune_teacher(
        teacher_config, pretrained.weights, data.task, data.vocab, config.finetune.optimizer,
        config.finetune.steps, data.max_len, hooks=TrainHooks(progress=args.progress),
    )
    dev = report.dev_metrics[-1][1] if report.dev_metrics else None
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    path = save_checkpoint(out / FINETUNED_CKPT, teacher_config, weights, metadata={"role": "finetuned", "dev_metric": dev})
    print(f"finetuned teacher: {path}" + (f" (dev {dev:.4f})" if dev is not None else ""))
    return EXIT_OK


def _distill(args, drop: Optional[List[str]] = None) -> int:
    allow = True if drop else (args.allow_violations or None)
    config = load_run_config(args.config, allow_violations=allow, drop=drop or ())
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.steps:
        config = replace(config, schedule=with_steps(config.schedule, dict(args.steps)))
    kwargs = {"progress": args.progress}
    if args.teacher_dir:
        data = load_stage_data(config)
        teacher_config, _ = config.model_configs(data.vocab.size)
        kwargs.update(data=data, teachers=load_teachers(teacher_config, args.teacher_dir))
    coordinator = create_distillation_coordinator(config, run_id=args.run_id, **kwargs)
    summary = coordinator.coordinate()
    print(json.dumps(summary["metrics"], indent=2, sort_keys=True))
    print(f"run directory: {coordinator.run_dir}")
    return EXIT_OK


def _evaluate(args) -> int:
    config = load_run_config(args.config, allow_violations=True)
    data = load_stage_data(config)
    checkpoint = load_checkpoint(args.ckpt, requires_grad=False)
    metrics = evaluate_student(checkpoint.config, checkpoint.weights, data.task, args.split, data.vocab, data.max_len)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_OK


def _datagen(args) -> int:
    config = load_run_config(args.config, allow_violations=True)
    out = export_data(load_stage_data(config), args.out)
    print(f"data written to {out}")
    return EXIT_OK


def _report(args) -> int:
    table = aggregate_summaries(args.run_dirs)
    print(format_table(table))
    if args.out:
        table.to_csv(args.out, sep="\t")
    return EXIT_OK


def _paramcount(args) -> int:
    config = load_model_config(args.config)
    count = param_count(config)
    print(f"params: {count:,} ({count / 1e6:.1f}M)")
    if 1 <= args.seq_len <= config.max_seq_len:
        print(f"forward MACs at seq_len {args.seq_len}: {flop_estimate(config, args.seq_len):,}")
    return EXIT_OK


def _experiment(args) -> int:
    config = load_run_config(args.config, allow_violations=True)
    study = STUDIES[args.study]
    if args.study == "low-resource":
        frame = study(config, args.seeds, fractions=args.fractions, progress=args.progress)
    else:
        frame = study(config, args.seeds, progress=args.progress)
    print(summarize(frame).to_string(index=False))
    if args.study == "low-resource":
        print(ged_gain(frame).to_string())
    if args.out:
        frame.to_csv(args.out, sep="\t", index=False)
    return EXIT_OK


def _serve(args) -> int:
    from .monitor import serve

    serve(args.host, args.port)
    return EXIT_OK


def _submit(args) -> int:
    from .monitor_client import start_remote_run

    response = start_remote_run(args.config, args.run_id, args.allow_violations, args.url)
    if response.get("status") != "started":
        print(f"❌ monitor refused the run: {response.get('error', response)}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"started {response['run_id']}")
    return EXIT_OK


def _status(args) -> int:
    from .monitor_client import fetch_run_status, stop_remote_run

    if args.stop and not stop_remote_run(args.run_id, args.url):
        print(f"❌ could not stop run {args.run_id}", file=sys.stderr)
        return EXIT_FAILURE
    status = fetch_run_status(args.run_id, args.url)
    if status is None:
        print(f"❌ could not fetch status of run {args.run_id}", file=sys.stderr)
        return EXIT_FAILURE
    rows = status.get("metrics", [])
    print(f"{status['run_id']}: {status['status']} ({len(rows)} metrics rows)")
    if status.get("error"):
        print(f"error: {status['error']}")
    if rows:
        last = rows[-1]
        print(f"last: stage {last['stage']} step {last['step']} loss {last['loss_total']:.4f}")
    return EXIT_OK


HANDLERS = {
    "pretrain": _pretrain,
    "finetune-teacher": _finetune_teacher,
    "distill": _distill,
    "ablate": lambda args: _distill(args, drop=[s.strip() for s in args.drop.split(",") if s.strip()]),
    "evaluate": _evaluate,
    "datagen": _datagen,
    "report": _report,
    "paramcount": _paramcount,
    "experiment": _experiment,
    "serve": _serve,
    "status": _status,
    "submit": _submit,
}


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except (DistillError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_FAILURE


def main():
    sys.exit(cli_main(sys.argv[1:]))
