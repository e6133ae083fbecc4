"""Command line entry point.

Subcommands: synth, validate, stats, train, eval, ablate, gradcheck.
Exit codes: 0 success, 1 validation/check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import reports, schema, synth
from .config import RunConfig, apply_overrides, config_echo, parse_config_text
from .features import build_vocab, load_vocab, save_vocab
from .model import build_model, load_checkpoint, save_checkpoint
from .training import (
    ABLATION_VARIANTS,
    TrainConfig,
    aggregate_report,
    baseline_predictor,
    build_encoded_split,
    evaluate,
    grad_check,
    model_predictor,
    run_ablation,
    train_model,
)

SPLIT_FILES = ("train.json", "val.json", "test.json", "dataset.json")


class UsageError(Exception):
    """Surfaced with exit code 2."""


def _data_dir(args) -> Path:
    if getattr(args, "data", None):
        return Path(args.data)
    env = os.environ.get("STORYQA_DATA_DIR")
    if env:
        return Path(env)
    raise UsageError("no data directory: pass --data or set STORYQA_DATA_DIR")


def _load_config(args, flag_overrides: dict[str, str]) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = apply_overrides(cfg, parse_config_text(text, args.config))
    overrides = {k: v for k, v in flag_overrides.items() if v is not None}
    return apply_overrides(cfg, overrides)


def _write_run_config(cfg: RunConfig, out_dir: Path, command: str) -> None:
    payload = {"command": command, **config_echo(cfg)}
    reports.write_json(payload, out_dir / "run_config.json")


def _load_saved_world_overrides(data_dir: Path) -> dict[str, str]:
    """Recover the generator configuration echoed next to a dataset."""
    path = data_dir / "run_config.json"
    if not path.exists():
        return {}
    saved = json.loads(path.read_text(encoding="utf-8"))
    return {k: v for k, v in saved.items() if k.startswith("world.")}


def _split_paths(data_dir: Path) -> list[Path]:
    return [data_dir / name for name in SPLIT_FILES if (data_dir / name).exists()]


def _load_split(data_dir: Path, name: str):
    path = data_dir / f"{name}.json"
    if not path.exists():
        raise UsageError(f"missing split file {path}")
    return schema.load_dataset(path)


def _roster_for(cfg: RunConfig) -> tuple[str, ...]:
    return cfg.world.active_roster


def _infer_d_v(episodes) -> int:
    for clip in episodes:
        for shot in clip.shots:
            for frame in shot:
                if frame.feature is not None:
                    return len(frame.feature)
    return 0


def _corpus(episodes, qas, roster) -> list[list[str]]:
    corpus = [list(qa.question) for qa in qas]
    corpus += [list(c) for qa in qas for c in qa.candidates]
    corpus += [list(line.tokens) for clip in episodes for line in clip.script]
    corpus += synth.lexicon_tokens()
    corpus.append(list(roster))
    return corpus


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    overrides = {
        "world.seed": args.seed,
        "world.n_scenes": args.episodes,
        "world.roster_size": args.roster_size,
        "world.qa_mix": args.qa_mix,
        "n_qas": args.qas,
    }
    cfg = _load_config(args, {k: (None if v is None else str(v))
                              for k, v in overrides.items()})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = synth.generate_world(cfg.world)
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.world.seed & 0xFFFFFFFFFFFFFFFF, 0x0A5E7])
    )
    qas = synth.build_qa_set(world, cfg.resolved_n_qas(), rng)
    splits = synth.split_dataset(world.episodes, qas,
                                 seed=cfg.world.seed & 0xFFFFFFFFFFFFFFFF)
    for name, (eps, split_qas) in zip(("train", "val", "test"), splits):
        schema.save_dataset(eps, split_qas, out / f"{name}.json")
    synth.save_facts(world.facts, world.causes, out / "facts.json")
    _write_run_config(cfg, out, "synth")
    counts = {d: sum(1 for q in qas if q.difficulty == d) for d in (1, 2, 3, 4)}
    print(f"wrote {len(world.episodes)} clips, {len(qas)} qas "
          f"(difficulty mix {counts}) to {out}")
    return 0


def cmd_validate(args) -> int:
    target = Path(args.path)
    files = [target] if target.is_file() else _split_paths(target)
    if not files:
        print(f"no dataset files found under {target}", file=sys.stderr)
        return 1
    roster = schema.DEFAULT_ROSTER if not args.roster else tuple(args.roster.split(","))
    all_ok = True
    payload = {}
    for path in files:
        try:
            episodes, qas = schema.load_dataset(path)
        except schema.ParseError as exc:
            print(f"{path.name}: parse error: {exc}", file=sys.stderr)
            payload[path.name] = {"parse_error": str(exc)}
            all_ok = False
            continue
        report = schema.validate_dataset(episodes, qas, roster)
        payload[path.name] = {
            "episodes": len(episodes),
            "qas": len(qas),
            "issues": [dataclasses.asdict(i) for i in report.issues],
        }
        if report.ok:
            print(f"{path.name}: ok ({len(episodes)} clips, {len(qas)} qas)")
        else:
            all_ok = False
            print(f"{path.name}: {len(report.issues)} violations", file=sys.stderr)
            for issue in report.issues:
                print(f"  {issue}", file=sys.stderr)
    if args.report:
        reports.write_json(payload, args.report)
    return 0 if all_ok else 1


def cmd_stats(args) -> int:
    data = _data_dir(args)
    files = _split_paths(data)
    if not files:
        print(f"no dataset files found under {data}", file=sys.stderr)
        return 1
    episodes, qas = [], []
    for path in files:
        eps, qa = schema.load_dataset(path)
        episodes.extend(eps)
        qas.extend(qa)
    stats = reports.dataset_statistics(episodes, qas)
    out = Path(args.out) if args.out else data
    written = reports.write_statistics(stats, out)
    print(f"{stats['n_clips']} clips, {stats['n_qas']} qas; "
          f"difficulty counts {stats['difficulty']}")
    print(f"wrote {', '.join(written)} to {out}")
    return 0


def _prepare_training(args, cfg: RunConfig, data: Path):
    train_eps, train_qas = _load_split(data, "train")
    val_eps, val_qas = _load_split(data, "val")
    roster = _roster_for(cfg)
    vocab = build_vocab(_corpus(train_eps, train_qas, roster), roster,
                        d_w=cfg.model.d_w,
                        pretrained_path=getattr(args, "pretrained", None),
                        seed=cfg.train.seed)
    d_v = _infer_d_v(train_eps)
    cfg.model.d_v = d_v
    train_items = build_encoded_split(train_eps, train_qas, vocab, roster,
                                      cfg.pipeline, d_v=d_v,
                                      use_coref=cfg.model.use_coref,
                                      use_vmeta=cfg.model.use_vmeta)
    val_items = build_encoded_split(val_eps, val_qas, vocab, roster,
                                    cfg.pipeline, d_v=d_v,
                                    use_coref=cfg.model.use_coref,
                                    use_vmeta=cfg.model.use_vmeta)
    return vocab, roster, train_items, val_items


def cmd_train(args) -> int:
    data = _data_dir(args)
    saved = _load_saved_world_overrides(data)
    flag_overrides = {
        "train.lr": args.lr, "train.epochs": args.epochs,
        "train.seed": args.seed, "train.batch_size": args.batch_size,
    }
    cfg = _load_config(args, {**saved,
                              **{k: (None if v is None else str(v))
                                 for k, v in flag_overrides.items()}})
    out = Path(args.out) if args.out else data / "run"
    out.mkdir(parents=True, exist_ok=True)
    vocab, roster, train_items, val_items = _prepare_training(args, cfg, data)
    model = build_model(cfg.model, roster, seed=cfg.train.seed, vocab=vocab)
    result = train_model(model, train_items, val_items, cfg.train, log=print)
    save_vocab(vocab, out / "vocab.bin")
    extra = {
        "train": dataclasses.asdict(cfg.train),
        "pipeline": dataclasses.asdict(cfg.pipeline),
        "vocab_file": "vocab.bin",
        "best_val_acc": result.best_val_acc,
        "best_epoch": result.best_epoch,
    }
    save_checkpoint(out / "checkpoint.bin", model, roster, extra=extra)
    reports.write_loss_curve(result.history, out / "loss_curve.csv",
                             out / "loss_curve.png")
    _write_run_config(cfg, out, "train")
    report = evaluate(model_predictor(model), val_items,
                      config=config_echo(cfg)) if val_items else None
    if report is not None:
        reports.write_eval_report(report, out / "val_report.json",
                                  out / "val_report.csv", out / "val_report.png")
    print(f"final train acc {result.final_train_acc:.3f}, "
          f"best val acc {result.best_val_acc:.3f} (epoch {result.best_epoch})")
    print(f"checkpoint and reports in {out}")
    return 0


def cmd_eval(args) -> int:
    report_path = Path(args.report) if args.report else None
    if args.fixture_accuracies:
        accs = [float(v) for v in args.fixture_accuracies.split(",")]
        counts = [int(v) for v in args.fixture_counts.split(",")]
        if len(accs) != 4 or len(counts) != 4:
            raise UsageError("fixture accuracies/counts need 4 comma-separated values")
        report = aggregate_report({d: accs[d - 1] for d in (1, 2, 3, 4)},
                                  {d: counts[d - 1] for d in (1, 2, 3, 4)},
                                  config={"fixture": True})
    else:
        data = _data_dir(args)
        episodes, qas = _load_split(data, args.split)
        saved = _load_saved_world_overrides(data)
        cfg = _load_config(args, saved)
        roster = _roster_for(cfg)
        if args.baseline:
            vocab = None
            if args.baseline == "qa_similarity":
                if args.vocab:
                    vocab = load_vocab(args.vocab)
                else:
                    train_eps, train_qas = _load_split(data, "train")
                    vocab = build_vocab(_corpus(train_eps, train_qas, roster), roster,
                                        d_w=cfg.model.d_w, seed=cfg.train.seed)
            predictor = baseline_predictor(args.baseline, vocab)
            items = build_encoded_split(episodes, qas, vocab or _dummy_vocab(roster),
                                        roster, cfg.pipeline,
                                        d_v=_infer_d_v(episodes))
            report = evaluate(predictor, items, config={"baseline": args.baseline})
        else:
            if not args.checkpoint:
                raise UsageError("eval needs --checkpoint, --baseline, or fixture flags")
            ckpt = Path(args.checkpoint)
            model_cfg, roster_list, extra, model = load_checkpoint(ckpt)
            model.eval()
            vocab_path = Path(args.vocab) if args.vocab else ckpt.parent / extra["vocab_file"]
            vocab = load_vocab(vocab_path)
            from .features import PipelineLimits
            limits = PipelineLimits(**extra.get("pipeline", {}))
            items = build_encoded_split(episodes, qas, vocab, roster_list, limits,
                                        d_v=model_cfg.d_v,
                                        use_coref=model_cfg.use_coref,
                                        use_vmeta=model_cfg.use_vmeta)
            report = evaluate(model_predictor(model), items,
                              config={"checkpoint": str(ckpt),
                                      "model": dataclasses.asdict(model_cfg)})
    if report_path is None:
        print(json.dumps(report.to_json_dict(), indent=1, sort_keys=True))
    else:
        base = report_path.with_suffix("")
        reports.write_eval_report(report, report_path,
                                  base.with_suffix(".csv"), base.with_suffix(".png"))
        print(f"overall {report.overall:.2f}, diff_avg {report.diff_avg:.2f} "
              f"-> {report_path}")
    return 0


def _dummy_vocab(roster):
    return build_vocab([["placeholder"]], roster, d_w=8, seed=0)


def cmd_ablate(args) -> int:
    data = _data_dir(args)
    saved = _load_saved_world_overrides(data)
    flag_overrides = {
        "train.lr": args.lr, "train.epochs": args.epochs,
        "train.seed": args.seed,
    }
    cfg = _load_config(args, {**saved,
                              **{k: (None if v is None else str(v))
                                 for k, v in flag_overrides.items()}})
    out = Path(args.out) if args.out else data / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    splits = [
        _load_split(data, "train"), _load_split(data, "val"), _load_split(data, "test")
    ]
    roster = _roster_for(cfg)
    vocab = build_vocab(_corpus(splits[0][0], splits[0][1], roster), roster,
                        d_w=cfg.model.d_w, seed=cfg.train.seed)
    cfg.model.d_v = _infer_d_v(splits[0][0])
    variants = ([v.strip() for v in args.variants.split(",")]
                if args.variants else list(ABLATION_VARIANTS))
    table = run_ablation(splits, vocab, roster, cfg.model, cfg.train, variants,
                         limits=cfg.pipeline, log=print)
    reports.write_ablation_table(table, out / "ablation.md", out / "ablation.json",
                                 out / "ablation.png")
    _write_run_config(cfg, out, "ablate")
    print(f"ablation table in {out}")
    return 0


def cmd_gradcheck(args) -> int:
    report = grad_check()
    print(report.summary())
    if args.report:
        reports.write_json(
            {"errors": report.errors, "max_rel_err": report.max_rel_err,
             "tolerance": report.tolerance, "passed": report.passed},
            args.report,
        )
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="storyqa",
        description="Synthetic drama-story QA: generator, model, baselines, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic world and QA splits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=None, help="number of scenes")
    p.add_argument("--qas", type=int, default=None, help="total QA count")
    p.add_argument("--qa-mix", type=str, default=None,
                   help="difficulty weights a,b,c,d")
    p.add_argument("--roster-size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="validate dataset files")
    p.add_argument("path", help="dataset file or directory")
    p.add_argument("--roster", help="comma-separated custom roster")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="dataset statistics tables and figures")
    p.add_argument("--data", help="data directory (or STORYQA_DATA_DIR)")
    p.add_argument("--out", help="output directory (default: data dir)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train the context-matching model")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--pretrained", help="pretrained word-vector text file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, baseline, or fixture")
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--baseline", choices=["shortest", "longest", "qa_similarity"])
    p.add_argument("--fixture-accuracies",
                   help="per-difficulty accuracies a,b,c,d")
    p.add_argument("--fixture-counts", help="per-difficulty counts n1,n2,n3,n4")
    p.add_argument("--report")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate ablation variants")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--variants", help=f"comma list of {', '.join(ABLATION_VARIANTS)}")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--report")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (schema.ParseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
