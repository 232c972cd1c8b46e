"""Command-line driver: ``daan {gen,train,grid,random,avg,dynamic,report}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .datagen import ShiftScenario, make_task, read_dataset, write_dataset
from .harness import DEFAULT_TASKS, Experiment, ExperimentConfig, Task, report
from .net import NetConfig, save_model
from .trainer import TrainConfig, fit, format_omega, parse_omega, write_metrics

# key -> (type, default); the config file and the flags share these names
SETTINGS = {
    "seed": (int, 0),
    "out": (str, "runs"),
    "scenario": (str, None),
    "magnitude": (float, 3.0),
    "conditional_magnitude": (float, None),
    "epochs": (int, 30),
    "lambda": (float, 1.0),
    "omega": (str, "dynamic"),
    "batch_size": (int, 32),
    "eta0": (float, 0.01),
    "alpha": (float, 10.0),
    "beta": (float, 0.75),
    "momentum": (float, 0.9),
    "classifier_lr_mult": (float, 10.0),
    "n": (int, 600),
    "classes": (int, 3),
    "dim": (int, 2),
    "spread": (float, 1.0),
    "feature_dim": (int, 32),
    "hidden_width": (int, 64),
    "discriminator_hidden": (int, 64),
    "detach_weights": (bool, True),
    "local_class_norm": (bool, False),
    "omega_ema": (float, None),
    "repeats": (int, 5),
    "t": (int, 20),
    "wall_clock": (bool, False),
}


def _parse_bool(text: str) -> bool:
    s = text.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _convert(key: str, raw: str):
    kind, _ = SETTINGS[key]
    if raw.strip().lower() in ("none", ""):
        return None
    try:
        return _parse_bool(raw) if kind is bool else kind(raw.strip())
    except ValueError:
        raise ValueError(f"bad value for {key}: {raw!r}") from None


def read_config(path) -> Dict[str, object]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise ValueError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = _convert(key, value)
    return out


def format_config(settings: Dict[str, object]) -> str:
    return "".join(f"{k} = {settings[k]}\n" for k in SETTINGS if settings.get(k) is not None)


def resolve(args: argparse.Namespace) -> Dict[str, object]:
    settings = {k: d for k, (_, d) in SETTINGS.items()}
    if args.config:
        settings.update(read_config(args.config))
    for key in SETTINGS:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    return settings


def train_config(s) -> TrainConfig:
    net = NetConfig(
        input_dim=s["dim"],
        num_classes=s["classes"],
        feature_dim=s["feature_dim"],
        hidden_width=s["hidden_width"],
        discriminator_hidden=s["discriminator_hidden"],
        init_seed=s["seed"],
    )
    return TrainConfig(
        net=net,
        lam=s["lambda"],
        batch_size=s["batch_size"],
        epochs=s["epochs"],
        eta0=s["eta0"],
        alpha=s["alpha"],
        beta=s["beta"],
        momentum=s["momentum"],
        omega=parse_omega(s["omega"]),
        seed=s["seed"],
        classifier_lr_mult=s["classifier_lr_mult"],
        detach_weights=s["detach_weights"],
        local_class_norm=s["local_class_norm"],
        omega_ema=s["omega_ema"],
    )


def _scenario(s) -> ShiftScenario:
    return ShiftScenario(s["scenario"] or "marginal", s["magnitude"], s["seed"], s["conditional_magnitude"])


def _generate(s):
    return make_task(_scenario(s), n=s["n"], num_classes=s["classes"], dim=s["dim"], cluster_spread=s["spread"])


def cmd_gen(args, s) -> int:
    out = Path(s["out"])
    write_dataset(out, *_generate(s))
    (out / "config.txt").write_text(format_config(s))
    print(f"wrote {out / 'source.csv'}, {out / 'target_x.csv'}, {out / 'target_eval.csv'}")
    return 0


def cmd_train(args, s) -> int:
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        src, tgt = read_dataset(args.data)
    else:
        write_dataset(out / "data", *_generate(s))
        src, tgt = read_dataset(out / "data")
    s = dict(s, dim=src.X.shape[1], classes=max(s["classes"], src.num_classes))
    cfg = train_config(s)
    result = fit(cfg, src, tgt)
    (out / "config.txt").write_text(format_config(s))
    write_metrics(out / "metrics.csv", result.metrics, s["wall_clock"])
    save_model(out / "model.npz", result.model)
    with open(out / "omega.csv", "w") as fh:
        fh.write("epoch,omega\n")
        fh.writelines(f"{e},{format(w, '.9g')}\n" for e, w in result.omega_history)
    last = result.metrics[-1] if result.metrics else None
    if last is None:
        print(f"{format_omega(cfg.omega)}: 0 epochs, nothing trained")
    else:
        print(f"{format_omega(cfg.omega)}: epoch {last.epoch} src_acc={last.source_accuracy:.4f} "
              f"tgt_acc={last.target_accuracy:.4f} omega={last.omega:.4f}")
    return 0


def _tasks(s) -> List[Task]:
    if s["scenario"] is None:
        return list(DEFAULT_TASKS)
    return [Task(s["scenario"], s["magnitude"])]


def cmd_strategy(strategy: str):
    def run(args, s) -> int:
        if strategy == "random" and args.t is not None:
            s = dict(s, t=args.t)
        if s["scenario"] == "mixed":
            raise ValueError("strategy runs support marginal and conditional tasks")
        cfg = ExperimentConfig(
            train=train_config(s), out=Path(s["out"]), tasks=_tasks(s), repeats=s["repeats"],
            t=s["t"], n=s["n"], wall_clock=s["wall_clock"],
        )
        exp = Experiment(cfg)
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "config.txt").write_text(format_config(s))
        for task in cfg.tasks:
            r = exp.run_strategy(strategy, task)
            err = "n/a" if r.omega_error is None else f"{r.omega_error:.2f}"
            print(f"{task.name} {strategy}: mean_acc={r.mean_accuracy:.4f} std={r.std:.4f} omega_error={err}")
        return 0

    return run


def cmd_report(args, s) -> int:
    rep = report(s["out"])
    for p in rep.summaries:
        print(f"wrote {p}")
    if rep.missing:
        print(f"missing {len(rep.missing)} run files:", file=sys.stderr)
        for m in rep.missing:
            print(f"  {m}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--scenario", choices=("marginal", "conditional", "mixed"))
    common.add_argument("--magnitude", type=float)
    common.add_argument("--conditional-magnitude", dest="conditional_magnitude", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lambda", dest="lambda", type=float)
    common.add_argument("--omega", help="dynamic | fixed:<v>")
    common.add_argument("--repeats", type=int, help="seeds per task")
    common.add_argument("--n", type=int, help="samples per domain")
    common.add_argument("--classes", type=int)
    common.add_argument("--dim", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="daan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write a synthetic dataset").set_defaults(func=cmd_gen)
    p = sub.add_parser("train", parents=[common], help="single fit")
    p.add_argument("--data", help="dataset directory written by 'gen'")
    p.set_defaults(func=cmd_train)
    sub.add_parser("grid", parents=[common], help="grid search over fixed omega").set_defaults(
        func=cmd_strategy("grid"))
    p = sub.add_parser("random", parents=[common], help="random guessing of omega")
    p.add_argument("--t", type=int, help="draws per seed (default 20)")
    p.set_defaults(func=cmd_strategy("random"))
    sub.add_parser("avg", parents=[common], help="average search").set_defaults(func=cmd_strategy("average"))
    sub.add_parser("dynamic", parents=[common], help="dynamic omega").set_defaults(func=cmd_strategy("dynamic"))
    sub.add_parser("report", parents=[common], help="summarise results").set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args, resolve(args))
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"daan {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
