"""Command-line surface for the whole lab.

Subcommands: gen-data, train, eval, intervene, attention, ablate-gaze,
compare, plot. Every run writes a manifest (config + seed + format
version) next to its outputs so it can be reproduced bit-for-bit. The
GABRIL_OUT_DIR environment variable, when set, prefixes relative output
paths.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import envsim, evaluator, io as gio, trainer
from .envsim import EnvConfig, RenderConfig
from .errors import GabrilError
from .gaze import MaskParams, mask_sequence
from .model import ModelConfig

GAZE_FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def _out(path: str) -> str:
    base = os.environ.get("GABRIL_OUT_DIR")
    if base and not os.path.isabs(path):
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, path)
    return path


def _manifest(path: str, args: argparse.Namespace, extra: dict | None = None):
    payload = {"command": args.command,
               "args": {k: v for k, v in vars(args).items() if k != "func"}}
    if extra:
        payload.update(extra)
    gio.write_manifest(path, payload)


def _env_config(args) -> EnvConfig:
    return EnvConfig(
        render=RenderConfig(confounded=args.confounded,
                            noise_level=args.noise,
                            contrast_min=args.contrast_min),
        episode_length=args.episode_length,
        ttl_min=args.ttl_min,
        ttl_max=args.ttl_max,
        distraction_prob=args.distraction_prob,
    )


def cmd_gen_data(args) -> int:
    cfg = _env_config(args)
    records = envsim.collect(cfg, args.episodes, args.seed)
    out = _out(args.out)
    gio.save_dataset(records, cfg.to_dict(), out)
    _manifest(out + ".manifest.json", args,
              {"episodes": len(records),
               "frames": sum(len(r) for r in records),
               "shortcut_strength": envsim.shortcut_strength(records)})
    print(f"wrote {out} episodes={len(records)}")
    return 0


def _mask_params(args) -> MaskParams:
    return MaskParams(alpha=args.alpha, beta=args.beta,
                      gamma=args.gamma, k=args.k)


def _train_config(args, env_cfg: EnvConfig) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        seed=args.seed,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        lam=getattr(args, "lam"),
        gaze_fraction=args.gaze_fraction,
        mask_params=_mask_params(args),
        model=ModelConfig(temperature=args.temperature),
        env=env_cfg,
    )


def cmd_train(args) -> int:
    records, env_dict, _ = gio.load_dataset(args.data)
    config = _train_config(args, EnvConfig.from_dict(env_dict))
    out = _out(args.out)
    _, metrics = trainer.train(config, records, checkpoint_path=out,
                               verbose=not args.quiet)
    metrics_path = _out(args.metrics)
    with open(metrics_path, "w") as f:
        json.dump({"steps": metrics.steps, "evals": metrics.evals}, f)
    _manifest(out + ".manifest.json", args, {"config": config.to_dict()})
    print(f"wrote {out} and {metrics_path} steps={len(metrics.steps)}")
    return 0


def cmd_eval(args) -> int:
    model, tc = gio.load_policy(args.checkpoint)
    report = evaluator.rollout(model, tc.env, args.episodes, args.seed,
                               variant=args.variant)
    out = _out(args.out)
    with open(out, "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    _manifest(out + ".manifest.json", args)
    print(f"variant={report.variant} mean_return={report.mean_return:.3f} "
          f"std={report.std:.3f} episodes={report.episode_count}")
    return 0


def cmd_intervene(args) -> int:
    model, tc = gio.load_policy(args.checkpoint)
    report = evaluator.intervention_sensitivity(model, tc.env, args.probes,
                                                args.seed)
    out = _out(args.out)
    with open(out, "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    _manifest(out + ".manifest.json", args)
    print(f"mean_tv={report.mean_tv:.4f} max_tv={report.max_tv:.4f} "
          f"probes={report.n_probe_states}")
    return 0


def cmd_attention(args) -> int:
    model, tc = gio.load_policy(args.checkpoint)
    records, _, _ = gio.load_dataset(args.data)
    os.makedirs(_out(args.outdir), exist_ok=True)
    rng = np.random.default_rng(args.seed)
    dims = (tc.model.height, tc.model.width)
    for i in range(args.frames):
        rec = records[int(rng.integers(len(records)))]
        t = int(rng.integers(len(rec)))
        obs = np.asarray(rec.observations[t], dtype=np.float64)
        masks = mask_sequence(rec.gaze, tc.mask_params, dims)
        attn = model.attention_map(obs, smoothing_sigma=args.sigma)
        base = os.path.join(_out(args.outdir), f"frame{i:04d}")
        gio.export_pgm(obs[0], base + "_obs.pgm")
        gio.export_pgm(masks[t], base + "_gaze.pgm")
        gio.export_pgm(attn, base + "_attn.pgm")
    _manifest(os.path.join(_out(args.outdir), "manifest.json"), args)
    print(f"wrote {args.frames} PGM triplets to {_out(args.outdir)}")
    return 0


def cmd_ablate_gaze(args) -> int:
    records, env_dict, _ = gio.load_dataset(args.data)
    env_cfg = EnvConfig.from_dict(env_dict)
    results = []
    for fraction in GAZE_FRACTIONS:
        config = dataclasses.replace(_train_config(args, env_cfg),
                                     gaze_fraction=fraction)
        model, _ = trainer.train(config, records)
        report = evaluator.rollout(model, env_cfg, args.eval_episodes,
                                   args.seed, variant=args.variant)
        results.append({"gaze_fraction": fraction,
                        "mean_return": report.mean_return,
                        "std": report.std})
        print(f"gaze_fraction={fraction} mean_return={report.mean_return:.3f}")
    out = _out(args.out)
    with open(out, "w") as f:
        json.dump(results, f, indent=2)
    _manifest(out + ".manifest.json", args)
    return 0


def cmd_compare(args) -> int:
    with open(args.scores) as f:
        manifests = json.load(f)
    table, record = evaluator.compare(manifests)
    print(table)
    if args.out:
        out = _out(args.out)
        with open(out, "w") as f:
            json.dump(record, f, indent=2)
        _manifest(out + ".manifest.json", args)
    return 0


def cmd_plot(args) -> int:
    out = _out(args.out)
    if args.kind == "loss":
        with open(args.input) as f:
            metrics = json.load(f)
        steps = metrics["steps"]
        series = {
            "l_bc": ([s[0] for s in steps], [s[1] for s in steps]),
            "l_gp": ([s[0] for s in steps], [s[2] for s in steps]),
            "l_total": ([s[0] for s in steps], [s[3] for s in steps]),
        }
        gio.plot_svg(series, out, title="training losses",
                     xlabel="step", ylabel="loss")
    else:
        with open(args.input) as f:
            results = json.load(f)
        series = {"mean return": ([r["gaze_fraction"] for r in results],
                                  [r["mean_return"] for r in results])}
        gio.plot_svg(series, out, title="gaze-fraction ablation",
                     xlabel="gaze fraction", ylabel="mean return")
    print(f"wrote {out}")
    return 0


def _add_env_args(p):
    p.add_argument("--confounded", action="store_true")
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--contrast-min", type=float, default=1.0,
                   help="per-frame glyph brightness is drawn from [this, 1]")
    p.add_argument("--episode-length", type=int, default=64)
    p.add_argument("--ttl-min", type=int, default=6)
    p.add_argument("--ttl-max", type=int, default=12)
    p.add_argument("--distraction-prob", type=float, default=0.0)


def _add_train_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--gaze-fraction", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--beta", type=float, default=0.99)
    p.add_argument("--gamma", type=float, default=3.0)
    p.add_argument("-k", "--k", type=int, default=7)
    p.add_argument("--temperature", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gabril",
        description="gaze-regularized imitation learning lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="collect expert demonstrations")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _add_env_args(p)
    p.add_argument("--out", default="dataset.gbrl")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a policy on a dataset")
    p.add_argument("--data", required=True)
    _add_train_args(p)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", default="policy.gbck")
    p.add_argument("--metrics", default="metrics.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop rollout scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=evaluator.VARIANTS, default="normal")
    p.add_argument("--out", default="score.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("intervene", help="confounder intervention sensitivity")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="intervention.json")
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("attention", help="export observation/gaze/attention PGM triplets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=1.5)
    p.add_argument("--outdir", default="attention")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("ablate-gaze", help="sweep the gaze-data fraction")
    p.add_argument("--data", required=True)
    _add_train_args(p)
    p.add_argument("--eval-episodes", type=int, default=100)
    p.add_argument("--variant", choices=evaluator.VARIANTS,
                   default="confounded-shifted")
    p.add_argument("--out", default="ablation.json")
    p.set_defaults(func=cmd_ablate_gaze)

    p = sub.add_parser("compare", help="advantage-over-baseline table")
    p.add_argument("--scores", required=True,
                   help="JSON list of {method, environment, score}")
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="SVG charts from metrics or ablations")
    p.add_argument("--kind", choices=("loss", "ablation"), default="loss")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default="plot.svg")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return args.func(args)
    except OSError as e:
        print(f"io error: {e.filename or ''}: {e}", file=sys.stderr)
        return 1
    except GabrilError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
