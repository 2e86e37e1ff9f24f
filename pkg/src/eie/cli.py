"""Command-line entry point: ``eie {synth,train,generate,eval,gradcheck,sweep}``.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 data mismatch, 5 numeric failure.
Settings resolve as command-line flags, then ``--config`` JSON, then built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import gradcheck as gc
from .checkpoint import CheckpointError, load_checkpoint
from .data import SCHEMA, SCHEMA_VERSION, DatasetError, SyntheticGenConfig, load_dataset, save_dataset, split_dataset, synth_generate
from .decoding import DecodeConfig, generate_corpus, read_jsonl, write_jsonl
from .experiments import train_and_evaluate
from .metrics import MetricReport, evaluate
from .model import Guidance, Variant
from .plots import line_plot
from .tensor import NumericError, precision
from .training import TrainingConfig, train_loop

log = logging.getLogger("eie")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4, 5

TRAIN_DEFAULTS = TrainingConfig()
MODEL_KEYS = ("hidden_dim", "num_heads", "egdcm_layers", "generator_layers", "max_text_len", "ffn_multiplier")


class UsageError(Exception):
    pass


class DataMismatch(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _write_manifest(out: Path, command: str, config: dict, files) -> Path:
    manifest = {
        "command": command, "version": __version__, "config": config,
        "files": sorted(str(Path(f).relative_to(out)) for f in files),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise OSError(f"cannot read config {path}: {err.strerror}") from err
    except json.JSONDecodeError as err:
        raise UsageError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return cfg


def _load(path: str):
    try:
        return load_dataset(path)
    except FileNotFoundError as err:
        raise OSError(f"cannot read dataset {path}: {err.strerror or err}") from err


def _float_list(text: str) -> list[str]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if not vals:
        raise UsageError("--values needs at least one value")
    return vals


# ---------------------------------------------------------------- training config resolution

def resolve_training(args, file_cfg: dict) -> tuple[TrainingConfig, dict]:
    """Merge flags over the config file over defaults and check that the options fit the variant."""
    tfile = dict(file_cfg.get("training", {}))
    mfile = dict(file_cfg.get("model", {}))

    def pick(flag, key):
        v = getattr(args, flag, None)
        if v is not None:
            return v, "flag"
        if key in tfile:
            return tfile[key], "config"
        return None, None

    variant = Variant(pick("variant", "variant")[0] or TRAIN_DEFAULTS.variant.value)
    guidance, gsrc = pick("guidance", "guidance")
    alpha, asrc = pick("alpha", "alpha")
    beta, bsrc = pick("beta", "beta")
    if guidance is not None and not variant.uses_guidance:
        raise UsageError(f"--guidance {guidance}: {variant.value} consumes no guidance")
    if beta is not None and variant is not Variant.LIGHT:
        raise UsageError(f"--beta only applies to eie-light (got --variant {variant.value})")
    if alpha is not None and not variant.uses_mem:
        raise UsageError(f"--alpha only applies to variants with masked entity modeling (got {variant.value})")
    kw = {
        "variant": variant,
        "guidance": guidance if guidance is not None else TRAIN_DEFAULTS.guidance,
        "alpha": alpha if alpha is not None else TRAIN_DEFAULTS.alpha,
        "beta": beta if beta is not None else TRAIN_DEFAULTS.beta,
    }
    for flag, key in (("lr", "lr"), ("iters", "total_iterations"), ("batch", "batch_size"), ("seed", "seed"),
                      ("mask_rate", "mask_rate"), ("checkpoint_every", "checkpoint_every")):
        v, _ = pick(flag, key)
        if v is not None:
            kw[key] = v
    try:
        Guidance.parse(str(kw["guidance"]))
        cfg = TrainingConfig(**kw)
    except ValueError as err:
        raise UsageError(str(err)) from err
    model = {k: mfile[k] for k in MODEL_KEYS if k in mfile}
    for k in MODEL_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            model[k] = v
    return cfg, model


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if not 0.0 <= args.informativeness <= 1.0:
        raise UsageError("--informativeness must lie in [0, 1]")
    if args.guidance_dim not in (5, 14):
        raise UsageError("--guidance-dim must be 5 or 14")
    cfg = SyntheticGenConfig(num_records=args.n, guidance_dim=args.guidance_dim, feature_dim=args.feature_dim,
                             image_tokens=args.image_tokens, noise=args.noise, signal=args.signal,
                             informativeness=args.informativeness, grammar_seed=args.grammar_seed)
    ds = synth_generate(cfg, seed=args.seed)
    out = Path(args.out)
    path = save_dataset(ds, out / "dataset.jsonl")
    files = [path, *sorted((out / "features").glob("*.eiet"))]
    config = {**vars(cfg), "seed": args.seed}
    _write_manifest(out, "synth", config, files)
    print(f"wrote {len(ds)} records ({SCHEMA} v{SCHEMA_VERSION}, guidance_dim={ds.guidance_dim}) to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, model = resolve_training(args, _read_config(args.config))
    ds = _load(args.data)
    out = Path(args.out)
    every = max(1, cfg.total_iterations // 10)

    def progress(it, res):
        if it % every == 0 or it == cfg.total_iterations:
            log.info("iter %d loss %.4f branch %s", it, res.loss, res.branch.value)

    res = train_loop(ds, cfg, out_dir=out, model_overrides=model, resume=args.resume, progress=progress)
    its = [h[0] for h in res.history]
    losses = [h[1] for h in res.history]
    plot = line_plot({"loss": (its, losses)}, out / "loss.svg", title=f"{cfg.variant.value} training loss",
                     xlabel="iteration", ylabel="masked-token cross-entropy")
    files = [out / "loss.csv", plot, *sorted(p for p in (out / "checkpoint").rglob("*") if p.is_file())]
    files += sorted(p for p in (out / "checkpoints").rglob("*") if p.is_file())
    _write_manifest(out, "train", {"training": cfg.to_dict(), "model": res.model_cfg.to_dict(),
                                   "data": str(args.data), "resume": args.resume}, files)
    final = losses[-1] if losses else float("nan")
    print(f"trained {cfg.variant.value} for {cfg.total_iterations} iterations; final loss {final:.4f}; "
          f"checkpoint at {out / 'checkpoint'}")
    return EXIT_OK


def _checkpoint_guidance(ck, override: str | None) -> Guidance:
    train_cfg = ck.train_cfg or {}
    variant = Variant(train_cfg.get("variant", Variant.ALL.value))
    trained = Guidance.parse(train_cfg.get("guidance", "soft"))
    if override is not None:
        g = Guidance.parse(override)
        if g.mode != "off" and variant.inference_guidance(g).mode == "off":
            raise UsageError(f"--guidance {override}: a {variant.value} checkpoint decodes without guidance")
        return g
    return variant.inference_guidance(trained)


def _decode_rows(ckpt: str, data: str, args) -> tuple[list[dict], list, DecodeConfig]:
    try:
        ck = load_checkpoint(ckpt)
    except CheckpointError as err:
        if "cannot read" in str(err):
            raise OSError(str(err)) from err
        raise
    ds = _load(data)
    want = (ck.model_cfg.image_tokens_per_xray, ck.model_cfg.feature_dim)
    if ds.feature_shape != want or ds.guidance_dim != ck.model_cfg.guidance_dim:
        raise DataMismatch(f"dataset features {ds.feature_shape} / guidance {ds.guidance_dim} do not match "
                           f"checkpoint {want} / {ck.model_cfg.guidance_dim}")
    dcfg = DecodeConfig(strategy=args.strategy, beam_width=args.beam_width, max_len=args.max_len,
                        guidance=_checkpoint_guidance(ck, args.guidance))
    rows, failures = generate_corpus(ds.records, ck.params, ck.model_cfg, ck.vocab, dcfg)
    return rows, failures, dcfg


def cmd_generate(args) -> int:
    try:
        DecodeConfig(strategy=args.strategy, beam_width=args.beam_width)
    except ValueError as err:
        raise UsageError(str(err)) from err
    rows, failures, dcfg = _decode_rows(args.ckpt, args.data, args)
    out = Path(args.out)
    path = write_jsonl(rows, out / "hypotheses.jsonl")
    _write_manifest(out, "generate", {"checkpoint": str(args.ckpt), "data": str(args.data),
                                      "strategy": dcfg.strategy, "beam_width": dcfg.beam_width,
                                      "max_len": dcfg.max_len, "guidance": str(dcfg.guidance)}, [path])
    print(f"generated {len(rows)} summaries to {path}")
    if failures:
        print(f"{len(failures)} records failed; see log", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _pairs_from_files(hyp_path: str, ref_path: str | None) -> tuple[list[str], list[str]]:
    try:
        hyp = read_jsonl(hyp_path)
        ref = read_jsonl(ref_path) if ref_path else None
    except FileNotFoundError as err:
        raise OSError(f"cannot read {err.filename}") from err
    except ValueError as err:
        raise DataMismatch(str(err)) from err
    if ref is None:
        try:
            return [r["hypothesis"] for r in hyp], [r["reference"] for r in hyp]
        except KeyError as err:
            raise DataMismatch(f"{hyp_path}: rows need 'hypothesis' and 'reference' (missing {err})") from err
    if len(hyp) != len(ref):
        raise DataMismatch(f"corpus sizes differ: {len(hyp)} hypotheses vs {len(ref)} references")
    by_id = {r.get("id"): r.get("reference", r.get("summary")) for r in ref}
    refs = []
    for r in hyp:
        if r.get("id") not in by_id or by_id[r.get("id")] is None:
            raise DataMismatch(f"no reference for id {r.get('id')!r}")
        refs.append(by_id[r.get("id")])
    return [r["hypothesis"] for r in hyp], refs


def cmd_eval(args) -> int:
    if args.hyp_jsonl is None and (args.ckpt is None or args.data is None):
        raise UsageError("give --hyp-jsonl, or both --ckpt and --data")
    if args.hyp_jsonl is not None and args.ckpt is not None:
        raise UsageError("--hyp-jsonl and --ckpt are mutually exclusive")
    if args.hyp_jsonl is not None:
        hyps, refs = _pairs_from_files(args.hyp_jsonl, args.ref_jsonl)
    else:
        rows, failures, _ = _decode_rows(args.ckpt, args.data, args)
        if failures:
            raise DataMismatch(f"{len(failures)} records failed to decode")
        hyps, refs = [r["hypothesis"] for r in rows], [r["reference"] for r in rows]
    if not hyps:
        raise DataMismatch("empty corpus")
    report = evaluate(hyps, refs)
    print(report.table())
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = tuple(range(args.seed, args.seed + args.num_seeds))
    dtype = np.float32 if args.dtype == "float32" else np.float64
    with precision(dtype):
        outcomes = gc.run_suite(seeds=seeds, eps=args.eps, model=not args.skip_model)
    worst: dict[str, gc.CaseOutcome] = {}
    for o in outcomes:
        if o.name not in worst or o.result.max_rel_error > worst[o.name].result.max_rel_error:
            worst[o.name] = o
    failed = [o for o in worst.values() if not o.passed]
    for name, o in worst.items():
        status = "ok  " if o.passed else "FAIL"
        print(f"{status} {name:<42} max rel err {o.result.max_rel_error:.2e} (tol {o.tolerance:g})")
    if failed:
        bad = max(failed, key=lambda o: o.result.max_rel_error)
        r = bad.result
        print(f"gradient check failed for {len(failed)} op(s); worst: {bad.name} seed {bad.seed} at {r.worst_index} "
              f"analytic {r.analytic:.6g} vs numeric {r.numeric:.6g}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(worst)} checks passed over seeds {list(seeds)} at eps={args.eps:g}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep

SWEEP_VARIANT = {"alpha": Variant.ALL, "beta": Variant.LIGHT, "threshold": Variant.ESG}


def _sweep_cfg(param: str, value: str, base: TrainingConfig) -> TrainingConfig:
    kw = base.to_dict()
    if param == "threshold":
        kw["guidance"] = "soft" if value == "soft" else f"hard:{float(value):g}"
    else:
        kw[param] = float(value)
    if param == "beta" or (param == "alpha" and not Variant(kw["variant"]).uses_mem):
        kw["variant"] = SWEEP_VARIANT[param].value
    if param == "threshold" and not Variant(kw["variant"]).uses_guidance:
        kw["variant"] = SWEEP_VARIANT[param].value
    return TrainingConfig(**kw)


def _sweep_one(job):
    param, value, base, data, holdout, model = job
    cfg = _sweep_cfg(param, value, base)
    ds = load_dataset(data)
    train, test = split_dataset(ds, holdout)
    try:
        return value, train_and_evaluate(train, test, cfg, model).report.to_dict(), None
    except (NumericError, FloatingPointError) as err:
        return value, None, ("numeric", str(err))
    except (ValueError, OSError) as err:
        return value, None, ("data", str(err))


def cmd_sweep(args) -> int:
    file_cfg = _read_config(args.base_config)
    base, model = resolve_training(args, file_cfg)
    values = _float_list(args.values)
    for v in values:
        if not (args.param == "threshold" and v == "soft"):
            try:
                float(v)
            except ValueError as err:
                raise UsageError(f"--values: {v!r} is not a number") from err
    try:
        for v in values:
            _sweep_cfg(args.param, v, base)
    except ValueError as err:
        raise UsageError(str(err)) from err
    jobs = [(args.param, v, base, args.data, args.holdout, model) for v in values]
    _load(args.data)  # fail early on unreadable data
    if args.parallel > 1:
        with ProcessPoolExecutor(args.parallel) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"sweep_{args.param}.csv"
    keys = MetricReport.KEYS
    code = EXIT_OK
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([args.param, *keys, "error"])
        for value, report, err in results:
            if report is None:
                log.error("%s=%s failed: %s", args.param, value, err[1])
                code = max(code, EXIT_NUMERIC if err[0] == "numeric" else EXIT_DATA)
                w.writerow([value, *["nan"] * len(keys), err[1]])
            else:
                w.writerow([value, *[repr(report[k]) for k in keys], ""])
    numeric = [(float(v), r["cider"] if r else math.nan) for v, r, _ in results if v != "soft"]
    series = {"CIDEr": ([x for x, _ in numeric], [y for _, y in numeric])}
    soft = [r for v, r, _ in results if v == "soft"]
    if soft and numeric:
        xs = [x for x, _ in numeric]
        y = soft[0]["cider"] if soft[0] else math.nan
        series["soft guidance"] = ([min(xs), max(xs)], [y, y])
    plot = line_plot(series, out / f"sweep_{args.param}.svg", title=f"CIDEr vs {args.param}",
                     xlabel=args.param, ylabel="CIDEr")
    _write_manifest(out, "sweep", {"param": args.param, "values": values, "training": base.to_dict(),
                                   "model": model, "data": str(args.data), "holdout": args.holdout},
                    [csv_path, plot])
    for value, report, err in results:
        shown = f"{report['cider']:.4f}" if report else f"failed ({err[1]})"
        print(f"{args.param}={value}: CIDEr {shown}")
    return code


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_training_flags(p: argparse.ArgumentParser, config_flag: bool = True) -> None:
    d = TRAIN_DEFAULTS
    p.add_argument("--variant", choices=[v.value for v in Variant],
                   help=f"model variant (default: {d.variant.value})")
    p.add_argument("--alpha", type=float, help=f"MEM branch taken iff r > alpha (default: {d.alpha})")
    p.add_argument("--beta", type=float, help=f"eie-light only: guidance kept iff r >= beta (default: {d.beta})")
    p.add_argument("--guidance", help=f"soft or hard:<threshold> (default: {d.guidance})")
    p.add_argument("--lr", type=float, help=f"Adam learning rate (default: {d.lr:g})")
    p.add_argument("--iters", type=int, help=f"training iterations (default: {d.total_iterations})")
    p.add_argument("--batch", type=int, help=f"records per iteration (default: {d.batch_size})")
    p.add_argument("--seed", type=int, help=f"training seed (default: {d.seed})")
    p.add_argument("--mask-rate", type=float, help=f"masking rate (default: {d.mask_rate})")
    p.add_argument("--checkpoint-every", type=int, help=f"periodic checkpoint interval (default: {d.checkpoint_every})")
    p.add_argument("--hidden-dim", type=int, help="model width (default: 512)")
    p.add_argument("--num-heads", type=int, help="attention heads (default: 8)")
    p.add_argument("--egdcm-layers", type=int, help="difference-module layers (default: 2)")
    p.add_argument("--generator-layers", type=int, help="generator layers (default: 3)")
    p.add_argument("--max-text-len", type=int, help="maximum summary words (default: 24)")
    if config_flag:
        p.add_argument("--config", help="JSON config file with 'training' and 'model' sections (default: none)")


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=["greedy", "beam"], default="greedy", help="decoding strategy")
    p.add_argument("--beam-width", type=int, default=3, help="beam width for --strategy beam")
    p.add_argument("--max-len", type=int, default=None, help="cap on generated words (default: the model's max)")
    p.add_argument("--guidance", default=None,
                   help="override inference guidance (soft, off, hard:<t>); default follows the checkpoint variant")


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Append argparse defaults unless the help text already names one or there is none."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.default in (None, False):
            return text
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = _Parser(prog="eie", description="Change summaries for chest X-ray pairs.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset", formatter_class=fmt, parents=[common])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=32, help="number of records")
    p.add_argument("--guidance-dim", type=int, default=5, help="guidance width (5 or 14)")
    p.add_argument("--informativeness", type=float, default=1.0, help="probability guidance tells the truth")
    p.add_argument("--noise", type=float, default=1.0, help="feature noise scale")
    p.add_argument("--signal", type=float, default=1.0, help="planted finding strength")
    p.add_argument("--feature-dim", type=int, default=1024, help="feature width per image token")
    p.add_argument("--image-tokens", type=int, default=49, help="image tokens per X-ray")
    p.add_argument("--grammar-seed", type=int, default=0, help="seed of the fixed planting layout")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model", formatter_class=fmt, parents=[common])
    p.add_argument("--data", required=True, help="dataset directory or JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode summaries with a checkpoint", formatter_class=fmt, parents=[common])
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset directory or JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    _add_decode_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score generated summaries", formatter_class=fmt, parents=[common])
    p.add_argument("--hyp-jsonl", default=None, help="JSONL rows with id, hypothesis and reference")
    p.add_argument("--ref-jsonl", default=None, help="optional JSONL of references joined on id")
    p.add_argument("--ckpt", default=None, help="checkpoint directory (decode --data first)")
    p.add_argument("--data", default=None, help="dataset for --ckpt")
    p.add_argument("--report", default=None, help="write the metric report JSON here")
    _add_decode_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full model", formatter_class=fmt, parents=[common])
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--num-seeds", type=int, default=5, help="number of consecutive seeds")
    p.add_argument("--eps", type=float, default=1e-3, help="central-difference step")
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64", help="precision of the check")
    p.add_argument("--skip-model", action="store_true", help="only check primitive ops")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train and evaluate one run per hyperparameter value", formatter_class=fmt, parents=[common])
    p.add_argument("--param", required=True, choices=["alpha", "beta", "threshold"], help="swept hyperparameter")
    p.add_argument("--values", required=True, help="comma-separated values ('soft' allowed for threshold)")
    p.add_argument("--base-config", default=None, help="JSON config file shared by every run")
    p.add_argument("--data", required=True, help="dataset directory or JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--holdout", type=float, default=0.25, help="fraction of records held out for scoring")
    p.add_argument("--parallel", type=int, default=1, help="worker processes (1 runs sequentially)")
    _add_training_flags(p, config_flag=False)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        print(f"eie {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataMismatch, DatasetError, CheckpointError) as err:
        print(f"eie {args.command}: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as err:
        print(f"eie {args.command}: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as err:
        print(f"eie {args.command}: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"eie {args.command}: data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
