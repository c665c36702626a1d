"""Command-line driver: data sampling, training, evaluation, grammars and analysis."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import grammar as gr
from .languages import LanguageSpec, make_splits, read_dataset, write_dataset
from .training import (METRIC_FIELDS, ConfigError, DataConfig, ExperimentConfig, build_splits, evaluate,
                       evaluate_by_length, load_checkpoint, load_config, run_restarts, save_checkpoint,
                       with_overrides)

log = logging.getLogger("nstack")

SPLITS = ("train", "valid", "test")
PCFG_NOTE = "PCFG rule probabilities are a documented stand-in (S -> (i S )i S with p/k, S -> eps with 1-p)"


class CliError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for r in rows:
            f.write("\t".join(_cell(r[h]) for h in header) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _load_splits(cfg: ExperimentConfig, data_dir: str | None):
    if data_dir is None:
        return build_splits(cfg)
    splits = {s: read_dataset(Path(data_dir) / f"{s}.txt") for s in SPLITS}
    for s, d in splits.items():
        if d.spec.language != cfg.language.language or d.spec.k != cfg.language.k:
            raise CliError(f"{data_dir}/{s}.txt holds {d.spec.language} (k={d.spec.k}), "
                           f"config expects {cfg.language.language} (k={cfg.language.k})")
    return splits


def _language_note(spec: LanguageSpec) -> dict:
    return {"pcfg_parameters": PCFG_NOTE} if spec.mode == "pcfg" else {}


def _tokens(w: str, alphabet) -> tuple[str, ...]:
    return gr.tokenize(w, alphabet)


# ---------------------------------------------------------------- subcommands

def cmd_sample_data(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        spec, data = cfg.language, cfg.data
        seed = cfg.seed if args.seed is None else args.seed
    else:
        if not args.lang:
            raise CliError("sample-data needs --lang or --config")
        spec = LanguageSpec(args.lang, args.k, tuple(args.window), args.mode)
        data = DataConfig()
        seed = 1 if args.seed is None else args.seed
    data = replace(data, **{k: v for k, v in (("train", args.train), ("valid", args.valid),
                                              ("test_per_length", args.test_per_length)) if v is not None})
    if args.test_lengths:
        data = replace(data, test_lengths=tuple(args.test_lengths))
    out = _out_dir(args)
    splits = make_splits(spec, seed, data.train, data.valid, data.test_lengths, data.test_per_length)
    for name, d in splits.items():
        d.meta.update(_language_note(spec))
        write_dataset(out / f"{name}.txt", d)
        print(f"{name}\t{len(d)}\t{out / (name + '.txt')}")
    return 0


def cmd_train(args) -> int:
    cfg = with_overrides(load_config(args.config), args.seed, args.restarts)
    tc = cfg.train
    if args.max_epochs is not None:
        tc = replace(tc, max_epochs=args.max_epochs)
    if args.time_limit is not None:
        tc = replace(tc, time_limit=args.time_limit)
    cfg = replace(cfg, train=tc)
    out = _out_dir(args)
    splits = _load_splits(cfg, args.data_dir)

    def on_epoch(row):
        log.info("restart %d epoch %d: valid diff %.4f (lr %.2e, %.0fs)", row["restart"], row["epoch"],
                 row["valid_cross_entropy_diff"], row["lr"], row["seconds"])

    best, results = run_restarts(cfg, splits, args.workers, on_epoch)
    metrics = [m for r in results for m in r.metrics]
    _write_rows(out / "metrics.tsv", METRIC_FIELDS, metrics)
    restarts = [{"restart": r.checkpoint.restart, "seed": r.checkpoint.seed, "lr": r.lr, "epochs": len(r.metrics),
                 "best_epoch": r.checkpoint.epoch,
                 "best_valid_cross_entropy_diff": r.checkpoint.best_valid, "failed": int(r.failed),
                 "reason": r.reason or "-"} for r in results]
    _write_rows(out / "restarts.tsv", list(restarts[0]) if restarts else ["restart"], restarts)
    from .plotting import plot_validation_curves
    plot_validation_curves(metrics, out / "metrics.png", cfg.model.label + " / " + cfg.language.language)
    summary = {"config": cfg.to_json(), "failed_restarts": sum(r.failed for r in results),
               **_language_note(cfg.language)}
    if best is None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        raise CliError("every restart failed; no checkpoint written")
    save_checkpoint(out / "checkpoint.bin", best.checkpoint)
    summary.update(best_restart=best.checkpoint.restart, best_epoch=best.checkpoint.epoch,
                   best_valid_cross_entropy_diff=best.checkpoint.best_valid)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"best restart {best.checkpoint.restart}: validation cross-entropy diff "
          f"{best.checkpoint.best_valid:.6f} at epoch {best.checkpoint.epoch}")
    return 0


def _checkpoint(args):
    path = Path(args.checkpoint) if args.checkpoint else Path(args.out_dir) / "checkpoint.bin"
    if not path.exists():
        raise CliError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_evaluate(args) -> int:
    ck = _checkpoint(args)
    cfg = ck.config if args.seed is None else replace(ck.config, seed=args.seed)
    out = _out_dir(args)
    splits = _load_splits(cfg, args.data_dir)
    model = ck.model()
    rows = evaluate_by_length(model, ck.params, splits["test"], cfg.train.eval_batch_size)
    header = ["length", "count", "cross_entropy", "true_cross_entropy", "cross_entropy_diff"]
    _write_rows(out / "test_by_length.tsv", header, rows)
    from .plotting import plot_by_length
    plot_by_length(rows, out / "test_by_length.png", cfg.model.label + " / " + cfg.language.language)
    ev = evaluate(model, ck.params, splits["valid"], cfg.train.eval_batch_size)
    print(f"validation cross-entropy diff {ev.cross_entropy_diff:.6f}")
    for r in rows:
        print(f"{r['length']}\t{r['cross_entropy_diff']:.6f}")
    return 0


def _load_machine(args):
    if args.pda:
        return [gr.parse_pda(Path(p).read_text()) for p in args.pda]
    grammars = [gr.fixture(n) for n in (args.fixture or [])]
    grammars += [gr.parse_grammar(Path(p).read_text()) for p in (args.grammar or [])]
    if not grammars:
        raise CliError("give --fixture, --grammar or --pda")
    return [gr.compile_grammar(g, trap=not getattr(args, "no_trap", False)) for g in grammars]


def cmd_compile_grammar(args) -> int:
    pdas = _load_machine(args)
    if len(pdas) != 1:
        raise CliError("compile-grammar takes exactly one grammar")
    text = gr.format_pda(pdas[0])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_recognize(args) -> int:
    pdas = _load_machine(args)
    strings = list(args.strings)
    if args.input:
        strings += [line.rstrip("\n") for line in open(args.input, encoding="utf-8")]
    for w in strings:
        ok = gr.recognize(pdas[0], w) if len(pdas) == 1 else gr.recognize_intersection(pdas, w)
        print(f"{'accept' if ok else 'reject'}\t{w}")
    return 0


def _analysis_strings(ck, args, n):
    from .languages import TrueDistribution
    if args.strings:
        return [_tokens(w, ck.alphabet) for w in args.strings]
    dist = TrueDistribution(ck.config.language)
    rng = np.random.default_rng(ck.config.seed if args.seed is None else args.seed)
    return [dist.sample(rng) for _ in range(n)]


def cmd_analyze_readings(args) -> int:
    from .analysis import collect_readings, pca_2d
    from .plotting import plot_pca
    ck = _checkpoint(args)
    model = ck.model()
    strings = _analysis_strings(ck, args, args.samples)
    points, labels = collect_readings(model, ck.params, strings)
    proj = pca_2d(points)
    out = _out_dir(args)
    rows = [{"pc1": p[0], "pc2": p[1], "label": lab} for p, lab in zip(proj.points, labels)]
    _write_rows(out / "readings_pca.tsv", ["pc1", "pc2", "label"], rows)
    plot_pca(proj.points, labels, out / "readings_pca.png", model.config.label)
    print(f"{len(rows)} readings; variance along PC1, PC2: {proj.variance[0]:.4g}, {proj.variance[1]:.4g}")
    return 0


def cmd_export_heatmap(args) -> int:
    from .analysis import reading_columns, reading_matrix
    from .plotting import plot_heatmap
    ck = _checkpoint(args)
    model = ck.model()
    if model.config.kind == "lstm":
        raise CliError("the model has no stack, so there is nothing to plot")
    w = _analysis_strings(ck, args, 1)[0]
    M = reading_matrix(model, ck.params, w)
    cols = reading_columns(model)
    out = _out_dir(args)
    # row t holds r_t, computed after reading symbol t (1-based); r_0 is the initial reading
    syms = ["<init>"] + list(w[:len(M) - 1])
    rows = [{"t": t, "symbol": syms[t], **dict(zip(cols, M[t]))} for t in range(len(M))]
    _write_rows(out / "heatmap.tsv", ["t", "symbol"] + cols, rows)
    plot_heatmap(M, syms, cols, out / "heatmap.png", model.config.label)
    print(f"{len(rows)} timesteps x {len(cols)} reading entries -> {out / 'heatmap.tsv'}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nstack", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="."):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="override the experiment seed")
        sp.add_argument("--out-dir", default=out_default, help="output directory (default: %(default)s)")

    sp = sub.add_parser("sample-data", help="write seeded train/valid/test files")
    common(sp, "data")
    sp.add_argument("--lang", help="language name, e.g. w-hash-w, dyck, marked-reverse")
    sp.add_argument("--k", type=int, help="alphabet parameter for dyck / marked-reverse / unmarked-reverse")
    sp.add_argument("--window", type=int, nargs=2, default=(40, 80), metavar=("LO", "HI"))
    sp.add_argument("--mode", choices=("uniform", "pcfg"), default="uniform")
    sp.add_argument("--train", type=int)
    sp.add_argument("--valid", type=int)
    sp.add_argument("--test-per-length", type=int)
    sp.add_argument("--test-lengths", type=int, nargs=2, metavar=("LO", "HI"))
    sp.set_defaults(func=cmd_sample_data)

    sp = sub.add_parser("train", help="train with random restarts and keep the best checkpoint")
    common(sp, "run")
    sp.add_argument("--restarts", type=int, help="override the restart count")
    sp.add_argument("--data-dir", help="read train/valid/test.txt instead of sampling")
    sp.add_argument("--max-epochs", type=int)
    sp.add_argument("--time-limit", type=float, help="seconds per restart")
    sp.add_argument("--workers", type=int, help="parallel restarts (default: $NSTACK_THREADS or 1)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="per-length test cross-entropy difference")
    common(sp, "run")
    sp.add_argument("--checkpoint", help="default: <out-dir>/checkpoint.bin")
    sp.add_argument("--data-dir")
    sp.set_defaults(func=cmd_evaluate)

    for name, fn, hlp in (("compile-grammar", cmd_compile_grammar, "compile a CFG into a restricted PDA"),
                          ("recognize", cmd_recognize, "accept/reject strings (several machines: intersection)")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--fixture", action="append", help=f"built-in grammar: {', '.join(sorted(gr.FIXTURES))}")
        sp.add_argument("--grammar", action="append", help="grammar file")
        sp.add_argument("--no-trap", action="store_true", help="omit the trap state")
        sp.set_defaults(func=fn)
    sub.choices["compile-grammar"].add_argument("--out", help="output file (default: stdout)")
    rec = sub.choices["recognize"]
    rec.add_argument("--pda", action="append", help="PDA file written by compile-grammar")
    rec.add_argument("--input", help="file with one string per line")
    rec.add_argument("strings", nargs="*")
    sub.choices["compile-grammar"].set_defaults(pda=None)

    for name, fn, hlp in (("analyze-readings", cmd_analyze_readings, "PCA of stack readings"),
                          ("export-heatmap", cmd_export_heatmap, "stack readings over time as TSV")):
        sp = sub.add_parser(name, help=hlp)
        common(sp, "run")
        sp.add_argument("--checkpoint", help="default: <out-dir>/checkpoint.bin")
        sp.add_argument("--samples", type=int, default=100, help="strings to sample (default: %(default)s)")
        sp.add_argument("strings", nargs="*", help="use these strings instead of sampling")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (CliError, gr.GrammarError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
