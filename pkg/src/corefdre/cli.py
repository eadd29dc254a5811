"""Command-line entry point: ``corefdre <subcommand> ...``.

Exit codes: 0 success, 1 validation failure (bad or unreadable data),
2 configuration error, 3 runtime failure.

Outputs go under ``--out``::

    checkpoints/   resolver and relation-model checkpoints
    reports/       JSON reports and plots
    graphs/        graph dumps from build-graph
    sidecars/      predicted chain sidecars
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import RunConfig, load_config
from .corpus import dump_sidecar, load_corpus, read_conll, write_atomic
from .errors import ConfigError, CorefDREError, ParseError, SchemaError, UnknownKindError, ValidationError
from .evaluation import (
    ablation_table,
    dumps,
    plot_per_relation,
    plot_slices,
    report_table,
    run_ablation,
    score,
    slice_disagreement,
    slice_inter_intra,
    slice_speakers,
    slice_table,
    stats,
    stats_table,
)

log = logging.getLogger("corefdre")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _cfg(args) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names and v is not None}
    return load_config(args.config, overrides)


def _load(cfg: RunConfig, corpus, chains=None, validate=True):
    return load_corpus(cfg.resolve(corpus), cfg.resolve(chains), validate=validate)


def _sidecars(cfg: RunConfig):
    if cfg.chains is None:
        return None
    merged = {}
    for part in cfg.chains.split(","):
        with open(cfg.resolve(part), encoding="utf-8") as fh:
            merged.update(json.load(fh))
    return merged


def _write_report(cfg: RunConfig, name: str, payload: dict) -> Path:
    path = cfg.out_dir("reports") / name
    write_atomic(path, dumps({"fingerprint": cfg.fingerprint(), **payload}))
    return path


# ------------------------------------------------------------------ subcommands

def cmd_validate(args) -> int:
    cfg = _cfg(args)
    try:
        ds = _load(cfg, args.corpus, args.chains)
    except ValidationError as e:
        rows = [{"dialogue": v.dialogue_id, "chain": v.chain_index, "mention": v.mention_index,
                 "rule": v.rule, "detail": v.detail} for v in e.report]
        for v in e.report:
            print(v)
        print(f"{len(e.report)} violation(s)")
        if args.json:
            write_atomic(args.json, dumps({"valid": False, "violations": rows}))
        return EXIT_INVALID
    print(f"ok: {len(ds)} dialogues, {sum(len(d.chains) for d in ds)} chains, no violations")
    if args.json:
        write_atomic(args.json, dumps({"valid": True, "violations": [], "dialogues": len(ds)}))
    return EXIT_OK


def _splits(cfg: RunConfig, specs):
    if specs:
        out = {}
        for spec in specs:
            name, _, rest = spec.partition("=")
            if not rest:
                raise ConfigError(f"--split expects NAME=CORPUS[:CHAINS], got {spec!r}")
            corpus, _, chains = rest.partition(":")
            out[name] = (corpus, chains or None)
        return out
    return {
        name: (getattr(cfg, name), getattr(cfg, f"{name}_chains"))
        for name in ("train", "dev", "test")
        if getattr(cfg, name)
    }


def cmd_stats(args) -> int:
    cfg = _cfg(args)
    splits = {name: _load(cfg, c, s) for name, (c, s) in _splits(cfg, args.split).items()}
    st = stats(splits)
    print(stats_table(st))
    path = _write_report(cfg, "stats.json", {"stats": st})
    if args.json:
        write_atomic(args.json, dumps(st))
    log.info("wrote %s", path)
    return EXIT_OK


def _find_dialogue(ds, key):
    for i, d in enumerate(ds):
        if d.id == key or str(i) == key:
            return d
    raise ConfigError(f"no dialogue {key!r}")


def cmd_build_graph(args) -> int:
    from .model import build_graphs

    cfg = _cfg(args)
    ds = _load(cfg, args.corpus, cfg.chains)
    d = _find_dialogue(ds, args.dialogue)
    if not 0 <= args.pair < len(d.pairs):
        raise ConfigError(f"{d.id} has {len(d.pairs)} pairs; --pair {args.pair} out of range")
    if cfg.chain_source == "none":
        d = d.without_chains()
    graphs = build_graphs(cfg.recipe, d, d.pairs[args.pair], cfg.strip)
    fp = cfg.fingerprint()
    suffixes = ("mention", "entity") if len(graphs) == 2 else ("",)
    for g, suf in zip(graphs, suffixes):
        blob = g.to_json()
        blob["fingerprint"] = fp
        text = json.dumps(blob, sort_keys=True, indent=1, ensure_ascii=False) + "\n"
        if args.stdout:
            sys.stdout.write(text)
            continue
        name = f"{d.id}.{args.pair}.{cfg.recipe.lower()}{'.' + suf if suf else ''}.json"
        path = cfg.out_dir("graphs") / name
        write_atomic(path, text)
        print(f"{path}: {len(g.nodes)} nodes, {len(g.edges)} edges")
        for w in g.warnings:
            print(f"warning: {w}")
    return EXIT_OK


def cmd_train_coref(args) -> int:
    from .coref import build_resolver, train_resolver

    cfg = _cfg(args)
    ccfg = cfg.coref_config()
    corpus = _load(cfg, cfg.train, cfg.train_chains) if args.regime in ("corpus", "sequential") else []
    conll = []
    if args.regime in ("conll", "sequential"):
        if not args.conll:
            raise ConfigError(f"--regime {args.regime} needs --conll")
        with open(cfg.resolve(args.conll), encoding="utf-8") as fh:
            conll = read_conll(fh)
    if args.regime == "corpus" and not corpus:
        raise ConfigError("--regime corpus needs a training corpus (--train)")
    logged = []

    def log_fn(stage):
        return lambda epoch, loss: logged.append({"stage": stage, "epoch": epoch, "loss": round(loss, 6)})

    if args.regime == "sequential":
        res = build_resolver(conll + corpus, ccfg)
        res = train_resolver(conll, ccfg, log_fn("conll"), resolver=res)
        res = train_resolver(corpus, ccfg, log_fn("corpus"), resolver=res)
    else:
        res = train_resolver(conll or corpus, ccfg, log_fn(args.regime))
    path = cfg.out_dir("checkpoints") / "coref.pt"
    res.save(path)
    _write_report(cfg, "coref_train.json", {"regime": args.regime, "config": ccfg.fingerprint(), "log": logged})
    print(f"saved {path}; final loss {logged[-1]['loss'] if logged else float('nan')}")
    return EXIT_OK


def cmd_predict_coref(args) -> int:
    from .coref import Resolver, predict_corpus

    cfg = _cfg(args)
    res = Resolver.load(cfg.resolve(args.checkpoint))
    ds = _load(cfg, args.corpus, None)
    side = predict_corpus(ds, res)
    path = Path(args.output) if args.output else cfg.out_dir("sidecars") / f"{Path(args.corpus).stem}.pred.json"
    dump_sidecar(side, path)
    print(f"{path}: {sum(len(v) for v in side.values())} chains over {len(side)} dialogues")
    return EXIT_OK


def cmd_train_dre(args) -> int:
    from .model import train_dre

    cfg = _cfg(args)
    if not cfg.train or not cfg.dev:
        raise ConfigError("train-dre needs --train and --dev")
    train = _load(cfg, cfg.train, cfg.train_chains)
    dev = _load(cfg, cfg.dev, cfg.dev_chains)
    trained = train_dre(train, dev, cfg.dre_config(), _sidecars(cfg),
                        log_fn=lambda row: print(json.dumps(row, sort_keys=True)))
    path = cfg.out_dir("checkpoints") / "dre.pt"
    trained.save(path)
    _write_report(cfg, "train_log.json", {"recipe": cfg.recipe, "chain_source": cfg.chain_source,
                                          "best_epoch": trained.best_epoch, "log": trained.log})
    print(f"saved {path}; best dev F1 {trained.log[trained.best_epoch]['dev_f1']:.4f} at epoch {trained.best_epoch}")
    return EXIT_OK


def cmd_eval_dre(args) -> int:
    from .model import TrainedDRE, evaluate_dre, gold_of

    cfg = _cfg(args)
    trained = TrainedDRE.load(cfg.resolve(args.checkpoint))
    if not cfg.test:
        raise ConfigError("eval-dre needs --test")
    test = _load(cfg, cfg.test, cfg.test_chains)
    preds = {k: v.labels for k, v in evaluate_dre(trained, test, _sidecars(cfg)).items()}
    rep = score(preds, gold_of(test))
    inter = slice_inter_intra(test, preds, chain_aware=True)
    names = slice_inter_intra(test, preds, chain_aware=False)
    spk = slice_speakers(test, preds)
    print(report_table(rep))
    for sr in (inter, names, spk):
        print()
        print(slice_table(sr))
    disagree = slice_disagreement(test)
    print(f"\ninter/intra definitions disagree on {len(disagree)} of {rep.pairs} pairs")
    _write_report(cfg, "eval.json", {
        "checkpoint": {"recipe": trained.config.recipe, "chain_source": trained.config.chain_source,
                       "fingerprint": trained.config.fingerprint()},
        "score": rep.to_json(),
        "inter_intra": inter.to_json(),
        "inter_intra_names": names.to_json(),
        "slice_disagreement": len(disagree),
        "speakers": spk.to_json(),
        "predictions": {f"{k[0]}#{k[1]}": sorted(v) for k, v in preds.items()},
    })
    if args.plots:
        rdir = cfg.out_dir("reports")
        plot_per_relation(rep, rdir / "per_relation.png")
        plot_slices(spk, rdir / "speakers.png")
        plot_slices(inter, rdir / "inter_intra.png")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _cfg(args)
    if not (cfg.train and cfg.dev and cfg.test):
        raise ConfigError("ablate needs --train, --dev and --test")
    train = _load(cfg, cfg.train, cfg.train_chains)
    dev = _load(cfg, cfg.dev, cfg.dev_chains)
    test = _load(cfg, cfg.test, cfg.test_chains)
    runs = []
    rows = run_ablation(train, dev, test, cfg.dre_config(), cfg.ablate, cfg.seeds, _sidecars(cfg), log_fn=runs.append)
    print(ablation_table(rows))
    _write_report(cfg, "ablation.json", {"recipe": cfg.recipe, "rows": [r.to_json() for r in rows], "runs": runs})
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _csv_list(s: str) -> list[str]:
    return [x.strip().upper() for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--data-root", dest="data_root", help="base directory for relative data paths")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--recipe", choices=["TUCORE", "REDIALOG", "GAIN", "HGAT"], type=str.upper)
    model.add_argument("--chain-source", dest="chain_source", choices=["none", "gold", "predicted", "external"])
    model.add_argument("--chains", help="chain sidecar(s) keyed by dialogue id, comma-separated (predicted/external sources)")
    model.add_argument("--strip", type=_csv_list, help="comma-separated edge kinds to remove, e.g. CC,MU")

    data = argparse.ArgumentParser(add_help=False)
    for split in ("train", "dev", "test"):
        data.add_argument(f"--{split}")
        data.add_argument(f"--{split}-chains", dest=f"{split}_chains")

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument("--epochs", type=int)
    hyper.add_argument("--lr", type=float)
    hyper.add_argument("--tau", type=float)
    hyper.add_argument("--gcn-layers", dest="gcn_layers", type=int)
    hyper.add_argument("--embed-dim", dest="embed_dim", type=int)
    hyper.add_argument("--hidden-dim", dest="hidden_dim", type=int)

    ap = argparse.ArgumentParser(prog="corefdre", description="Dialogue relation extraction with coreference chains.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="load a corpus and report annotation violations")
    p.add_argument("corpus")
    p.add_argument("--chains")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", parents=[common, data], help="chain/mention/dialogue counts per split")
    p.add_argument("--split", action="append", metavar="NAME=CORPUS[:CHAINS]")
    p.add_argument("--json", help="also write the table as JSON")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-graph", parents=[common, model], help="dump one dialogue graph")
    p.add_argument("corpus")
    p.add_argument("--dialogue", required=True, help="dialogue id or position")
    p.add_argument("--pair", type=int, default=0)
    p.add_argument("--stdout", action="store_true")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train-coref", parents=[common, data], help="train the span-ranking resolver")
    p.add_argument("--conll", help="CoNLL-style training file")
    p.add_argument("--regime", choices=["corpus", "conll", "sequential"], default="corpus",
                   help="train on the corpus, on CoNLL data, or CoNLL then corpus")
    p.set_defaults(func=cmd_train_coref)

    p = sub.add_parser("predict-coref", parents=[common], help="write predicted chains as a sidecar")
    p.add_argument("corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_predict_coref)

    p = sub.add_parser("train-dre", parents=[common, data, model, hyper], help="train a relation model")
    p.set_defaults(func=cmd_train_dre)

    p = sub.add_parser("eval-dre", parents=[common, data, model], help="score a relation model with slices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--plots", action="store_true", help="write bar charts under reports/")
    p.set_defaults(func=cmd_eval_dre)

    p = sub.add_parser("ablate", parents=[common, data, model, hyper], help="edge-kind ablation grid")
    p.add_argument("--sets", dest="ablate", type=lambda s: [_csv_list(x) for x in s.split(";")],
                   help="semicolon-separated edge sets, e.g. ';CC;MU;CC,MU' (empty = full graph)")
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")])
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        for v in e.report:
            print(v, file=sys.stderr)
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ParseError, SchemaError) as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, UnknownKindError) as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CorefDREError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error [IO_ERROR]: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
