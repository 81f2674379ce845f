"""``mote`` command line: gen-data, fit-kde, enroll, verify, evaluate, attack, bench."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .attack import attack_mote, attack_vector_baseline, make_gallery
from .config import RunConfig, apply_overrides, load_config
from .errors import MissingArtifact, MoteError
from .store import TemplateStore, load_embedding_file
from .verify import Scorer, decide

log = logging.getLogger("mote")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed,
                                  synth=dataclasses.replace(cfg.synth, seed=args.seed))
    if args.balancing_factor is not None:
        cfg = cfg.with_balancing_factor(args.balancing_factor)
    if args.target_fmr is not None:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, target_fmr=args.target_fmr))
    if args.out is not None:
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, workdir=args.out))
    cfg.validate()
    return cfg


def _templates(cfg: RunConfig) -> tuple[TemplateStore, dict]:
    store = TemplateStore(cfg.store_dir())
    ids = store.identities()
    if not ids:
        raise MissingArtifact(f"no templates under {store.template_dir}; run enroll first")
    return store, store.load_all(ids)


def _enroll_seconds(store: TemplateStore, ids) -> list[float]:
    if not store.log_path.exists():
        return []
    latest = {}
    for line in store.log_path.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        latest[rec["identity"]] = rec["enroll_seconds"]
    return [latest[i] for i in ids if i in latest]


def cmd_gen_data(cfg: RunConfig, args) -> dict:
    emb_path, man_path = pipeline.generate_data(cfg)
    dim, emb = load_embedding_file(emb_path)
    (cfg.workdir).mkdir(parents=True, exist_ok=True)
    (cfg.workdir / "config.json").write_text(cfg.render(), encoding="utf-8")
    return {"embeddings": str(emb_path), "manifest": str(man_path), "rows": int(len(emb)),
            "dim": dim, "config_digest": cfg.digest(), "master_seed": cfg.seed}


def cmd_fit_kde(cfg: RunConfig, args) -> dict:
    corpus = pipeline.load_run_corpus(cfg)
    _, _, summary = pipeline.fit_kdes(cfg, corpus)
    summary["config_digest"] = cfg.digest()
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    (cfg.report_dir / "kde_summary.json").write_text(pipeline.dumps(summary), encoding="utf-8")
    return summary


def cmd_enroll(cfg: RunConfig, args) -> dict:
    corpus = pipeline.load_run_corpus(cfg)
    kdes, aux, _ = pipeline.fit_kdes(cfg, corpus)
    results = pipeline.enroll_all(cfg, corpus, kdes, aux, jobs=args.jobs, overwrite=args.overwrite)
    secs = [r.enroll_seconds for r in results.values()]
    return {
        "store": str(cfg.store_dir()),
        "n_enrolled": len(results),
        "balancing_factor": cfg.enroll.balancing_factor,
        "mean_epochs": float(np.mean([r.report.epochs_run for r in results.values()])),
        "mean_enroll_seconds": float(np.mean(secs)),
        "config_digest": cfg.digest(),
    }


def _threshold(cfg: RunConfig, args) -> float:
    if args.threshold is not None:
        return args.threshold
    path = cfg.report_dir / f"b{cfg.enroll.balancing_factor:.2f}" / pipeline.REPORT_NAME
    if not path.exists():
        raise MissingArtifact(f"no --threshold given and no report at {path}")
    return float(json.loads(path.read_text(encoding="utf-8"))["operating_threshold"])


def cmd_verify(cfg: RunConfig, args) -> None:
    store = TemplateStore(cfg.store_dir())
    if args.identity not in store:
        raise MissingArtifact(f"identity {args.identity!r} is not enrolled in {store.root}")
    scorer = Scorer(store.load(args.identity))
    tau = _threshold(cfg, args)
    if args.probe_file:
        _, probes = load_embedding_file(args.probe_file)
        labels = [f"{args.probe_file}#{k}" for k in range(len(probes))]
    else:
        corpus = pipeline.load_run_corpus(cfg)
        rows = args.probe_row or []
        if not rows:
            raise MissingArtifact("give --probe-row or --probe-file")
        probes = corpus.embeddings[rows]
        labels = [f"row:{r}" for r in rows]
    for label, s in zip(labels, scorer.scores(probes)):
        _emit({"identity": args.identity, "probe": label, **decide(float(s), tau).to_dict()})
    return None


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    if args.sweep:
        out = pipeline.run_sweep(cfg, jobs=args.jobs)
        return out["summary"]
    corpus = pipeline.load_run_corpus(cfg)
    store, templates = _templates(cfg)
    out_dir = cfg.report_dir / f"b{cfg.enroll.balancing_factor:.2f}"
    report = pipeline.evaluate(cfg, corpus, templates, _enroll_seconds(store, templates), out_dir)
    keys = ("fnmr_at_fmr1e3", "accuracy", "auc", "fdr", "igarbe", "attack_balanced_accuracy",
            "resolution_warning")
    return {"report": str(out_dir / pipeline.REPORT_NAME), **{k: report[k] for k in keys}}


def cmd_attack(cfg: RunConfig, args) -> dict:
    corpus = pipeline.load_run_corpus(cfg)
    _, templates = _templates(cfg)
    attrs = corpus.attributes
    aux_emb, aux_ids = corpus.select("Auxiliary")
    gallery = make_gallery(aux_emb, [attrs[i] for i in aux_ids], cfg.eval.gallery_per_gender, cfg.seed)
    truth = {i: attrs[i] for i in templates}
    refs = pipeline.references(corpus)
    result = {
        "config_digest": cfg.digest(),
        "master_seed": cfg.seed,
        "balancing_factor": cfg.enroll.balancing_factor,
        "baseline": attack_vector_baseline({i: refs[i] for i in templates}, gallery, truth).to_dict(),
        "mote": attack_mote(templates, gallery, truth).to_dict(),
    }
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.report_dir / f"attack_b{cfg.enroll.balancing_factor:.2f}.json"
    path.write_text(pipeline.dumps(result), encoding="utf-8")
    return {k: (v["balanced_accuracy"] if isinstance(v, dict) else v) for k, v in result.items()}


def cmd_bench(cfg: RunConfig, args) -> dict:
    result = pipeline.bench(cfg)
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    (cfg.report_dir / "bench.json").write_text(pipeline.dumps(result), encoding="utf-8")
    return result


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a synthetic embedding corpus"),
    "fit-kde": (cmd_fit_kde, "fit attribute KDEs on the auxiliary split"),
    "enroll": (cmd_enroll, "train a model template for every enrolled identity"),
    "verify": (cmd_verify, "score probes against one identity's template"),
    "evaluate": (cmd_evaluate, "recognition, fairness and attack report"),
    "attack": (cmd_attack, "gender inference attack on vectors and model templates"),
    "bench": (cmd_bench, "storage and timing measurements"),
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (also seeds the corpus)")
    common.add_argument("--jobs", type=int, default=1, help="parallel enrollment workers")
    common.add_argument("--balancing-factor", type=float, help="male fraction of synthetic samples")
    common.add_argument("--target-fmr", type=float, help="FMR for the headline FNMR")
    common.add_argument("--out", help="working directory for all artifacts")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mote", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name == "enroll":
            p.add_argument("--overwrite", action="store_true", help="replace existing templates")
        if name == "verify":
            p.add_argument("--identity", required=True)
            p.add_argument("--probe-row", type=int, action="append", help="corpus row index")
            p.add_argument("--probe-file", help="EMB1 file of probes")
            p.add_argument("--threshold", type=float, help="decision threshold (default: from report)")
        if name == "evaluate":
            p.add_argument("--sweep", action="store_true", help="enroll and evaluate every sweep factor")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, _ = COMMANDS[args.command]
    try:
        cfg = build_config(args)
        out = fn(cfg, args)
    except MoteError as e:
        sys.stderr.write(json.dumps(e.to_dict()) + "\n")
        return 2
    except (ValueError, OSError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1
    if out is not None:
        _emit(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
