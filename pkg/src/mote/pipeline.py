"""End-to-end experiment orchestration: corpus -> KDEs -> enrollment -> report."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attack as atk
from . import metrics as m
from .config import RunConfig
from .enroll import AuxiliaryPool, EnrollResult, enroll_identity, enroll_many
from .errors import MissingArtifact
from .kde import AttributeKdes, fit_attribute_kdes
from .store import (N_WEIGHTS, Corpus, ModelTemplate, TemplateStore, load_corpus,
                    save_embedding_file, save_manifest)
from .synth import gen_corpus
from .verify import Scorer, score

log = logging.getLogger(__name__)

NONDETERMINISTIC_FIELDS = ("mean_enroll_seconds", "std_enroll_seconds", "mean_score_ms")
REPORT_NAME = "report.json"
ROC_NAME = "roc.csv"


# --------------------------------------------------------------------------
# stages


def generate_data(cfg: RunConfig) -> tuple[Path, Path]:
    emb, manifest = gen_corpus(cfg.synth)
    save_embedding_file(cfg.embeddings_path, emb)
    save_manifest(cfg.manifest_path, manifest)
    return cfg.embeddings_path, cfg.manifest_path


def load_run_corpus(cfg: RunConfig) -> Corpus:
    for p in (cfg.embeddings_path, cfg.manifest_path):
        if not p.exists():
            raise MissingArtifact(f"missing {p}; run gen-data first")
    return load_corpus(cfg.embeddings_path, cfg.manifest_path)


def fit_kdes(cfg: RunConfig, corpus: Corpus) -> tuple[AttributeKdes, AuxiliaryPool, dict]:
    emb, ids = corpus.select("Auxiliary")
    if len(emb) == 0:
        raise MissingArtifact("corpus has no Auxiliary rows")
    attrs = corpus.attributes
    k = cfg.kde
    kdes, centroids = fit_attribute_kdes(emb, ids, attrs, k.cv_folds, k.grid_size, k.grid_lo,
                                         k.grid_hi, seed=cfg.seed)
    aux = AuxiliaryPool(emb, tuple(ids), attrs, centroids)
    summary = {"seed": cfg.seed, "cv_folds": k.cv_folds, "n_aux_rows": int(len(emb)),
               "n_aux_identities": len(centroids), "kdes": {}}
    for attr, kde in (("Female", kdes.female), ("Male", kdes.male)):
        if kde is None:
            summary["kdes"][attr] = None
            continue
        summary["kdes"][attr] = {
            "n": kde.n,
            "dim": kde.dim,
            "bandwidth": kde.bandwidth,
            "bandwidth_grid": list(kde.bandwidth_grid),
            "cv_mean_log_density": list(kde.cv_scores),
        }
    return kdes, aux, summary


def references(corpus: Corpus) -> dict[str, np.ndarray]:
    """One reference embedding per enrolled identity (its first Enroll row)."""
    emb, ids = corpus.select("Enroll")
    out = {}
    for e, i in zip(emb, ids):
        out.setdefault(i, e)
    return out


def enroll_all(cfg: RunConfig, corpus: Corpus, kdes: AttributeKdes, aux: AuxiliaryPool,
               jobs: int = 1, overwrite: bool = True) -> dict[str, EnrollResult]:
    store = TemplateStore(cfg.store_dir())
    return enroll_many(references(corpus), kdes, aux, cfg.enroll, store, cfg.seed, overwrite, jobs)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Scores:
    mote: m.ScoreSet
    baseline: m.ScoreSet


def collect_scores(cfg: RunConfig, corpus: Corpus, templates: dict[str, ModelTemplate]) -> Scores:
    """Score every (probe, enrolled identity) pair with MOTE and with cosine similarity.

    Pairs are grouped by the enrolled identity's attribute.  Imposter pairs
    beyond ``eval.max_imposter_pairs`` are subsampled with a fixed seed.
    """
    probes, probe_ids = corpus.select("Probe")
    if len(probes) == 0:
        raise MissingArtifact("corpus has no Probe rows")
    probe_ids = np.asarray(probe_ids)
    attrs = corpus.attributes
    refs = references(corpus)
    ids = sorted(templates)
    n_imp_total = sum(int(np.count_nonzero(probe_ids != i)) for i in ids)
    keep = None
    if n_imp_total > cfg.eval.max_imposter_pairs:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x696D70]))
        keep = np.zeros(n_imp_total, dtype=bool)
        keep[rng.choice(n_imp_total, cfg.eval.max_imposter_pairs, replace=False)] = True

    pn = probes.astype(np.float64)
    pn = pn / np.linalg.norm(pn, axis=1, keepdims=True)
    g, i_, gb, ib, ga, ia = [], [], [], [], [], []
    offset = 0
    for ident in ids:
        s = Scorer(templates[ident]).scores(probes)
        r = np.asarray(refs[ident], dtype=np.float64)
        cos = pn @ (r / np.linalg.norm(r))
        same = probe_ids == ident
        imp = ~same
        if keep is not None:
            sel = keep[offset : offset + int(imp.sum())]
            offset += int(imp.sum())
            imp_idx = np.flatnonzero(imp)[sel]
        else:
            imp_idx = np.flatnonzero(imp)
        g.append(s[same]); gb.append(cos[same])
        i_.append(s[imp_idx]); ib.append(cos[imp_idx])
        ga += [attrs[ident]] * int(same.sum())
        ia += [attrs[ident]] * len(imp_idx)
    cat = np.concatenate
    return Scores(
        mote=m.ScoreSet(cat(g), cat(i_), np.asarray(ga), np.asarray(ia)),
        baseline=m.ScoreSet(cat(gb), cat(ib), np.asarray(ga), np.asarray(ia)),
    )


def thin_roc(roc, n_points: int = 200) -> list[list[float]]:
    """Operating points at log-spaced FMR targets (smallest threshold meeting each)."""
    arr = np.asarray(roc, dtype=np.float64)
    fmr, fnmr = arr[:, 0], arr[:, 1]
    targets = np.concatenate([[0.0], np.geomspace(1e-6, 1.0, n_points)])
    out = []
    for t in targets:
        ok = np.flatnonzero(fmr <= t)
        if ok.size:
            k = ok[0]
            pt = [float(fmr[k]), float(fnmr[k])]
            if not out or out[-1] != pt:
                out.append(pt)
    return sorted(out)


def _recognition(s: m.ScoreSet, cfg: RunConfig) -> tuple[dict, list]:
    e = cfg.eval
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", m.ResolutionWarning)
        tau_t, fmr_t = m.threshold_at_fmr(s, e.target_fmr)
    resolution_warning = any(issubclass(w.category, m.ResolutionWarning) for w in caught)
    tau_o, fmr_o = m.threshold_at_fmr(s, e.operating_fmr)
    roc, auc = m.roc_auc(s)
    groups = m.per_group_rates(m.symmetrize_groups(s) if e.pool_groups else s, tau_o)
    out = {
        "target_fmr": e.target_fmr,
        "threshold_at_target": tau_t,
        "achieved_fmr_at_target": fmr_t,
        "fnmr_at_fmr1e3": m.rates_at_threshold(s, tau_t)[1],
        "resolution_warning": resolution_warning,
        "operating_fmr": e.operating_fmr,
        "operating_threshold": tau_o,
        "achieved_fmr_at_operating": fmr_o,
        "fnmr_at_operating": m.rates_at_threshold(s, tau_o)[1],
        "accuracy": m.pair_accuracy(s, tau_o),
        "auc": auc,
        "per_group": {k: {"fmr": v[0], "fnmr": v[1]} for k, v in groups.items()},
        "fdr": m.fdr(groups, e.fairness_alpha) if len(groups) > 1 else None,
        "igarbe": m.igarbe(groups, e.fairness_alpha) if len(groups) > 1 else None,
        "n_genuine": int(s.genuine.size),
        "n_imposter": int(s.imposter.size),
    }
    return out, roc


def time_scoring(templates: dict[str, ModelTemplate], probes: np.ndarray, n_probes: int) -> float:
    """Mean wall time (ms) of single-probe :func:`verify.score` calls."""
    ids = sorted(templates)
    n = max(1, n_probes)
    t0 = time.perf_counter()
    for k in range(n):
        score(templates[ids[k % len(ids)]], probes[k % len(probes)])
    return (time.perf_counter() - t0) / n * 1e3


def evaluate(cfg: RunConfig, corpus: Corpus, templates: dict[str, ModelTemplate],
             enroll_seconds: list[float] | None = None, out_dir: Path | None = None) -> dict:
    """Build the evaluation report; writes JSON, ROC CSV and figures if ``out_dir`` is set."""
    if not templates:
        raise MissingArtifact("no enrolled templates to evaluate")
    sc = collect_scores(cfg, corpus, templates)
    mote, roc = _recognition(sc.mote, cfg)
    base, base_roc = _recognition(sc.baseline, cfg)

    aux_emb, aux_ids = corpus.select("Auxiliary")
    attrs = corpus.attributes
    gallery = atk.make_gallery(aux_emb, [attrs[i] for i in aux_ids], cfg.eval.gallery_per_gender,
                               cfg.seed)
    refs = references(corpus)
    truth = {i: attrs[i] for i in templates}
    att_base = atk.attack_vector_baseline({i: refs[i] for i in templates}, gallery, truth)
    att_mote = atk.attack_mote(templates, gallery, truth)

    t = next(iter(templates.values()))
    storage = len(t.to_bytes())
    probes, _ = corpus.select("Probe")
    secs = list(enroll_seconds or [])
    report = {
        "config_digest": cfg.digest(),
        "master_seed": cfg.seed,
        "balancing_factor": cfg.enroll.balancing_factor,
        "n_enrolled": len(templates),
        **mote,
        "roc": thin_roc(roc),
        "attack_balanced_accuracy": att_mote.balanced_accuracy,
        "attack": {
            "gallery_per_gender": cfg.eval.gallery_per_gender,
            "baseline": att_base.to_dict(),
            "mote": att_mote.to_dict(),
        },
        "baseline": base,
        "storage_bytes_per_identity": storage,
        "payload_bytes_per_identity": 4 * N_WEIGHTS,
        "mean_enroll_seconds": float(np.mean(secs)) if secs else None,
        "std_enroll_seconds": float(np.std(secs)) if secs else None,
        "mean_score_ms": time_scoring(templates, probes, min(cfg.bench.n_probes, 2000)),
        "nondeterministic_fields": list(NONDETERMINISTIC_FIELDS),
    }
    if out_dir is not None:
        write_report(report, out_dir, roc, base_roc, sc, cfg.eval.figures)
    return report


def deterministic_view(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in NONDETERMINISTIC_FIELDS}


def dumps(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def write_report(report: dict, out_dir, roc, base_roc, scores: Scores | None = None,
                 figures: bool = True, name: str = REPORT_NAME) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(dumps(report), encoding="utf-8")
    stem = path.stem
    with open(out / f"{stem}_{ROC_NAME}", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fmr", "fnmr"])
        w.writerows(roc)
    if figures and scores is not None:
        from . import plotting

        plotting.plot_roc({"MOTE": roc, "cosine baseline": base_roc},
                          out / f"{stem}_roc.png", target_fmr=report["target_fmr"])
        plotting.plot_score_hist(scores.mote, out / f"{stem}_scores.png",
                                 threshold=report["operating_threshold"])
    return path


# --------------------------------------------------------------------------
# full runs


def prepare(cfg: RunConfig, generate: bool = True) -> Corpus:
    if generate and not (cfg.embeddings_path.exists() and cfg.manifest_path.exists()):
        generate_data(cfg)
    return load_run_corpus(cfg)


def run_pipeline(cfg: RunConfig, jobs: int = 1, write: bool = True) -> dict:
    """Generate (if needed), fit, enroll at ``cfg``'s balancing factor and evaluate."""
    cfg.validate()
    corpus = prepare(cfg)
    kdes, aux, _ = fit_kdes(cfg, corpus)
    results = enroll_all(cfg, corpus, kdes, aux, jobs=jobs)
    templates = {k: r.template for k, r in results.items()}
    out = cfg.report_dir / f"b{cfg.enroll.balancing_factor:.2f}" if write else None
    return evaluate(cfg, corpus, templates, [r.enroll_seconds for r in results.values()], out)


def run_sweep(cfg: RunConfig, jobs: int = 1, write: bool = True) -> dict:
    """Run the pipeline once per balancing factor; KDEs are fitted once."""
    cfg.validate()
    corpus = prepare(cfg)
    kdes, aux, _ = fit_kdes(cfg, corpus)
    rows = {}
    for b in cfg.sweep:
        c = cfg.with_balancing_factor(b)
        results = enroll_all(c, corpus, kdes, aux, jobs=jobs)
        templates = {k: r.template for k, r in results.items()}
        out = c.report_dir / f"b{b:.2f}" if write else None
        rows[f"{b:.2f}"] = evaluate(c, corpus, templates,
                                    [r.enroll_seconds for r in results.values()], out)
    summary = {
        "config_digest": cfg.digest(),
        "master_seed": cfg.seed,
        "sweep": {k: {f: r[f] for f in ("fdr", "igarbe", "accuracy", "auc", "fnmr_at_fmr1e3",
                                          "attack_balanced_accuracy")}
                  for k, r in rows.items()},
    }
    if write:
        cfg.report_dir.mkdir(parents=True, exist_ok=True)
        (cfg.report_dir / "sweep.json").write_text(dumps(summary), encoding="utf-8")
        if cfg.eval.figures:
            from . import plotting

            plotting.plot_sweep(summary["sweep"], cfg.report_dir / "sweep.png")
    return {"summary": summary, "reports": rows}


def bench(cfg: RunConfig) -> dict:
    """Repeat enrollment ``bench.repeats`` times for a few identities and time scoring."""
    cfg.validate()
    corpus = prepare(cfg)
    kdes, aux, _ = fit_kdes(cfg, corpus)
    refs = references(corpus)
    ids = sorted(refs)[: cfg.bench.n_identities]
    per_identity, all_secs, template = {}, [], None
    for i in ids:
        secs = []
        for _ in range(cfg.bench.repeats):
            t0 = time.perf_counter()
            template, _ = enroll_identity(refs[i], i, kdes, aux, cfg.enroll, None, cfg.seed)
            secs.append(time.perf_counter() - t0)
        per_identity[i] = {"mean": float(np.mean(secs)), "std": float(np.std(secs))}
        all_secs += secs
    probes, _ = corpus.select("Probe")
    templates = {template.identity: template}
    payload = 4 * N_WEIGHTS
    total = len(template.to_bytes())
    return {
        "config_digest": cfg.digest(),
        "master_seed": cfg.seed,
        "repeats": cfg.bench.repeats,
        "payload_bytes": payload,
        "storage_bytes_per_identity": total,
        "storage_kb_per_identity": total / 1000.0,
        "enroll_seconds": {"mean": float(np.mean(all_secs)), "std": float(np.std(all_secs)),
                           "per_identity": per_identity},
        "mean_score_ms": time_scoring(templates, probes, cfg.bench.n_probes),
        "n_score_probes": cfg.bench.n_probes,
        "nondeterministic_fields": ["enroll_seconds", "mean_score_ms"],
    }
