import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mote.attack import (
    AttackGallery, attack_mote, attack_vector_baseline, balanced_accuracy, make_gallery,
)
from mote.errors import DimensionMismatch, EmptyGallery, MissingTruth
from mote.net import Mlp
from mote.store import N_WEIGHTS, ModelTemplate
from mote.synth import SynthConfig, gen_corpus
from mote.verify import Scorer, decide, score


def random_template(seed, ident="x"):
    w = Mlp.init(rng=seed).to_flat()
    return ModelTemplate(ident, w, "d", 0.5)


def zero_template(ident="z"):
    return ModelTemplate(ident, np.zeros(N_WEIGHTS, np.float32), "d", 0.5)


# ---- verify


def test_zero_template_scores_half():
    probes = np.random.default_rng(0).normal(size=(4, 512))
    assert all(score(zero_template(), p) == 0.5 for p in probes)
    assert np.all(Scorer(zero_template()).scores(probes) == 0.5)


def test_score_repeatable_and_scorer_agrees():
    t = random_template(1)
    probes = np.random.default_rng(2).normal(size=(6, 512))
    single = [score(t, p) for p in probes]
    assert single == [score(t, p) for p in probes]
    assert np.allclose(Scorer(t).scores(probes), single, rtol=0, atol=1e-12)


def test_probe_dimension():
    with pytest.raises(DimensionMismatch):
        score(random_template(0), np.ones(10))


def test_decision_examples():
    assert decide(0.5, 0.5).outcome == "Genuine"
    assert decide(0.4, 0.5).outcome == "Impostor"
    assert decide(0.6, 0.5).outcome == "Genuine"
    assert decide(0.6, 0.5).to_dict() == {"score": 0.6, "threshold": 0.5, "outcome": "Genuine"}
    with pytest.raises(ValueError):
        decide(0.5, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(1e-9, 1 - 1e-9))
def test_decision_invariant(s, tau):
    assert (decide(s, tau).outcome == "Genuine") == (s >= tau)


# ---- attack


def test_balanced_accuracy_examples():
    truth = {"a": "Female", "b": "Female", "c": "Male", "d": "Male"}
    assert balanced_accuracy(truth, truth) == 1.0
    assert balanced_accuracy({k: "Male" for k in truth}, truth) == 0.5
    truth10 = {f"f{i}": "Female" for i in range(5)} | {f"m{i}": "Male" for i in range(5)}
    preds = {k: v for k, v in truth10.items()}
    preds["f0"] = "Male"  # female recall 0.8
    preds["m0"] = preds["m1"] = "Female"  # male recall 0.6
    assert balanced_accuracy(preds, truth10) == pytest.approx(0.7)
    with pytest.raises(MissingTruth):
        balanced_accuracy({"zz": "Male"}, truth)


def test_empty_gallery():
    with pytest.raises(EmptyGallery):
        AttackGallery(np.empty((0, 3)), np.ones((2, 3)))
    with pytest.raises(EmptyGallery):
        make_gallery(np.ones((3, 2)), ["Male"] * 3)


def test_baseline_on_constructed_targets():
    rng = np.random.default_rng(0)
    g = np.zeros(16)
    g[0] = 1.0
    fem = -g + 0.1 * rng.normal(size=(20, 16))
    mal = g + 0.1 * rng.normal(size=(20, 16))
    gal = AttackGallery(fem, mal)
    targets = {"t_f": fem.mean(0), "t_m": mal.mean(0)}
    truth = {"t_f": "Female", "t_m": "Male"}
    r = attack_vector_baseline(targets, gal, truth)
    assert r.predictions == truth and r.balanced_accuracy == 1.0


def test_baseline_scale_invariant():
    emb, m = gen_corpus(SynthConfig(n_identities=40))
    attrs = [r.attribute for r in m.rows]
    gal = make_gallery(emb, attrs, 20, 0)
    targets = {r.identity: emb[r.row] for r in m.rows if r.split == "Enroll"}
    truth = {k: m.attributes()[k] for k in targets}
    a = attack_vector_baseline(targets, gal, truth)
    b = attack_vector_baseline({k: 7.5 * v for k, v in targets.items()}, gal, truth)
    assert a.predictions == b.predictions


def test_baseline_chance_without_signal():
    emb, m = gen_corpus(SynthConfig(n_identities=400, gender_offset=0.0, aux_fraction=0.5))
    attrs = m.attributes()
    aux = [r for r in m.rows if r.split == "Auxiliary"]
    gal = make_gallery(emb[[r.row for r in aux]], [r.attribute for r in aux], 100, 0)
    targets = {r.identity: emb[r.row] for r in m.rows if r.split == "Enroll"}
    assert len(targets) >= 200
    r = attack_vector_baseline(targets, gal, {k: attrs[k] for k in targets})
    assert abs(r.balanced_accuracy - 0.5) <= 0.05


def test_constant_templates_collapse():
    templates = {f"i{k}": zero_template(f"i{k}") for k in range(6)}
    truth = {f"i{k}": ("Male" if k % 2 else "Female") for k in range(6)}
    rng = np.random.default_rng(0)
    gal = AttackGallery(rng.normal(size=(5, 512)), rng.normal(size=(5, 512)))
    r = attack_mote(templates, gal, truth)
    assert len(set(r.predictions.values())) == 1
    assert r.balanced_accuracy == 0.5 and r.concentration == 1.0


def test_gallery_halving_is_stable():
    emb, m = gen_corpus(SynthConfig())
    attrs = m.attributes()
    aux = m.rows_in("Auxiliary")
    aux_emb, aux_attr = emb[[r.row for r in aux]], [r.attribute for r in aux]
    targets = {r.identity: emb[r.row] for r in m.rows_in("Enroll")}
    truth = {k: attrs[k] for k in targets}
    full = attack_vector_baseline(targets, make_gallery(aux_emb, aux_attr, 100, 0), truth)
    half = attack_vector_baseline(targets, make_gallery(aux_emb, aux_attr, 50, 0), truth)
    assert abs(full.balanced_accuracy - half.balanced_accuracy) <= 0.05
