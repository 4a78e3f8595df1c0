"""Worked examples for each operation, including the oracle-backed ones.

Frozen constants come from tests/oracles/derive_constants.py.
"""

import filecmp
import json
from dataclasses import replace

import numpy as np
import pytest

from synlab import baselines, bayes, cli, losses, nn
from synlab.experiment import (QUALITY_TRAIN, TestbedConfig, build_data, model_config_for,
                               run_strategy)
from synlab.experiment import quality_report as _quality_report
from synlab.quality import (MarginDistribution, calibrate, collect_margins, histogram,
                            js_divergence, MarginRecords)
from synlab.syncheck import assign_pseudo_labels, train_syncheck
from synlab.testbed import (Dataset, GeneratorSpec, RealSpec, augment_weak, make_real_dataset,
                            sample_synthetic)
from synlab.training import TrainConfig, fit_supervised

JS_TWO_BIN = 0.03382207556860521
OVA_THREE_CLASS = 0.61618613942381698
ENT_ONE_DETECTOR = 0.32508297339144824
TS_COLLAPSED = 0.45391266155837338  # JS((1, 0), (1/6, 5/6))


def setup(tb, seed, **train):
    data = build_data(tb, seed)
    mc = model_config_for(tb, (64,), seed, data.real_train)
    return data, mc, TrainConfig(seed=seed, **train)


def quality_report(data, mc, tc, synthetic=None):
    return _quality_report(data, mc, replace(QUALITY_TRAIN, seed=tc.seed), synthetic)


def held_out_copy(data, tb, seed):
    """Fresh real draw dressed up as synthetic data."""
    ds = make_real_dataset(tb.real_spec(), tb.n_real, 1000 + seed)
    return replace(ds, synthetic=np.ones(len(ds), dtype=bool))


# ------------------------------------------------------------------ testbed

def test_well_separated_classes_are_linearly_separable():
    spec = RealSpec(num_classes=2, mode_separation=2.5, within_mode_std=0.25, seed=1)
    train, test = make_real_dataset(spec, 2000, 0), make_real_dataset(spec, 2000, 1)
    cfg = nn.ModelConfig(spec.feature_dim, (), 2, 0, 1.0 / train.features.std())
    state = fit_supervised(train.features, train.conditions, cfg, TrainConfig(epochs_total=20))
    assert baselines.evaluate_accuracy(state, test) >= 0.99


def test_degenerate_prior():
    spec = RealSpec(num_classes=3, class_prior=(1.0, 0.0, 0.0))
    assert not make_real_dataset(spec, 200, 0).conditions.any()


def test_clean_generator_matches_real_distribution():
    spec = RealSpec()
    n = 10_000
    real = make_real_dataset(spec, n, 0)
    syn = sample_synthetic(GeneratorSpec(spec), n, 0)
    se = np.sqrt(real.features.var(0) / n + syn.features.var(0) / n)
    assert np.all(np.abs(real.features.mean(0) - syn.features.mean(0)) < 5 * se)
    # class frequencies: two-proportion z within 5
    pr = np.bincount(real.latent, minlength=6) / n
    ps = np.bincount(syn.latent, minlength=6) / n
    assert np.all(np.abs(pr - ps) < 5 * np.sqrt(2 * pr * (1 - pr) / n))


def test_full_corruption_never_matches():
    syn = sample_synthetic(GeneratorSpec(RealSpec(), label_corruption_rate=1.0), 3000, 0)
    assert not np.any(syn.conditions == syn.latent)
    only0 = sample_synthetic(GeneratorSpec(RealSpec(num_classes=3), class_coverage=(0,)), 500, 0)
    assert not only0.latent.any()


def test_weak_augmentation_moments():
    sigma, n = 0.3, 100_000
    x = np.ones((n, 4))
    d = augment_weak(x, sigma, 0) - x
    assert np.all(np.abs(d.mean(0)) < 5 * sigma / np.sqrt(n))
    assert np.all(np.abs(d.var(0) / sigma ** 2 - 1) < 0.05)


# ------------------------------------------------------------------ quality

def test_separable_train_margins_positive_and_permuted_nonpositive():
    tb = TestbedConfig(mode_separation=2.5, n_real=1000)
    data, mc, tc = setup(tb, 0, epochs_total=20)
    state = fit_supervised(data.real_train.features, data.real_train.conditions, mc, tc)
    assert collect_margins(state, data.real_train, "train").margins.mean() > 0
    perm = np.random.default_rng(0).permutation(len(data.real_test))
    shuffled = data.real_test.relabel(data.real_test.conditions[perm])
    m = collect_margins(state, shuffled, "test").margins
    assert m.mean() <= 5 * m.std() / np.sqrt(m.size)


def test_calibration_arithmetic():
    rec = lambda v: MarginRecords(np.array(v, float), np.zeros(len(v)), "x")  # noqa: E731
    cal, off = calibrate(rec([0.8]), rec([0.6]), rec([0.1, 0.3]))
    assert off == pytest.approx(0.2) and cal.margins == pytest.approx([0.3, 0.5])
    assert calibrate(rec([0.5]), rec([0.7]), rec([0.0]))[1] == pytest.approx(-0.2)


def test_histogram_examples():
    h = histogram(np.zeros(7))
    assert np.count_nonzero(h.counts) == 1 and h.n == 7
    h = histogram(np.array([-1.0, 1.0]))
    assert h.counts[0] == 1 and h.counts[-1] == 1


def test_two_bin_js():
    edges = np.array([-1.0, 0.0, 1.0])
    p = MarginDistribution(edges, np.array([2, 2]), 0.0)
    q = MarginDistribution(edges, np.array([1, 3]), 0.0)
    assert js_divergence(p, q) == pytest.approx(JS_TWO_BIN, abs=1e-15)
    with pytest.raises(Exception):
        js_divergence(p, histogram(np.zeros(3)))


@pytest.fixture(scope="module")
def clean_tb():
    return TestbedConfig.preset("custom")


def test_tr_quality_examples(clean_tb):
    data, mc, tc = setup(clean_tb, 0)
    copy = held_out_copy(data, clean_tb, 0)
    js_copy = quality_report(data, mc, tc, copy).js_tr
    assert js_copy < 0.1
    flipped = sample_synthetic(replace(clean_tb, label_corruption_rate=1.0).generator(), 2000, 5)
    assert quality_report(data, mc, tc, flipped).js_tr > js_copy
    same = replace(data.real_train, synthetic=np.ones(len(data.real_train), dtype=bool))
    assert quality_report(data, mc, tc, same).js_tr < 0.05


def test_ts_quality_examples(clean_tb):
    data, mc, tc = setup(clean_tb, 0)
    assert quality_report(data, mc, tc).js_ts < 0.1
    half = replace(clean_tb, class_coverage=(0, 1, 2))
    hdata = build_data(half, 0)
    per = quality_report(hdata, mc, tc).ts.per_class_js
    assert min(per[c] for c in (3, 4, 5)) > max(per[c] for c in (0, 1, 2))
    # one repeated sample: the real test points of its own class share its
    # margin bin, so the score sits at the collapsed-support value, not ln 2;
    # 0.02 covers the test set's class-frequency sampling error
    one = data.synthetic.subset(np.zeros(500, dtype=int))
    assert quality_report(data, mc, tc, one).js_ts == pytest.approx(TS_COLLAPSED, abs=0.02)


# -------------------------------------------------------------- bayes-oracle

def test_tstr_bayes_classifier_is_optimal_when_conditionals_match(rng):
    p = bayes.random_joint(rng, 4, 3)
    # new x-marginal, same p(y|x)
    px = rng.dirichlet(np.ones(4))
    q = bayes.DiscreteJoint(px[:, None] * p.y_given_x())
    f = bayes.bayes_classifier(q)
    value = bayes.tstr_expected_loss(p, q, f)
    all_f = [bayes.tstr_expected_loss(p, q, bayes.decode_classifier(i, 4, 3))
             for i in range(3 ** 4)]
    assert value <= min(all_f) + 1e-12


def test_trivial_loss_cases():
    p = bayes.DiscreteJoint(np.array([[0.3, 0.0], [0.0, 0.7]]))
    assert bayes.trts_expected_loss(p, p, [0, 1]) == 0.0
    assert bayes.trts_expected_loss(p, p, bayes.bayes_classifier(p)) == bayes.bayes_risk(p)
    u = bayes.DiscreteJoint(np.array([[0.25, 0.25], [0.25, 0.25]]))
    assert bayes.tstr_expected_loss(u, u, [0, 0]) == 0.5


def test_tv_metric_axioms(rng):
    for _ in range(200):
        a, b, c = (rng.dirichlet(np.ones(6)) for _ in range(3))
        tv = bayes.total_variation
        assert tv(a, b) == tv(b, a)
        assert tv(a, c) <= tv(a, b) + tv(b, c) + 1e-15
        assert tv(a, a) == 0.0
    assert bayes.total_variation([0.5, 0.5], [0.25, 0.75]) == 0.25
    assert bayes.total_variation([1, 0], [0, 1]) == 1.0


def test_bound_trivial_cases(rng):
    p = bayes.random_joint(rng, 5, 3)
    assert bayes.tv_bound_check(p, p, rng.random(5)).lhs == 0.0
    q = bayes.random_joint(rng, 5, 3)
    assert bayes.tv_bound_check(p, q, np.full(5, 0.4)).lhs == pytest.approx(0.0, abs=1e-16)
    c = bayes.conditional_tv_bound_check(p, p)
    assert c.lhs == 0.0 and c.rhs == 0.0 and c.holds


# -------------------------------------------------------------------- losses

def test_ova_examples():
    q = np.array([[[0.9, 0.1], [0.4, 0.6], [0.2, 0.8]]])
    out = nn.ForwardOutput(np.full((1, 3), 1 / 3), q)
    assert losses.l_ova(out, [0]) == pytest.approx(OVA_THREE_CLASS, abs=1e-12)
    half = nn.ForwardOutput(np.full((1, 2), 0.5), np.full((1, 2, 2), 0.5))
    assert losses.l_ova(half, [0]) == pytest.approx(2 * np.log(2))
    perfect = nn.ForwardOutput(np.full((1, 2), 0.5), np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    assert losses.l_ova(perfect, [0]) == 0.0


def test_entropy_examples():
    q = np.array([[[0.9, 0.1], [1.0, 0.0], [0.0, 1.0]]])
    assert losses.l_ent(nn.ForwardOutput(np.full((1, 3), 1 / 3), q)) == pytest.approx(
        ENT_ONE_DETECTOR, abs=1e-12)
    flat = nn.ForwardOutput(np.full((2, 4), 0.25), np.full((2, 4, 2), 0.5))
    assert losses.l_ent(flat) == pytest.approx(4 * np.log(2))


def test_task_and_consistency_examples():
    flat = nn.ForwardOutput(np.full((1, 4), 0.25), np.full((1, 4, 2), 0.5))
    assert losses.l_task(flat, [2]) == pytest.approx(np.log(4))
    det = np.full((1, 2, 2), 0.5)
    a = nn.ForwardOutput(np.array([[1.0, 0.0]]), det)
    b = nn.ForwardOutput(np.array([[0.0, 1.0]]), det)
    assert losses.l_cons(a, b) == pytest.approx(2.0)
    assert losses.l_cons(a, a) == 0.0
    c = nn.ForwardOutput(np.array([[1.0, 0.0]]), np.array([[[1.0, 0.0], [0.5, 0.5]]]))
    assert losses.l_cons(a, c) == pytest.approx(0.5)
    six = nn.ForwardOutput(np.full((3, 6), 1 / 6), np.full((3, 6, 2), 0.5))
    assert losses.l_pseu_from_output(six, [0, 3, 5]) == pytest.approx(np.log(6))


def test_pseudo_label_rule():
    # linear heads on a 1-d input of ones: logits are the biases
    cfg = nn.ModelConfig(1, (), 3)
    st = nn.ModelState(cfg, np.zeros(cfg.n_params))
    layers = nn.unpack(st.params, cfg)
    layers[0][1][:] = np.log([0.8, 0.1, 0.1])
    layers[1][1][:] = [np.log(0.9), np.log(0.1), 0, 0, 0, 0]
    inl = assign_pseudo_labels(st, np.zeros((1, 1)), 0.5)
    assert inl.indices.tolist() == [0] and inl.pseudo_labels.tolist() == [0]
    layers[1][1][:2] = [np.log(0.3), np.log(0.7)]
    assert len(assign_pseudo_labels(st, np.zeros((1, 1)), 0.5)) == 0
    layers[0][1][:] = np.log([0.5, 0.5, 1e-300])
    layers[1][1][:2] = 0.0
    assert assign_pseudo_labels(st, np.zeros((1, 1)), 0.5).pseudo_labels.tolist() == [0]


# ------------------------------------------------------------------ syncheck

def test_empty_synthetic_tracks_real_only():
    tb = TestbedConfig.preset("in_domain")
    sc, ro = [], []
    for seed in (0, 1, 2):
        data, mc, tc = setup(tb, seed)
        empty = Dataset.empty(tb.feature_dim)
        state, _ = train_syncheck(data.real_train, empty, mc, tc)
        sc.append(baselines.evaluate_accuracy(state, data.real_test))
        ro.append(run_strategy("real_only", data, mc, tc).test_accuracy)
    assert abs(np.mean(sc) - np.mean(ro)) <= 0.005


def test_empty_synthetic_without_ova_is_real_only():
    # with no synthetic batches and L_ova off only L_task remains, on the
    # same real batch sequence as the supervised baseline
    tb = TestbedConfig.preset("in_domain", n_real=400, n_test=200)
    data, mc, tc = setup(tb, 0, epochs_total=6, drop_ova=True)
    state, _ = train_syncheck(data.real_train, Dataset.empty(tb.feature_dim), mc, tc)
    ref = fit_supervised(data.real_train.features, data.real_train.conditions, mc, tc)
    assert np.array_equal(state.params, ref.params)


# ----------------------------------------------------------------- baselines

def test_real_only_on_separable_testbed():
    tb = TestbedConfig(mode_separation=2.5)
    accs = [run_strategy("real_only", *setup(tb, s)).test_accuracy for s in (0, 1, 2)]
    assert min(accs) >= 0.95


def test_untrained_model_is_near_chance():
    tb = TestbedConfig.preset("in_domain", n_test=4000)
    data, mc, _ = setup(tb, 0)
    acc = baselines.evaluate_accuracy(nn.init_model(mc), data.real_test)
    assert acc < 0.5  # an untrained net is far from the trained ~0.77, biased toward few classes
    res = baselines.train_real_only(data.real_train, data.real_test, mc,
                                    TrainConfig(epochs_total=0))
    assert res.test_accuracy == acc


def test_clean_synthetic_does_not_hurt_mixture():
    tb = TestbedConfig.preset("custom")
    diffs = []
    for seed in (0, 1, 2):
        data, mc, tc = setup(tb, seed)
        cache = {}
        diffs.append(run_strategy("mixture", data, mc, tc, cache=cache).test_accuracy
                     - run_strategy("real_only", data, mc, tc, cache=cache).test_accuracy)
    assert np.mean(diffs) >= -0.01


def test_similarity_filter_examples(rng):
    n, d = 400, 256
    real = Dataset(rng.standard_normal((n, d)), np.zeros(n), np.zeros(n), np.zeros(n))
    syn = Dataset(rng.standard_normal((n, d)), np.zeros(n), np.zeros(n), np.ones(n))
    assert baselines.filter_similarity(real, syn, 0.9).kept_fraction == 0.0
    copy = replace(real, synthetic=np.ones(n, dtype=bool))
    assert baselines.filter_similarity(real, copy, 1 - 1e-9).kept_fraction == 1.0


def test_trts_examples():
    tb = TestbedConfig.preset("custom")
    data, mc, tc = setup(tb, 0)
    real_acc = run_strategy("real_only", data, mc, tc).test_accuracy
    copy = held_out_copy(data, tb, 0)
    filt, state = baselines.filter_trts(data.real_train, copy, mc, tc)
    se = np.sqrt(2 * real_acc * (1 - real_acc) / len(copy))
    assert abs(filt.kept_fraction - real_acc) < 5 * se
    flipped = sample_synthetic(replace(tb, label_corruption_rate=1.0).generator(), 4000, 9)
    filt, _ = baselines.filter_trts(data.real_train, flipped, mc, tc, state)
    wrong = nn.predict(state, flipped.features) != flipped.latent
    # conditions are uniform over the other classes, so agreement needs a wrong prediction
    chance = wrong.mean() / (tb.num_classes - 1)
    assert abs(filt.kept_fraction - chance) < 5 * np.sqrt(chance / len(flipped))
    empty, _ = baselines.filter_trts(data.real_train, Dataset.empty(16), mc, tc, state)
    assert len(empty.dataset) == 0


def test_accuracy_under_label_permutation():
    tb = TestbedConfig.preset("in_domain", n_real=600, n_test=600)
    data, mc, tc = setup(tb, 0, epochs_total=5)
    state = run_strategy("real_only", data, mc, tc).state
    pred = nn.predict(state, data.real_test.features)
    y = data.real_test.conditions
    conf = np.zeros((6, 6))
    np.add.at(conf, (y, pred), 1)
    perm = np.array([2, 0, 1, 5, 3, 4])
    expected = sum(conf[c, perm[c]] for c in range(6)) / len(y)
    permuted = data.real_test.relabel(perm[y])
    assert baselines.evaluate_accuracy(state, permuted) == pytest.approx(expected, abs=1e-15)


def test_filter_condlabel_matches_syncheck_on_clean_labels():
    clean = TestbedConfig.preset("custom")
    data, mc, tc = setup(clean, 0)
    cache = {}
    sc = run_strategy("syncheck", data, mc, tc, cache=cache).test_accuracy
    fc = run_strategy("filter_condlabel", data, mc, tc, cache=cache).test_accuracy
    assert abs(sc - fc) <= 0.01


def test_filter_condlabel_below_syncheck_when_mislabeled():
    noisy = TestbedConfig.preset("in_domain")
    sc, fc = [], []
    for seed in range(5):
        data, mc, tc = setup(noisy, seed)
        cache = {}
        sc.append(run_strategy("syncheck", data, mc, tc, cache=cache).test_accuracy)
        fc.append(run_strategy("filter_condlabel", data, mc, tc, cache=cache).test_accuracy)
    assert np.mean(fc) < np.mean(sc)


# ----------------------------------------------------------------------- cli

def _cfg(tmp_path, name, **body):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps({"out": str(tmp_path / name), **body}))
    return str(path), tmp_path / name


def test_gen_data_examples(tmp_path):
    cfg, out = _cfg(tmp_path, "a", preset="in_domain", testbed={"n_real": 10_000, "n_test": 10},
                    seeds=[0])
    assert cli.main(["gen-data", "--config", cfg]) == 0
    syn = Dataset.from_jsonl(out / "data/seed_0/synthetic.jsonl")
    mismatch = np.mean(syn.conditions != syn.latent)
    assert abs(mismatch - 0.3) < 5 * np.sqrt(0.21 / len(syn))
    cfg2, out2 = _cfg(tmp_path, "b", preset="in_domain", testbed={"n_real": 10_000, "n_test": 10},
                      seeds=[0])
    assert cli.main(["gen-data", "--config", cfg2]) == 0
    assert filecmp.cmp(out / "data/seed_0/synthetic.jsonl", out2 / "data/seed_0/synthetic.jsonl",
                       shallow=False)
    cfg3, out3 = _cfg(tmp_path, "c", preset="cross_domain", testbed={"n_real": 500}, seeds=[0])
    assert cli.main(["gen-data", "--config", cfg3]) == 0
    cov = TestbedConfig.preset("cross_domain").class_coverage
    latents = Dataset.from_jsonl(out3 / "data/seed_0/synthetic.jsonl").latent
    assert set(np.unique(latents)) <= set(cov)


def test_quality_examples(tmp_path):
    cfg, out = _cfg(tmp_path, "q", preset="custom", seeds=[0])
    assert cli.main(["gen-data", "--config", cfg]) == 0
    assert cli.main(["quality", "--config", cfg]) == 0
    rep = json.loads((out / "quality/seed_0/report.json").read_text())
    assert rep["js_tr"] < 0.1 and rep["js_ts"] < 0.1
    assert {"tr", "ts"} == set(rep["per_class_js"])


def test_quality_ranks_full_corruption_worst():
    tb = TestbedConfig.preset("custom")
    data, mc, tc = setup(tb, 0)
    js = {}
    for sigma in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
        noisy = build_data(replace(tb, affinity_noise_std=sigma), 0)
        js[sigma] = quality_report(data, mc, tc, noisy.synthetic).js_tr
    flipped = build_data(replace(tb, label_corruption_rate=1.0), 0)
    assert quality_report(data, mc, tc, flipped.synthetic).js_tr > max(js.values())


def test_full_preset_run_fits_budget(tmp_path):
    cfg, out = _cfg(tmp_path, "r", preset="in_domain",
                    strategies=["real_only", "mixture", "ssim_filter", "trts_filter", "syncheck"])
    assert cli.main(["gen-data", "--config", cfg]) == 0
    assert cli.main(["run", "--config", cfg]) == 0
    man = json.loads((out / "manifest_run.json").read_text())
    assert sum(v for k, v in man["wall_times"].items() if k.startswith("seed_")) < 600


def test_ablation_axis_rows(tmp_path):
    cfg, out = _cfg(tmp_path, "s", preset="cross_domain", testbed={"n_real": 200, "n_test": 100},
                    train={"epochs_total": 3, "warmup_epochs": 1}, seeds=[0],
                    sweep={"ablation": ["full", "drop_ova", "drop_cons_ent"]})
    assert cli.main(["sweep", "--config", cfg]) == 0
    summary = json.loads((out / "sweep/summary.json").read_text())
    assert set(summary["axes"]["ablation"]["variants"]) == {"full", "drop_ova", "drop_cons_ent"}


def test_verify_default_exit_zero(tmp_path):
    cfg, out = _cfg(tmp_path, "v")
    assert cli.main(["verify", "--config", cfg]) == 0
    assert json.loads((out / "verify/verify.json").read_text())["checks"]["tv_bound"]["n"] == 1000
