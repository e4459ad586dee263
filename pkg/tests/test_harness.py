import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wellde.de_core import NEGATIVE_INFINITY, DEConfig, Strategy
from wellde.harness import (
    CASES, MINI_ROCK, PAPER_SYNTHETIC_ROCK, CaseSpec, Spe10Rock, Stats, TrialError, TrialSummary, builtin_config,
    case_by_name, config_label, export_results, make_case, run_trials, summarize, summary_csv_from_finals)
from wellde.grid_field import FieldWindow, Grid, generate_synthetic_field, write_spe10_dataset

finite = st.floats(-1e9, 1e9, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- configurations

@pytest.mark.parametrize("k,expected", [
    (1, (100, 0.5, 0.9, Strategy.RAND_1)),
    (6, (100, 0.9, 0.5, Strategy.CURRENT_TO_BEST_1)),
    (8, (200, 0.9, 0.5, Strategy.CURRENT_TO_BEST_1)),
])
def test_builtin_config_examples(k, expected):
    c = builtin_config(k)
    assert (c.N, c.CR, c.F, c.strategy) == expected
    assert c.budget == 10_000


@pytest.mark.parametrize("k", [0, 9, -1])
def test_builtin_config_out_of_range(k):
    with pytest.raises(ValueError):
        builtin_config(k)


def test_mini_configs_scale_population_and_budget():
    assert (builtin_config(6, mini=True).N, builtin_config(6, mini=True).budget) == (20, 2000)
    assert builtin_config(3, mini=True).N == 40
    assert config_label(builtin_config(3)) == "config3"
    assert config_label(builtin_config(3, mini=True)) == "config3-mini"
    assert config_label(DEConfig(10, 0.7, 0.2, "rand/1", 50)) == "N10-F0.7-CR0.2-rand/1"


# ---------------------------------------------------------------- cases

@pytest.mark.parametrize("k,r,limit", [(1, 0.10, None), (2, 0.0, None), (3, 0.10, 1000.0)])
def test_case_invariants(k, r, limit):
    case = make_case(k)
    assert (case.r, case.flow_limit, case.n_injectors, case.n_producers, case.min_distance) == (
        r, limit, 2, 2, 250.0)
    assert case.economics.r == r
    assert case.bounds().upper == (60.0, 50.0) * 4
    with pytest.raises(ValueError):
        make_case(k, r=0.05)


def test_case_registry_and_mini_variants():
    assert sorted(CASES) == ["case1", "case1-mini", "case2", "case2-mini", "case3", "case3-mini"]
    mini = case_by_name("case3-mini")
    assert mini.mini and mini.rock == MINI_ROCK and mini.flow_limit == 1000.0
    assert mini.bounds().upper == (20.0, 20.0) * 4
    assert case_by_name(1).rock == PAPER_SYNTHETIC_ROCK
    with pytest.raises(ValueError):
        case_by_name("case4")


def test_case_rejects_out_of_range_bhp():
    with pytest.raises(ValueError):
        make_case(1, injector_bhp=(500.0,) * 5)
    with pytest.raises(ValueError):
        make_case(1, producer_bhp=(90.0,) * 5)


def test_spe10_rock_source_builds_the_window(tmp_path):
    rock = generate_synthetic_field(1, Grid(8, 6), math.log(80.0), 1.0, 1)
    sidecar = write_spe10_dataset(rock, tmp_path, "tiny")
    case = make_case(1, rock=Spe10Rock(str(sidecar), FieldWindow(1, 2, 1, 5, 4)))
    built = case.rock.build()
    assert built.equals(rock.subfield(2, 1, 5, 4))
    assert case.bounds().upper == (5.0, 4.0) * 4


# ---------------------------------------------------------------- statistics

def test_summarize_examples():
    assert summarize([5, 5, 5]) == Stats(5, 5, 5, 0, 5)
    s = summarize([1, 2, 3, 4])
    assert (s.best, s.worst, s.mean, s.median) == (4, 1, 2.5, 2.5)
    assert s.sd == pytest.approx(math.sqrt(5 / 3)) and round(s.sd, 4) == 1.2910
    assert summarize([2, 1, 3]).median == 2


def test_summarize_singleton_and_errors():
    s = summarize([7.5])
    assert s.best == s.worst == s.mean == s.median == 7.5 and s.sd == 0
    with pytest.raises(ValueError):
        summarize([])
    with pytest.raises(ValueError):
        summarize([1.0, NEGATIVE_INFINITY])


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40), st.randoms())
def test_summarize_is_permutation_invariant(values, rnd):
    shuffled = values[:]
    rnd.shuffle(shuffled)
    a, b = summarize(values), summarize(shuffled)
    assert (a.best, a.worst, a.median) == (b.best, b.worst, b.median)
    assert a.mean == pytest.approx(b.mean, rel=1e-12, abs=1e-6)
    assert a.sd == pytest.approx(b.sd, rel=1e-9, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40), st.floats(1e-3, 1e3))
def test_summarize_is_scale_equivariant(values, c):
    a, b = summarize(values), summarize([c * v for v in values])
    assert b.best == pytest.approx(c * a.best, rel=1e-12)
    assert b.worst == pytest.approx(c * a.worst, rel=1e-12)
    assert b.median == pytest.approx(c * a.median, rel=1e-12)
    assert b.mean == pytest.approx(c * a.mean, rel=1e-9, abs=1e-3)
    assert b.sd == pytest.approx(c * a.sd, rel=1e-9, abs=1e-3)


# ---------------------------------------------------------------- export

def fake_summary(n_trials=30, budget=120, seed=0, fail=()):
    rng = np.random.default_rng(seed)
    curves = np.maximum.accumulate(rng.uniform(1e8, 6e8, (n_trials, budget)), axis=1)
    for t in fail:
        curves[t] = -np.inf
    return TrialSummary("case1", "config6", [42 + t for t in range(n_trials)], list(curves[:, -1]), curves,
                        [0.0] * n_trials)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_export_cardinality_and_schemas(tmp_path):
    paths = export_results(fake_summary(), tmp_path)
    finals = read_csv(paths["finals.csv"])
    assert finals[0] == ["case", "config", "trial", "seed", "final_npv_usd"]
    assert len(finals) == 31
    assert [int(r[3]) for r in finals[1:]] == list(range(42, 72))
    conv = read_csv(paths["convergence.csv"])
    assert conv[0][:2] == ["eval_index", "mean_best_so_far_npv_usd"] and len(conv[0]) == 32
    assert [int(r[0]) for r in conv[1:]] == [50, 100, 120]
    dat = paths["convergence.dat"].read_text().splitlines()
    assert dat[0].startswith("#") and dat[-1].split()[0] == "120"
    assert len(read_csv(paths["summary.csv"])) == 2


def test_export_last_convergence_mean_matches_summary_mean(tmp_path):
    s = fake_summary()
    paths = export_results(s, tmp_path)
    last = read_csv(paths["convergence.csv"])[-1]
    summary = dict(zip(*read_csv(paths["summary.csv"])))
    assert float(last[1]) == pytest.approx(float(summary["mean_npv_usd"]), rel=1e-5)
    assert float(last[1]) == pytest.approx(s.stats.mean, rel=1e-5)


def test_statistics_recomputed_from_finals_match_summary(tmp_path):
    paths = export_results(fake_summary(n_trials=11), tmp_path)
    finals = [float(r[4]) for r in read_csv(paths["finals.csv"])[1:]]
    summary = dict(zip(*read_csv(paths["summary.csv"])))
    st_ = summarize(finals)
    for key, value in zip(["best", "worst", "mean", "sd", "median"], [st_.best, st_.worst, st_.mean, st_.sd,
                                                                       st_.median]):
        assert float(summary[f"{key}_npv_usd"]) == pytest.approx(value, rel=1e-5)
    assert summary_csv_from_finals(paths["finals.csv"].read_text()) == paths["summary.csv"].read_text()


def test_re_export_is_byte_identical(tmp_path):
    s = fake_summary()
    a = export_results(s, tmp_path / "a")
    b = export_results(s, tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()


def test_failed_trials_are_counted_and_excluded(tmp_path):
    s = fake_summary(n_trials=5, fail=(2,))
    assert s.failed_trials == 1 and s.stats == summarize([v for v in s.finals if math.isfinite(v)])
    summary = dict(zip(*read_csv(export_results(s, tmp_path)["summary.csv"])))
    assert summary["n_trials"] == "5" and summary["failed_trials"] == "1"
    assert math.isfinite(float(summary["worst_npv_usd"]))


def test_summary_from_malformed_finals():
    with pytest.raises(ValueError):
        summary_csv_from_finals("case,config\n")
    with pytest.raises(ValueError):
        summary_csv_from_finals("case,config,trial\nx,y,0\n")


# ---------------------------------------------------------------- trial batteries

SMALL = DEConfig(8, 0.5, 0.9, "current-to-best/1", budget=60)


def test_singleton_battery():
    s = run_trials(case_by_name("case1-mini"), SMALL, 1, base_seed=5)
    st_ = s.stats
    assert s.seeds == [5] and s.curves.shape == (1, 60)
    assert st_.best == st_.worst == st_.mean == st_.median == s.finals[0] and st_.sd == 0
    assert s.curves[0, -1] == s.finals[0]


def test_trials_use_consecutive_seeds_and_envelope():
    s = run_trials(case_by_name("case1-mini"), SMALL, 4, base_seed=42)
    assert s.seeds == [42, 43, 44, 45]
    ok = [v for v in s.finals if math.isfinite(v)]
    assert s.failed_trials == len(s.finals) - len(ok)
    assert all(s.stats.worst <= v <= s.stats.best for v in ok)
    assert all(all(a <= b for a, b in zip(c, c[1:])) for c in s.curves.tolist())


def test_concurrent_and_sequential_trials_agree():
    case = case_by_name("case1-mini")
    seq = run_trials(case, SMALL, 4, base_seed=7, jobs=1)
    par = run_trials(case, SMALL, 4, base_seed=7, jobs=2)
    assert seq.finals == par.finals
    assert np.array_equal(seq.curves, par.curves)


def test_evaluator_faults_carry_the_trial_index():
    calls = []

    def broken(x):
        calls.append(1)
        if len(calls) > 70:
            raise RuntimeError("boom")
        return -float(np.sum(x))
    with pytest.raises(TrialError, match="trial 1 .seed 9."):
        run_trials(case_by_name("case1-mini"), SMALL, 2, base_seed=8, evaluator=broken)


def test_all_infeasible_trial_is_reported_as_failed():
    s = run_trials(case_by_name("case1-mini"), SMALL, 2, evaluator=lambda x: NEGATIVE_INFINITY)
    assert s.failed_trials == 2 and s.stats is None


def test_case_spec_is_hashable_for_worker_caching():
    assert hash(make_case(1, mini=True)) == hash(make_case(1, mini=True))
    assert isinstance(make_case(2), CaseSpec)
