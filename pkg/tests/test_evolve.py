import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyfuzz.evolve import (_INIT, _RIS, _TYPE_INDEX, ConfigError, Fuzzer, Member, Models, ResampleCapError,
                             RunConfig, build_report, load_checkpoint, report_json, resume, run, save_checkpoint,
                             select_top, write_outputs)
from polyfuzz.evolve import _rng
from polyfuzz.grammar import ALL_TYPES, derive, load_grammars, render
from polyfuzz.mutation import TestInput
from polyfuzz.waf import SimulatorOracle, parse_ruleset

SMALL = dict(pop_size=20, generations=6, seed=3)


def block_all():
    return SimulatorOracle(parse_ruleset({"format_version": 1, "rules": [{"id": "all", "pattern": ""}]}))


def allow_all():
    return SimulatorOracle(parse_ruleset({"format_version": 1, "rules": []}))


def check_boundary(fuzzer, state, oracle):
    m = fuzzer.config.pop_size
    for t in fuzzer.config.tasks:
        k = t.value
        pop = state.populations[k]
        assert len(pop) == m
        assert not any(oracle(x.input.payload).bypassed for x in pop)
        assert [x.input for x in pop] == state.mating_pool[k]
        archive = state.archives[k]
        assert all(oracle(p).bypassed for p in archive.entries)
        payloads = [r["payload"] for r in archive.records()]
        assert len(payloads) == len(set(payloads))
        traj = state.trajectory[k]
        assert all(a <= b for a, b in zip(traj, traj[1:]))
        assert traj[-1] == len(archive)


@pytest.mark.parametrize("variant", ["mtea", "stea", "ran", "cfg_danuoyi"])
def test_invariants_every_generation(tiny_models, sim_oracle, variant):
    fz = Fuzzer(RunConfig(variant=variant, **SMALL), tiny_models, sim_oracle)
    state = fz.initialize()
    check_boundary(fz, state, sim_oracle)
    while not fz.finished(state):
        fz.step_generation(state)
        check_boundary(fz, state, sim_oracle)
    assert state.generation == SMALL["generations"]


def _archives(report_dir):
    return {t.value: (report_dir / f"archive_{t.value}.jsonl").read_text() for t in ALL_TYPES}


def test_p_transfer_zero_equals_stea(tiny_models, sim_oracle, tmp_path):
    run(RunConfig(variant="mtea", p_transfer=0.0, **SMALL), tiny_models, sim_oracle, tmp_path / "a")
    run(RunConfig(variant="stea", **SMALL), tiny_models, sim_oracle, tmp_path / "b")
    assert _archives(tmp_path / "a") == _archives(tmp_path / "b")


def test_same_seed_byte_identical(tiny_models, sim_oracle, tmp_path):
    for name in ("a", "b"):
        run(RunConfig(**SMALL), tiny_models, sim_oracle, tmp_path / name)
    for f in ["report.json"] + [f"archive_{t.value}.jsonl" for t in ALL_TYPES]:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seeds_differ(tiny_models, sim_oracle):
    a = run(RunConfig(**{**SMALL, "seed": 1}), tiny_models, sim_oracle)
    b = run(RunConfig(**{**SMALL, "seed": 2}), tiny_models, sim_oracle)
    assert a["tasks"] != b["tasks"]


def test_initial_population_deterministic(tiny_models, sim_oracle):
    a = Fuzzer(RunConfig(**SMALL), tiny_models, sim_oracle).initialize()
    b = Fuzzer(RunConfig(**SMALL), tiny_models, sim_oracle).initialize()
    for t in ALL_TYPES:
        assert [m.input.payload for m in a.populations[t.value]] == [m.input.payload for m in b.populations[t.value]]


def test_block_all_oracle(tiny_models):
    cfg = RunConfig(early_stage_generations=0, **SMALL)
    fz = Fuzzer(cfg, tiny_models, block_all())
    state = fz.run()
    for t in ALL_TYPES:
        assert len(state.populations[t.value]) == cfg.pop_size
        assert len(state.archives[t.value]) == 0


def test_allow_all_oracle_hits_resample_cap(tiny_models):
    with pytest.raises(ResampleCapError) as err:
        Fuzzer(RunConfig(tasks=["SQLi"], pop_size=5, variant="ran"), tiny_models, allow_all()).initialize()
    assert err.value.draws == 500
    assert 0 < err.value.archive_size <= 500
    assert str(err.value.archive_size) in str(err.value)


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=30), st.integers(1, 30))
@settings(max_examples=200)
def test_select_top_matches_sort_oracle(fits, m):
    m = min(m, len(fits))
    members = [Member(TestInput("SQLi", str(i)), f) for i, f in enumerate(fits)]
    got = select_top(members, m)
    assert len(got) == m
    ranked = sorted(fits, reverse=True)
    assert sorted((x.fitness for x in got), reverse=True) == ranked[:m]
    if m < len(fits):
        assert min(x.fitness for x in got) >= ranked[m]


def test_survivors_are_top_of_union(tiny_models, sim_oracle):
    # E=0 disables replacement, so survivors are exactly top-m of parents + children
    fz = Fuzzer(RunConfig(early_stage_generations=0, **SMALL), tiny_models, sim_oracle)
    state = fz.initialize()
    before = {k: [m.fitness for m in v] for k, v in state.populations.items()}
    fz.step_generation(state)
    for k, pop in state.populations.items():
        assert min(m.fitness for m in pop) >= sorted(before[k], reverse=True)[len(pop) - 1] - 1e-12


def test_checkpoint_resume_equivalence(tiny_models, sim_oracle, tmp_path):
    cfg = RunConfig(**SMALL)
    full = run(cfg, tiny_models, sim_oracle)
    fz = Fuzzer(cfg, tiny_models, sim_oracle)
    state = fz.initialize()
    for _ in range(2):
        fz.step_generation(state)
    ckpt = tmp_path / "ckpt.json"
    save_checkpoint(ckpt, cfg, state)
    assert load_checkpoint(ckpt)[1].generation == 2
    assert report_json(resume(ckpt, tiny_models, sim_oracle)) == report_json(full)


def test_query_budget_respected(tiny_models, sim_oracle):
    rep = run(RunConfig(query_budget=70, **{**SMALL, "generations": 50}), tiny_models, sim_oracle)
    for entry in rep["tasks"].values():
        assert entry["queries"] <= 70
    assert rep["generations"] < 50


def test_ran_needs_no_classifier(sim_oracle):
    models = Models(load_grammars())
    rep = run(RunConfig(variant="ran", **SMALL), models, sim_oracle)
    assert set(rep["tasks"]) == {t.value for t in ALL_TYPES}
    with pytest.raises(ConfigError):
        Fuzzer(RunConfig(variant="mtea", **SMALL), models, sim_oracle)


def test_ris_equals_direct_sampling(sim_oracle):
    grammars = load_grammars()
    cfg = RunConfig(variant="ris", pop_size=10, generations=4, seed=5)
    rep = run(cfg, Models(grammars), sim_oracle)
    n = 10 * 5
    for t in ALL_TYPES:
        r = _rng(5, _RIS, _TYPE_INDEX[t])
        payloads = [render(derive(grammars[t], r)) for _ in range(n)]
        bypass = {p for p in payloads if sim_oracle(p).bypassed}
        entry = rep["tasks"][t.value]
        assert entry["archive_count"] == len(bypass)
        assert entry["distinct_fraction"] == pytest.approx(len(set(payloads)) / n)
        assert entry["samples"] == n


def test_init_stream_matches_direct_derivation(tiny_models):
    cfg = RunConfig(tasks=["OSi"], pop_size=5, seed=9, variant="ran")
    state = Fuzzer(cfg, tiny_models, block_all()).initialize()
    r = _rng(9, _INIT, _TYPE_INDEX[ALL_TYPES[4]])
    expected = [render(derive(tiny_models.grammars[ALL_TYPES[4]], r)) for _ in range(5)]
    assert ALL_TYPES[4].value == "OSi"
    assert [m.input.payload for m in state.populations["OSi"]] == expected


def test_outputs_written(tiny_models, sim_oracle, tmp_path):
    cfg = RunConfig(**{**SMALL, "generations": 2})
    fz = Fuzzer(cfg, tiny_models, sim_oracle)
    state = fz.run()
    report = write_outputs(tmp_path, cfg, state)
    assert json.loads((tmp_path / "report.json").read_text()) == report
    for t in ALL_TYPES:
        lines = (tmp_path / f"archive_{t.value}.jsonl").read_text().splitlines()
        assert len(lines) == report["tasks"][t.value]["archive_count"]
        assert len(report["tasks"][t.value]["trajectory"]) == 3
    assert report == build_report(cfg, state)


@pytest.mark.parametrize("bad", [dict(pop_size=1), dict(generations=0), dict(p_transfer=1.5),
                                 dict(variant="nope"), dict(tasks=[]), dict(tasks=["SQLi", "SQLi"]),
                                 dict(query_budget=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        RunConfig(**bad)


def test_config_dict_round_trip():
    cfg = RunConfig(tasks=["XSSi", "OSi"], seed=4, query_budget=10)
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
