"""Multi-task evolutionary fuzzing and its ablation variants.

Variants:

- ``mtea``: per-type populations; each parent slot either pulls an input from
  another task's mating pool and translates it (probability ``p_transfer``)
  or mutates its parent. Surrogate fitness, (mu+lambda) survival.
- ``stea``: ``mtea`` with ``p_transfer`` forced to 0.
- ``ran``: parents and survivors picked uniformly at random; no classifier.
- ``cfg_danuoyi``: ``mtea`` with mutation replaced by a fresh grammar derivation.
- ``ris``: plain grammar sampling, no evolution.

Every candidate that reaches the oracle costs one query. Bypassing candidates
go to the task's archive and never enter a population; their child slot is
refilled with a fresh derivation that the oracle blocks, so populations stay
free of known bypasses.

All randomness for one parent slot comes from a generator seeded by
(seed, stream, generation, task, slot), so results do not depend on batching
or on whether a run was resumed from a checkpoint.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grammar import (ALL_TYPES, DEFAULT_MAX_DEPTH, DerivationTree, Grammar, InjectionType, derive,
                      parse_tokens, render)
from .mutation import GRAMMAR, TRANSLATION, MutationTables, TestInput, default_tables, mutate
from .text import decode_chain, tokenize
from .waf import check_many

VARIANTS = ("mtea", "stea", "ran", "cfg_danuoyi", "ris")
_TYPE_INDEX = {t: i for i, t in enumerate(ALL_TYPES)}

# named random streams
_INIT, _SLOT, _SELECT, _REPLACE, _RIS, _REFILL = range(6)


class ConfigError(ValueError):
    pass


class ResampleCapError(RuntimeError):
    def __init__(self, injection_type, archive_size: int, draws: int):
        super().__init__(f"{InjectionType(injection_type).value}: could not fill the population "
                         f"with non-bypassing inputs after {draws} draws "
                         f"({archive_size} distinct bypasses archived)")
        self.injection_type = injection_type
        self.archive_size = archive_size
        self.draws = draws


@dataclass
class RunConfig:
    tasks: tuple = ALL_TYPES
    pop_size: int = 100
    generations: int = 50
    p_transfer: float = 0.5
    early_stage_generations: int = 10
    seed: int = 0
    oracle: str = "sim:bundled"
    variant: str = "mtea"
    query_budget: int | None = None
    max_depth: int = DEFAULT_MAX_DEPTH
    replace_redraws: int = 10

    def __post_init__(self) -> None:
        self.tasks = tuple(InjectionType(t) for t in self.tasks)
        if not self.tasks:
            raise ConfigError("at least one task is required")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError("tasks must be distinct")
        if self.pop_size < 2:
            raise ConfigError("pop_size must be >= 2")
        if self.generations < 1:
            raise ConfigError("generations must be >= 1")
        if not 0.0 <= self.p_transfer <= 1.0:
            raise ConfigError("p_transfer must lie in [0, 1]")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.query_budget is not None and self.query_budget < 1:
            raise ConfigError("query_budget must be positive")

    @property
    def effective_p_transfer(self) -> float:
        return 0.0 if self.variant == "stea" or len(self.tasks) < 2 else self.p_transfer

    @property
    def uses_classifier(self) -> bool:
        return self.variant in ("mtea", "stea", "cfg_danuoyi")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [t.value for t in self.tasks]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return cls(**data)


def _rng(seed: int, stream: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, *key)))


@dataclass
class Member:
    input: TestInput
    fitness: float


@dataclass
class Archive:
    """Distinct (by raw payload) bypassing inputs of one task."""

    entries: dict = field(default_factory=dict)

    def add(self, inp: TestInput, generation: int) -> bool:
        if inp.payload in self.entries:
            return False
        self.entries[inp.payload] = (inp, generation)
        return True

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, payload: str) -> bool:
        return payload in self.entries

    @property
    def canonical_count(self) -> int:
        return len({decode_chain(p) for p in self.entries})

    def records(self) -> list:
        return [{"payload": inp.payload, "tokens": list(inp.tokens), "origin": inp.origin,
                 "generation": gen} for inp, gen in self.entries.values()]


@dataclass
class Models:
    """Everything a run needs besides the oracle."""

    grammars: dict
    classifiers: dict = field(default_factory=dict)
    translators: dict = field(default_factory=dict)
    tables: MutationTables | None = None

    def __post_init__(self) -> None:
        self.grammars = {InjectionType(k): v for k, v in self.grammars.items()}
        self.classifiers = {InjectionType(k): v for k, v in (self.classifiers or {}).items()}
        self.translators = {(InjectionType(a), InjectionType(b)): v
                            for (a, b), v in (self.translators or {}).items()}
        if self.tables is None:
            self.tables = default_tables()


@dataclass
class FuzzState:
    generation: int
    populations: dict
    mating_pool: dict
    archives: dict
    queries: dict
    trajectory: dict
    exhausted: dict
    fitness_cache: dict = field(default_factory=dict)
    translation_cache: dict = field(default_factory=dict)


class Fuzzer:
    """Runs one campaign. ``oracle`` is any callable payload -> WafVerdict."""

    def __init__(self, config: RunConfig, models: Models, oracle):
        self.config = config
        self.models = models
        self.oracle = oracle
        for t in config.tasks:
            if t not in models.grammars:
                raise ConfigError(f"no grammar for task {t.value}")
            if config.uses_classifier and t not in models.classifiers:
                raise ConfigError(f"variant {config.variant} needs a classifier for {t.value}")

    # -- helpers -------------------------------------------------------------

    def _grammar(self, t) -> Grammar:
        return self.models.grammars[t]

    def _fresh(self, t, rng) -> TestInput:
        return TestInput.from_tree(t, derive(self._grammar(t), rng, self.config.max_depth), GRAMMAR)

    def _remaining(self, state: FuzzState, t) -> int:
        if self.config.query_budget is None:
            return 1 << 62
        return max(0, self.config.query_budget - state.queries[t.value])

    def _query(self, state: FuzzState, t, inputs: list) -> list:
        verdicts = check_many(self.oracle, [x.payload for x in inputs])
        state.queries[t.value] += len(inputs)
        return [v.bypassed for v in verdicts]

    def _fitness(self, state: FuzzState, t, inputs: list) -> list:
        if not self.config.uses_classifier:
            return [0.0] * len(inputs)
        cache = state.fitness_cache.setdefault(t.value, {})
        todo = sorted({x.payload for x in inputs if x.payload not in cache})
        if todo:
            probs = self.models.classifiers[t].predict_tokens(
                [TestInput(t, p).tokens for p in todo])
            for p, v in zip(todo, probs):
                cache[p] = float(v)
        return [cache[x.payload] for x in inputs]

    # -- initialization ------------------------------------------------------

    def initialize(self) -> FuzzState:
        cfg = self.config
        state = FuzzState(0, {}, {}, {t.value: Archive() for t in cfg.tasks},
                          {t.value: 0 for t in cfg.tasks}, {t.value: [] for t in cfg.tasks},
                          {t.value: False for t in cfg.tasks})
        for t in cfg.tasks:
            rng = _rng(cfg.seed, _INIT, _TYPE_INDEX[t])
            members: list = []
            draws, cap = 0, 100 * cfg.pop_size
            while len(members) < cfg.pop_size:
                if draws >= cap:
                    raise ResampleCapError(t, len(state.archives[t.value]), draws)
                need = min(cfg.pop_size - len(members), cap - draws)
                batch = [self._fresh(t, rng) for _ in range(need)]
                draws += need
                for inp, bypassed in zip(batch, self._query(state, t, batch)):
                    if bypassed:
                        state.archives[t.value].add(inp, 0)
                    else:
                        members.append(inp)
            fits = self._fitness(state, t, members)
            state.populations[t.value] = [Member(x, f) for x, f in zip(members, fits)]
            state.mating_pool[t.value] = list(members)
            state.trajectory[t.value].append(len(state.archives[t.value]))
            state.exhausted[t.value] = self._remaining(state, t) == 0
        return state

    # -- one generation ------------------------------------------------------

    def _translate(self, state: FuzzState, requests: dict) -> dict:
        """requests: (src, dst) -> list of source inputs. Returns payload-keyed results."""
        from .translator import TranslationFailure, translate_many

        out = {}
        for (src, dst), inputs in sorted(requests.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            cache = state.translation_cache.setdefault(f"{src.value}>{dst.value}", {})
            model = self.models.translators.get((src, dst))
            todo = sorted({x.payload for x in inputs if x.payload not in cache})
            if todo:
                if model is None:
                    for p in todo:
                        cache[p] = None
                else:
                    results = translate_many(model, [TestInput(src, p) for p in todo])
                    for p, r in zip(todo, results):
                        cache[p] = None if isinstance(r, TranslationFailure) else self._snap(dst, r)
            for x in inputs:
                out[(src, dst, x.payload)] = cache[x.payload]
        return out

    def _snap(self, t, translated: TestInput) -> dict:
        """Map a translation onto the task grammar when its tokens allow it, so
        the result is a grammar sentence with a derivation tree."""
        tree = parse_tokens(self._grammar(t), translated.tokens, tokenize, self.config.max_depth)
        if tree is None:
            return {"payload": translated.payload, "tree": None}
        return {"payload": render(tree), "tree": tree.to_dict()}

    def _candidates(self, state: FuzzState, t) -> list:
        cfg = self.config
        g = state.generation
        others = [x for x in cfg.tasks if x != t]
        parents = state.populations[t.value]
        pool = state.mating_pool[t.value]
        p_transfer = cfg.effective_p_transfer
        plans = []
        for slot in range(len(parents)):
            rng = _rng(cfg.seed, _SLOT, g, _TYPE_INDEX[t], slot)
            if cfg.variant == "ran":
                parent = pool[int(rng.integers(len(pool)))]
            else:
                parent = parents[slot].input
            source = None
            if others and rng.random() < p_transfer:
                x = others[int(rng.integers(len(others)))]
                m_x = state.mating_pool[x.value]
                source = (x, m_x[int(rng.integers(len(m_x)))])
            plans.append((rng, parent, source))

        requests: dict = {}
        for _, _, source in plans:
            if source is not None:
                requests.setdefault((source[0], t), []).append(source[1])
        translated = self._translate(state, requests)

        known = set(state.archives[t.value].entries) | {m.input.payload for m in parents}
        out = []
        for rng, parent, source in plans:
            cand = None
            if source is not None:
                res = translated[(source[0], t, source[1].payload)]
                # a translation the task already knows adds nothing: treat as failed
                if res is not None and res["payload"] not in known:
                    tree = DerivationTree.from_dict(res["tree"]) if res["tree"] else None
                    cand = TestInput(t, res["payload"], TRANSLATION, tree)
                    known.add(res["payload"])
            if cand is None:
                if cfg.variant == "cfg_danuoyi":
                    cand = self._fresh(t, rng)
                else:
                    cand = mutate(parent, self._grammar(t), rng, self.models.tables)
            out.append(cand)
        return out

    def _step_task(self, state: FuzzState, t) -> None:
        cfg = self.config
        g = state.generation
        archive = state.archives[t.value]
        cands = self._candidates(state, t)
        cands = cands[:self._remaining(state, t)]
        children = []
        for slot, (cand, bypassed) in enumerate(zip(cands, self._query(state, t, cands))):
            if not bypassed:
                children.append(cand)
                continue
            archive.add(cand, g)
            refill = self._checked_fresh(state, t, _rng(cfg.seed, _REFILL, g, _TYPE_INDEX[t], slot))
            if refill is not None:
                children.append(refill)
        fits = self._fitness(state, t, children)
        combined = state.populations[t.value] + [Member(c, f) for c, f in zip(children, fits)]

        if cfg.variant == "ran":
            rng = _rng(cfg.seed, _SELECT, g, _TYPE_INDEX[t])
            keep = np.sort(rng.choice(len(combined), size=cfg.pop_size, replace=False))
            survivors = [combined[i] for i in keep]
        else:
            survivors = select_top(combined, cfg.pop_size)

        if cfg.uses_classifier and g <= cfg.early_stage_generations:
            survivors = self._replace_below_average(state, t, survivors)
        state.populations[t.value] = survivors

    def _checked_fresh(self, state: FuzzState, t, rng) -> TestInput | None:
        """A fresh derivation the oracle blocks. Bypassing draws are archived;
        gives up after ``replace_redraws`` draws or when the budget runs out."""
        for _ in range(self.config.replace_redraws):
            if self._remaining(state, t) == 0:
                return None
            fresh = self._fresh(t, rng)
            if not self._query(state, t, [fresh])[0]:
                return fresh
            state.archives[t.value].add(fresh, state.generation)
        return None

    def _replace_below_average(self, state: FuzzState, t, members: list) -> list:
        cfg = self.config
        g = state.generation
        mean = float(np.mean([m.fitness for m in members]))
        out = list(members)
        for slot, m in enumerate(members):
            if m.fitness >= mean:
                continue
            fresh = self._checked_fresh(state, t, _rng(cfg.seed, _REPLACE, g, _TYPE_INDEX[t], slot))
            if fresh is not None:
                out[slot] = Member(fresh, self._fitness(state, t, [fresh])[0])
        return out

    def step_generation(self, state: FuzzState) -> FuzzState:
        state.generation += 1
        for t in self.config.tasks:
            if state.exhausted[t.value]:
                continue
            self._step_task(state, t)
            state.exhausted[t.value] = self._remaining(state, t) == 0
        for t in self.config.tasks:
            state.mating_pool[t.value] = [m.input for m in state.populations[t.value]]
            state.trajectory[t.value].append(len(state.archives[t.value]))
        return state

    def finished(self, state: FuzzState) -> bool:
        return state.generation >= self.config.generations or all(state.exhausted.values())

    def run(self, state: FuzzState | None = None, checkpoint: str | Path | None = None) -> FuzzState:
        if self.config.variant == "ris":
            return self.run_ris()
        state = self.initialize() if state is None else state
        while not self.finished(state):
            self.step_generation(state)
            if checkpoint is not None:
                save_checkpoint(checkpoint, self.config, state)
        return state

    # -- random sampling baseline ---------------------------------------------

    def run_ris(self, samples: int | None = None) -> FuzzState:
        cfg = self.config
        if samples is None:
            samples = cfg.query_budget or cfg.pop_size * (cfg.generations + 1)
        state = FuzzState(0, {}, {}, {t.value: Archive() for t in cfg.tasks},
                          {t.value: 0 for t in cfg.tasks}, {t.value: [] for t in cfg.tasks},
                          {t.value: True for t in cfg.tasks})
        for t in cfg.tasks:
            rng = _rng(cfg.seed, _RIS, _TYPE_INDEX[t])
            distinct: set = set()
            done = 0
            while done < samples:
                batch = [self._fresh(t, rng) for _ in range(min(cfg.pop_size, samples - done))]
                for inp, bypassed in zip(batch, self._query(state, t, batch)):
                    distinct.add(inp.payload)
                    if bypassed:
                        state.archives[t.value].add(inp, done // cfg.pop_size)
                done += len(batch)
                state.trajectory[t.value].append(len(state.archives[t.value]))
            state.populations[t.value] = []
            state.mating_pool[t.value] = []
            state.fitness_cache[t.value] = {"distinct_samples": len(distinct)}
        state.generation = max((len(v) for v in state.trajectory.values()), default=0)
        return state


def select_top(members: list, m: int) -> list:
    """(mu+lambda) survival: the m fittest, ties to the earlier member."""
    order = sorted(range(len(members)), key=lambda i: (-members[i].fitness, i))
    return [members[i] for i in order[:m]]


# -- reports and checkpoints ---------------------------------------------------

def build_report(config: RunConfig, state: FuzzState) -> dict:
    tasks = {}
    for t in config.tasks:
        a = state.archives[t.value]
        entry = {"archive_count": len(a), "canonical_count": a.canonical_count,
                 "queries": state.queries[t.value], "trajectory": list(state.trajectory[t.value])}
        if config.variant == "ris":
            n = state.queries[t.value]
            distinct = state.fitness_cache.get(t.value, {}).get("distinct_samples", 0)
            entry["samples"] = n
            entry["distinct_fraction"] = distinct / n if n else 0.0
        tasks[t.value] = entry
    return {"format_version": 1, "config": config.to_dict(), "generations": state.generation,
            "tasks": tasks,
            "archive_files": {t.value: f"archive_{t.value}.jsonl" for t in config.tasks}}


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_outputs(out_dir, config: RunConfig, state: FuzzState) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(config, state)
    for t in config.tasks:
        lines = [json.dumps(r, sort_keys=True) for r in state.archives[t.value].records()]
        (out / f"archive_{t.value}.jsonl").write_text("".join(x + "\n" for x in lines), encoding="utf-8")
    (out / "report.json").write_text(report_json(report), encoding="utf-8")
    return report


def save_checkpoint(path, config: RunConfig, state: FuzzState) -> None:
    data = {
        "format_version": 1, "config": config.to_dict(), "generation": state.generation,
        "populations": {k: [{"input": m.input.to_dict(), "fitness": m.fitness} for m in v]
                        for k, v in state.populations.items()},
        "mating_pool": {k: [x.to_dict() for x in v] for k, v in state.mating_pool.items()},
        "archives": {k: [{"input": inp.to_dict(), "generation": g} for inp, g in a.entries.values()]
                     for k, a in state.archives.items()},
        "queries": state.queries, "trajectory": state.trajectory, "exhausted": state.exhausted,
        "fitness_cache": state.fitness_cache, "translation_cache": state.translation_cache,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint format")
    config = RunConfig.from_dict(data["config"])
    archives = {}
    for k, entries in data["archives"].items():
        a = Archive()
        for e in entries:
            a.add(TestInput.from_dict(e["input"]), e["generation"])
        archives[k] = a
    state = FuzzState(
        data["generation"],
        {k: [Member(TestInput.from_dict(m["input"]), m["fitness"]) for m in v]
         for k, v in data["populations"].items()},
        {k: [TestInput.from_dict(x) for x in v] for k, v in data["mating_pool"].items()},
        archives, data["queries"], data["trajectory"], data["exhausted"],
        data["fitness_cache"], data["translation_cache"])
    return config, state


def run(config: RunConfig, models: Models, oracle, out_dir=None, checkpoint=None) -> dict:
    """Run a campaign and return its report; archives are written when ``out_dir`` is given."""
    fuzzer = Fuzzer(config, models, oracle)
    state = fuzzer.run(checkpoint=checkpoint)
    if out_dir is not None:
        return write_outputs(out_dir, config, state)
    return build_report(config, state)


def resume(checkpoint, models: Models, oracle, out_dir=None) -> dict:
    config, state = load_checkpoint(checkpoint)
    fuzzer = Fuzzer(config, models, oracle)
    state = fuzzer.run(state=state, checkpoint=checkpoint)
    if out_dir is not None:
        return write_outputs(out_dir, config, state)
    return build_report(config, state)
