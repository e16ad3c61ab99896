"""Grammar-guided genetic programming over multigrid derivation trees.

Contains tree initialization and variation operators, NSGA-II sorting and
selection, and the (mu + lambda) loop with evaluation cache, generalization
schedule and checkpoints.  Every random decision draws from a generator keyed
by ``(seed, generation, stream)`` so that a run is reproducible regardless of
how evaluations are distributed over workers.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .grammar import DerivationTree, GrammarError, PrimitiveSet, Terminal, deserialize

SELECT_STREAM = 1 << 20
INIT_STREAM = 1 << 21
RESTART_STREAM = 1 << 22


def stream(seed: int, generation: int, index: int) -> np.random.Generator:
    """Independent generator for one (seed, generation, index) triple."""
    return np.random.default_rng([int(seed), int(generation), int(index)])


# --------------------------------------------------------------------------
# initialization and variation

def _terminal_ratio(pset: PrimitiveSet) -> float:
    nt = len(pset.all_terminals())
    return nt / (nt + len(pset.productions()))


def _grow(pset, type_, min_depth, height, rng, max_size, subtree=None, ratio=None):
    """Depth-first random derivation from ``type_``; ``None`` if ``max_size`` is exceeded.

    At or beyond ``height`` a terminal is chosen whenever the required type
    has one, otherwise growth continues with a random production.  When
    ``subtree`` is given, a hole of its root type that should be closed is
    filled with it instead (at most once).
    """
    ratio = _terminal_ratio(pset) if ratio is None else ratio
    nodes = []
    stack = [(0, type_)]
    inserted = subtree is None
    while stack:
        depth, t = stack.pop()
        stop = depth >= height or (depth >= min_depth and rng.random() < ratio)
        if stop and not inserted and depth > 0 and t == subtree[0].output:
            nodes.extend(subtree)
            inserted = True
        else:
            terms = pset.terminals.get(t, ())
            prims = pset.primitives.get(t, ())
            if (stop and terms) or not prims:
                if not terms:
                    raise GrammarError(f"no production or terminal yields {t}")
                node = terms[rng.integers(len(terms))]
            else:
                node = prims[rng.integers(len(prims))]
            nodes.append(node)
            for arg in reversed(node.inputs):
                stack.append((depth + 1, arg))
        if len(nodes) > max_size:
            return None, inserted
    return DerivationTree(nodes), inserted


def gen_grow(pset: PrimitiveSet, min_depth: int, max_depth: int, rng, max_size: int = 150,
             type_=None) -> DerivationTree:
    """Random tree whose depth limit is drawn from ``[min_depth, max_depth]``; redrawn until size <= max_size."""
    if min_depth > max_depth:
        raise ValueError("min_depth must not exceed max_depth")
    type_ = pset.start if type_ is None else type_
    ratio = _terminal_ratio(pset)
    while True:
        height = int(rng.integers(min_depth, max_depth + 1))
        tree, _ = _grow(pset, type_, min_depth, height, rng, max_size, ratio=ratio)
        if tree is not None:
            return tree


def mutate_terminal(tree: DerivationTree, pset: PrimitiveSet, rng):
    """Replace one terminal by a different terminal of the same type; ``(tree, changed)``."""
    candidates = [i for i, n in enumerate(tree)
                  if isinstance(n, Terminal) and len(pset.terminals.get(n.output, ())) > 1]
    if not candidates:
        return DerivationTree(tree), False
    i = candidates[rng.integers(len(candidates))]
    options = [t for t in pset.terminals[tree[i].output] if t.name != tree[i].name]
    out = DerivationTree(tree)
    out[i] = options[rng.integers(len(options))]
    return out, True


def mutate_subtree(tree: DerivationTree, pset: PrimitiveSet, depth_interval, rng,
                   terminal_probability: float = 1.0 / 3.0, max_size: int = 150):
    """Subtree insertion/replacement or terminal mutation; returns ``(tree, changed)``.

    With probability ``terminal_probability`` one terminal is redrawn.
    Otherwise a uniformly chosen subtree is replaced by a freshly grown one of
    the same type, in which the old subtree is grafted at the first hole of
    matching type where growth would stop (insertion); if no such hole occurs
    the old subtree is discarded (replacement).
    """
    if rng.random() < terminal_probability:
        out, changed = mutate_terminal(tree, pset, rng)
        if changed:
            return out, True
    lo, hi = depth_interval
    for _ in range(20):
        i = int(rng.integers(len(tree)))
        end = tree.subtree_end(i)
        old = tree[i:end]
        t = tree[i].output
        if not pset.primitives.get(t):
            out, changed = mutate_terminal(DerivationTree(old), pset, rng)
            if not changed:
                continue
            new = list(out)
        else:
            height = int(rng.integers(lo, hi + 1))
            budget = max_size - (len(tree) - len(old))
            if budget < 1:
                continue
            sub, _ = _grow(pset, t, lo, height, rng, budget, subtree=old)
            if sub is None:
                continue
            new = list(sub)
        out = DerivationTree(list(tree[:i]) + new + list(tree[end:]))
        if out.key != tree.key:
            return out, True
    return DerivationTree(tree), False


def crossover_subtree(a: DerivationTree, b: DerivationTree, rng, points=None, max_size: int | None = None):
    """Swap two subtrees rooted at nodes of equal type; returns ``(a', b', swapped)``.

    The crossing type is drawn uniformly among the types shared by both trees
    (root excluded), then one node of that type in each tree.  ``points``
    forces the two node indices.
    """
    if points is None:
        types_a: dict = {}
        types_b: dict = {}
        for i in range(1, len(a)):
            types_a.setdefault(a[i].output, []).append(i)
        for j in range(1, len(b)):
            types_b.setdefault(b[j].output, []).append(j)
        common = [t for t in types_a if t in types_b]
        if not common:
            return DerivationTree(a), DerivationTree(b), False
        t = common[rng.integers(len(common))]
        i = types_a[t][rng.integers(len(types_a[t]))]
        j = types_b[t][rng.integers(len(types_b[t]))]
    else:
        i, j = points
        if a[i].output != b[j].output:
            return DerivationTree(a), DerivationTree(b), False
    ea, eb = a.subtree_end(i), b.subtree_end(j)
    ca = DerivationTree(list(a[:i]) + list(b[j:eb]) + list(a[ea:]))
    cb = DerivationTree(list(b[:j]) + list(a[i:ea]) + list(b[eb:]))
    if max_size is not None:
        if len(ca) > max_size:
            ca = DerivationTree(a)
        if len(cb) > max_size:
            cb = DerivationTree(b)
    return ca, cb, True


# --------------------------------------------------------------------------
# NSGA-II

def dominates(f, g) -> bool:
    return all(x <= y for x, y in zip(f, g)) and any(x < y for x, y in zip(f, g))


def nsga2_fronts(fitnesses) -> list:
    """Fast non-dominated sort; returns lists of indices, best front first."""
    n = len(fitnesses)
    fit = [tuple(f) for f in fitnesses]
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(fit[i], fit[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(fit[j], fit[i]):
                dominated_by[j].append(i)
                counts[i] += 1
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return fronts


def crowding(fitnesses, front) -> dict:
    """Crowding distance of each index in ``front`` (boundary points get infinity)."""
    dist = {i: 0.0 for i in front}
    if len(front) <= 2:
        return {i: np.inf for i in front}
    m = len(fitnesses[front[0]])
    for k in range(m):
        order = sorted(front, key=lambda i: (fitnesses[i][k], i))
        lo, hi = fitnesses[order[0]][k], fitnesses[order[-1]][k]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = hi - lo
        if span == 0 or not np.isfinite(span):
            continue
        for a, b, c in zip(order, order[1:], order[2:]):
            dist[b] += (fitnesses[c][k] - fitnesses[a][k]) / span
    return dist


def _rank_and_crowding(fitnesses):
    rank, crowd = {}, {}
    for r, front in enumerate(nsga2_fronts(fitnesses)):
        d = crowding(fitnesses, front)
        for i in front:
            rank[i] = r
            crowd[i] = d[i]
    return rank, crowd


def select_elitist(fitnesses, mu: int, rng) -> list:
    """Indices of the ``mu`` survivors: whole fronts first, the last one truncated by crowding distance."""
    chosen = []
    for front in nsga2_fronts(fitnesses):
        if len(chosen) + len(front) <= mu:
            chosen.extend(front)
            continue
        d = crowding(fitnesses, front)
        order = list(front)
        perm = rng.permutation(len(order))
        shuffled = [order[p] for p in perm]
        shuffled.sort(key=lambda i: -d[i])
        chosen.extend(shuffled[:mu - len(chosen)])
        break
    return chosen


def select_parents(fitnesses, k: int, rng) -> list:
    """Binary tournaments on (front rank, crowding distance); returns ``k`` indices."""
    n = len(fitnesses)
    rank, crowd = _rank_and_crowding(fitnesses)
    out = []
    for _ in range(k):
        a, b = int(rng.integers(n)), int(rng.integers(n))
        if rank[a] != rank[b]:
            out.append(a if rank[a] < rank[b] else b)
        elif crowd[a] != crowd[b]:
            out.append(a if crowd[a] > crowd[b] else b)
        else:
            out.append(a if rng.random() < 0.5 else b)
    return out


# --------------------------------------------------------------------------
# evolutionary loop

@dataclass
class SearchConfig:
    mu: int = 256
    lam: int = 256
    generations: int = 250
    initial_population_size: int = 2048
    crossover_probability: float = 2.0 / 3.0
    terminal_mutation_probability: float = 1.0 / 3.0
    init_depth: tuple = (10, 40)
    mutation_depth: tuple = (1, 8)
    max_size: int = 150
    generalization_interval: int = 0
    levels: tuple = ()
    seed: int = 0
    workers: int = 1
    random_search: bool = False
    max_retries: int = 50

    def __post_init__(self):
        self.init_depth = tuple(self.init_depth)
        self.mutation_depth = tuple(self.mutation_depth)
        self.levels = tuple(self.levels)
        if self.mu <= 0 or self.lam <= 0:
            raise ValueError("mu and lambda must be positive")
        if self.lam % 2:
            raise ValueError("lambda must be even (children are produced in pairs)")
        for p in (self.crossover_probability, self.terminal_mutation_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.initial_population_size < self.mu:
            raise ValueError("initial population must hold at least mu individuals")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("schedule levels must be strictly increasing")

    def level_at(self, generation: int):
        """Problem level active in ``generation`` (``None`` when no schedule is set)."""
        if not self.levels:
            return None
        if self.generalization_interval <= 0:
            return self.levels[0]
        return self.levels[min(generation // self.generalization_interval, len(self.levels) - 1)]


@dataclass
class Individual:
    tree: DerivationTree
    fitness: tuple

    @property
    def key(self) -> str:
        return self.tree.key


@dataclass
class SearchResult:
    population: list
    archive: dict
    evaluations: int
    level: object
    history: list = field(default_factory=list)


def _fitness_tuple(f) -> tuple:
    return tuple(float(v) for v in (f.objectives if hasattr(f, "objectives") else f))


def evolve(config: SearchConfig, pset: PrimitiveSet, evaluate, checkpoint_dir=None, resume=None,
           on_generation=None) -> SearchResult:
    """(mu + lambda) search with NSGA-II selection.

    ``evaluate(keys, level)`` returns one fitness pair per serialized tree and
    may distribute the work; it is called once per batch.  ``archive`` maps
    ``level -> {key: fitness}`` over everything evaluated.  ``resume`` is a
    checkpoint path from which the run continues.
    """
    seen: set = set()
    archive: dict = {}
    evaluations = 0
    history = []

    def run_eval(trees, level):
        nonlocal evaluations
        keys = [t.key for t in trees]
        fits = [_fitness_tuple(f) for f in evaluate(keys, level)] if keys else []
        evaluations += len(keys)
        store = archive.setdefault(_level_key(level), {})
        for k, f in zip(keys, fits):
            store[k] = f
            seen.add(k)
        return fits

    if resume is not None:
        state = load_checkpoint(resume)
        if state["seed"] != config.seed:
            raise ValueError("checkpoint was written with a different seed")
        population = [Individual(deserialize(k, pset), tuple(f)) for k, f in state["population"]]
        archive = {lv: {k: tuple(f) for k, f in d.items()} for lv, d in state["archive"].items()}
        for d in archive.values():
            seen.update(d)
        evaluations = state["evaluations"]
        history = state.get("history", [])
        level = state["level"]
        start = state["generation"] + 1
    else:
        level = config.level_at(0)
        trees = []
        local = set()
        for i in range(config.initial_population_size):
            rng = stream(config.seed, 0, INIT_STREAM + i)
            for _ in range(config.max_retries):
                t = gen_grow(pset, *config.init_depth, rng, config.max_size)
                if t.key not in local:
                    break
            local.add(t.key)
            trees.append(t)
        fits = run_eval(trees, level)
        pool = [Individual(t, f) for t, f in zip(trees, fits)]
        keep = select_elitist([p.fitness for p in pool], config.mu, stream(config.seed, 0, SELECT_STREAM))
        population = [pool[i] for i in keep]
        history.append(_summary(0, level, population, pool))
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, config, 0, level, population, archive, evaluations, history)
        if on_generation:
            on_generation(0, population)
        start = 1

    for g in range(start, config.generations + 1):
        new_level = config.level_at(g)
        if new_level != level:
            # fitness depends on the problem size; re-evaluate everybody on the new one
            level = new_level
            fits = run_eval([p.tree for p in population], level)
            population = [Individual(p.tree, f) for p, f in zip(population, fits)]
        children = _offspring(config, pset, population, g, seen)
        fits = run_eval(children, level)
        pool = population + [Individual(t, f) for t, f in zip(children, fits)]
        keep = select_elitist([p.fitness for p in pool], config.mu, stream(config.seed, g, SELECT_STREAM + 1))
        population = [pool[i] for i in keep]
        history.append(_summary(g, level, population, pool[len(population):]))
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, config, g, level, population, archive, evaluations, history)
        if on_generation:
            on_generation(g, population)
    return SearchResult(population, archive, evaluations, level, history)


def _offspring(config: SearchConfig, pset, population, g, seen) -> list:
    taken = set()

    def fresh(t):
        return t.key not in seen and t.key not in taken

    if config.random_search:
        out = []
        for j in range(config.lam):
            rng = stream(config.seed, g, j)
            for _ in range(config.max_retries):
                t = gen_grow(pset, *config.init_depth, rng, config.max_size)
                if fresh(t):
                    break
            taken.add(t.key)
            out.append(t)
        return out

    fits = [p.fitness for p in population]
    parents = select_parents(fits, config.lam, stream(config.seed, g, SELECT_STREAM))
    out = []
    for j in range(0, config.lam, 2):
        rng = stream(config.seed, g, j)
        a, b = population[parents[j]].tree, population[parents[j + 1]].tree
        pair = []
        for _ in range(config.max_retries):
            if rng.random() < config.crossover_probability:
                ca, cb, _ = crossover_subtree(a, b, rng, max_size=config.max_size)
            else:
                ca, _ = mutate_subtree(a, pset, config.mutation_depth, rng,
                                       config.terminal_mutation_probability, config.max_size)
                cb, _ = mutate_subtree(b, pset, config.mutation_depth, rng,
                                       config.terminal_mutation_probability, config.max_size)
            for c in (ca, cb):
                if len(pair) < 2 and fresh(c):
                    pair.append(c)
                    taken.add(c.key)
            if len(pair) == 2:
                break
        attempts = 0
        while len(pair) < 2:
            # variation keeps producing known trees; fall back to a new random one
            t = gen_grow(pset, *config.init_depth, rng, config.max_size)
            attempts += 1
            if fresh(t) or attempts > config.max_retries:
                pair.append(t)
                taken.add(t.key)
        out.extend(pair)
    return out


def _summary(g, level, population, evaluated) -> dict:
    fits = np.array([p.fitness for p in population], dtype=float)
    return {"generation": g, "level": level, "min_t": float(fits[:, 0].min()), "min_second": float(fits[:, 1].min()),
            "evaluated": len(evaluated)}


def _level_key(level) -> str:
    return "default" if level is None else str(level)


# --------------------------------------------------------------------------
# checkpoints

def checkpoint_path(directory, generation: int) -> str:
    return os.path.join(directory, f"checkpoint_{generation:04d}.json")


def save_checkpoint(directory, config, generation, level, population, archive, evaluations, history) -> str:
    os.makedirs(directory, exist_ok=True)
    data = {
        "seed": config.seed,
        "generation": generation,
        "level": level,
        "config": asdict(config),
        "population": [[p.key, list(p.fitness)] for p in population],
        "archive": {lv: {k: list(f) for k, f in d.items()} for lv, d in archive.items()},
        "evaluations": evaluations,
        "history": history,
    }
    path = checkpoint_path(directory, generation)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def latest_checkpoint(directory):
    if not os.path.isdir(directory):
        return None
    files = sorted(f for f in os.listdir(directory) if f.startswith("checkpoint_") and f.endswith(".json"))
    return os.path.join(directory, files[-1]) if files else None


def pareto_front(population) -> list:
    """Members of the first non-dominated front."""
    fits = [p.fitness for p in population]
    return [population[i] for i in nsga2_fronts(fits)[0]] if population else []
