"""The generational novelty-search loop that accumulates features, plus the
two control conditions (random-scored evolution and raw random weights).

Reproducibility model: every random draw comes from a stream derived from
(master seed, phase tag, generation, slot), so results are a pure function
of (config, dataset) no matter how many workers evaluate the population or
whether a run is resumed from a checkpoint.
"""

from __future__ import annotations

import json
import multiprocessing as mp
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .activations import steepened_sigmoid
from .cppn import (
    CppnGenome,
    MutationParams,
    genome_from_json,
    genome_to_json,
    mutate,
    random_genome,
)
from .dataset import Dataset, PIXELS
from .novelty import FeatureList, NoveltyArchive, NoveltyParams, maybe_archive, sparseness_many
from .substrate import Feature, Provenance, decode

CHECKPOINT_FORMAT_VERSION = 1

# Stream tags for seed derivation.
_S_INIT = 0
_S_MUTATE = 1
_S_SERIAL = 2
_S_CONTROL = 3


@dataclass
class EvolutionConfig:
    population_size: int = 100
    k: int = 20
    rho_min: float = 2000.0
    archive_p: float = 0.01
    n_ref: int = 60000
    target_features: int = 1500
    elitism: int = 2
    truncation_fraction: float = 0.2
    generation_cap: int = 1500
    checkpoint_every: int = 50
    master_seed: int = 0
    workers: int = 1
    w_feat: float = 3.0
    use_feature_bias: bool = True
    control_q: float | None = None
    verify_list_each_generation: bool = True
    mutation: MutationParams = field(default_factory=MutationParams)

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.target_features < 1:
            raise ValueError("target_features must be at least 1")
        if not 0.0 < self.truncation_fraction <= 1.0:
            raise ValueError("truncation_fraction must be in (0, 1]")
        if not 0.0 <= self.archive_p <= 1.0:
            raise ValueError("archive_p must be a probability")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    def novelty_params(self) -> NoveltyParams:
        return NoveltyParams(self.k, self.rho_min, self.archive_p, self.n_ref)

    def effective_q(self) -> float:
        """Admission probability for the random-scored control, tuned so its
        collection phase lasts about as long as a normal run (about 4.4
        collected per 100-individual generation)."""
        if self.control_q is not None:
            return self.control_q
        return 3000.0 / (676.0 * self.population_size)


@dataclass
class Individual:
    genome: CppnGenome
    feature: Feature
    signature: np.ndarray
    novelty: float = float("nan")


@dataclass
class GenerationStats:
    generation: int
    archive_size: int
    list_size: int
    best_sparseness: float
    mean_sparseness: float


@dataclass
class RunState:
    generation: int
    population: list[Individual]
    archive: NoveltyArchive
    features: FeatureList
    config: EvolutionConfig
    stats: list[GenerationStats] = field(default_factory=list)


@dataclass
class RunResult:
    features: FeatureList
    state: RunState
    reached_target: bool


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for (master seed, tag, generation, slot...)."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, *key)))


def decode_and_sign(
    genome: CppnGenome, pixels: np.ndarray, w_feat: float, use_bias: bool
) -> tuple[Feature, np.ndarray]:
    feature = decode(genome, w_feat, use_bias)
    sig = _sign_pixels(pixels, feature)
    return feature, sig


def _sign_pixels(pixels: np.ndarray, feature: Feature) -> np.ndarray:
    return steepened_sigmoid(pixels @ feature.weights + feature.bias)


# Worker-side context for the fork-based pool; set in the parent before the
# pool is created so children inherit it without copying per task.
_WORKER: dict = {}


def _worker_decode_sign(genome: CppnGenome):
    return decode_and_sign(
        genome, _WORKER["pixels"], _WORKER["w_feat"], _WORKER["use_bias"]
    )


class Evaluator:
    """Maps genomes to (feature, signature) pairs, optionally on a process
    pool.  Results are returned in input order; each item is computed by the
    identical code path regardless of worker count."""

    def __init__(self, d: Dataset, cfg: EvolutionConfig):
        self._pixels = d.pixels
        self._w_feat = cfg.w_feat
        self._use_bias = cfg.use_feature_bias
        self._pool = None
        if cfg.workers > 1:
            _WORKER.update(
                pixels=d.pixels, w_feat=cfg.w_feat, use_bias=cfg.use_feature_bias
            )
            self._pool = mp.get_context("fork").Pool(cfg.workers)

    def __call__(self, genomes: list[CppnGenome]):
        if self._pool is not None:
            return self._pool.map(_worker_decode_sign, genomes)
        return [
            decode_and_sign(g, self._pixels, self._w_feat, self._use_bias)
            for g in genomes
        ]

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def init_population(
    cfg: EvolutionConfig, d: Dataset, evaluator: Evaluator | None = None
) -> RunState:
    """Population of minimal random genomes, decoded and signed against d."""
    genomes = [
        random_genome(
            stream(cfg.master_seed, _S_INIT, i),
            cfg.mutation,
            lineage=f"{cfg.master_seed}:init:{i}",
        )
        for i in range(cfg.population_size)
    ]
    owned = evaluator is None
    evaluator = evaluator or Evaluator(d, cfg)
    try:
        evaluated = evaluator(genomes)
    finally:
        if owned:
            evaluator.close()
    population = [
        Individual(g, feat, sig) for g, (feat, sig) in zip(genomes, evaluated)
    ]
    return RunState(0, population, NoveltyArchive(), FeatureList(), cfg)


def step_generation(
    state: RunState,
    d: Dataset,
    cfg: EvolutionConfig,
    evaluator: Evaluator | None = None,
    control: bool = False,
    source: str = "ddfa",
) -> RunState:
    """One generation: score, archive, collect, select, breed, evaluate.

    With control=True the novelty scores are uniform random draws and
    collection is a coin flip instead of the distance threshold (the
    random-scored control condition).
    """
    gen = state.generation
    pop = state.population
    p_size = len(pop)
    rho_eff = cfg.novelty_params().effective_threshold(len(d))
    serial_rng = stream(cfg.master_seed, _S_SERIAL, gen)

    pop_matrix = np.stack([ind.signature for ind in pop])
    if control:
        scores = serial_rng.random(p_size)
    else:
        scores = sparseness_many(pop_matrix, state.archive, cfg.k)
    for ind, rho in zip(pop, scores):
        ind.novelty = float(rho)

    for ind in pop:
        maybe_archive(ind.signature, serial_rng, state.archive, cfg.archive_p)

    q = cfg.effective_q()
    collected_before = len(state.features)
    for ind in pop:
        prov = replace(
            ind.feature.provenance,
            source=source,
            generation=gen,
            index=len(state.features),
        )
        candidate = replace(ind.feature, provenance=prov)
        if control:
            if serial_rng.random() < q:
                state.features.append(candidate, ind.signature)
        else:
            state.features.try_collect(candidate, ind.signature, rho_eff)
    if not control and cfg.verify_list_each_generation:
        state.features.verify_tail(rho_eff, collected_before)

    order = sorted(range(p_size), key=lambda i: (-pop[i].novelty, i))
    keep_n = max(1, int(round(p_size * cfg.truncation_fraction)))
    kept = order[:keep_n]
    n_elite = min(cfg.elitism, p_size)

    new_pop: list[Individual] = [pop[order[j]] for j in range(n_elite)]
    offspring: list[CppnGenome] = []
    for slot in range(n_elite, p_size):
        parent = pop[kept[int(serial_rng.integers(keep_n))]]
        child = mutate(
            parent.genome,
            stream(cfg.master_seed, _S_MUTATE, gen, slot),
            cfg.mutation,
            lineage=f"{cfg.master_seed}:{gen}:{slot}",
        )
        offspring.append(child)

    owned = evaluator is None
    evaluator = evaluator or Evaluator(d, cfg)
    try:
        evaluated = evaluator(offspring)
    finally:
        if owned:
            evaluator.close()
    new_pop.extend(
        Individual(g, feat, sig) for g, (feat, sig) in zip(offspring, evaluated)
    )

    stats = state.stats + [
        GenerationStats(
            generation=gen,
            archive_size=len(state.archive),
            list_size=len(state.features),
            best_sparseness=float(np.max(scores)),
            mean_sparseness=float(np.mean(scores)),
        )
    ]
    return RunState(gen + 1, new_pop, state.archive, state.features, cfg, stats)


def _run_loop(
    cfg: EvolutionConfig,
    d: Dataset,
    state: RunState | None,
    control: bool,
    source: str,
    checkpoint_dir=None,
    progress=None,
) -> RunResult:
    with Evaluator(d, cfg) as evaluator:
        if state is None:
            state = init_population(cfg, d, evaluator)
        while (
            len(state.features) < cfg.target_features
            and state.generation < cfg.generation_cap
        ):
            state = step_generation(state, d, cfg, evaluator, control, source)
            if progress is not None:
                progress(state)
            if (
                checkpoint_dir is not None
                and cfg.checkpoint_every > 0
                and state.generation % cfg.checkpoint_every == 0
            ):
                save_checkpoint(state, _checkpoint_path(checkpoint_dir, state))
    if checkpoint_dir is not None:
        save_checkpoint(state, _checkpoint_path(checkpoint_dir, state))
    reached = len(state.features) >= cfg.target_features
    return RunResult(state.features.truncated(cfg.target_features), state, reached)


def run_until(
    cfg: EvolutionConfig, d: Dataset, checkpoint_dir=None, progress=None
) -> RunResult:
    """Run the accumulation loop until the feature target or the generation
    cap is hit; the result carries the (possibly partial) list either way."""
    return _run_loop(cfg, d, None, False, "ddfa", checkpoint_dir, progress)


def resume(
    checkpoint_path, d: Dataset, checkpoint_dir=None, progress=None
) -> RunResult:
    """Continue a checkpointed run; bit-identical to never having stopped."""
    state = load_checkpoint(checkpoint_path, d)
    return _run_loop(
        state.config, d, state, False, "ddfa", checkpoint_dir, progress
    )


def run_random_cppn_control(
    cfg: EvolutionConfig, d: Dataset, checkpoint_dir=None, progress=None
) -> RunResult:
    """Control condition: same loop, but selection follows uniform random
    scores and collection is a coin flip, yielding random features with a
    genome complexity range similar to a normal run."""
    return _run_loop(
        cfg, d, None, True, "random-cppn", checkpoint_dir, progress
    )


def random_weight_features(
    count: int,
    rng: np.random.Generator,
    d: Dataset,
    w_feat: float = 3.0,
) -> FeatureList:
    """Control condition bypassing the pattern encoding entirely: weights and
    bias drawn uniformly from [-w_feat, +w_feat], signed normally."""
    if count < 1:
        raise ValueError("count must be at least 1")
    out = FeatureList()
    for i in range(count):
        weights = rng.uniform(-w_feat, w_feat, size=PIXELS)
        bias = float(rng.uniform(-w_feat, w_feat))
        feature = Feature(
            weights, bias, Provenance(source="random-weights", index=i)
        )
        out.append(feature, _sign_pixels(d.pixels, feature))
    return out


def _checkpoint_path(checkpoint_dir, state: RunState):
    import os

    os.makedirs(checkpoint_dir, exist_ok=True)
    return os.path.join(
        checkpoint_dir, f"checkpoint_gen{state.generation:06d}.npz"
    )


def config_to_dict(cfg: EvolutionConfig) -> dict:
    return asdict(cfg)


def config_from_dict(doc: dict) -> EvolutionConfig:
    doc = dict(doc)
    doc["mutation"] = MutationParams(**doc.get("mutation", {}))
    return EvolutionConfig(**doc)


def save_checkpoint(state: RunState, path) -> None:
    """Full RunState serialization: genomes and metadata as JSON, signature
    matrices at full precision so a resumed run continues exactly."""
    meta = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "generation": state.generation,
        "config": config_to_dict(state.config),
        "genomes": [genome_to_json(ind.genome) for ind in state.population],
        "novelty": [ind.novelty for ind in state.population],
        "feature_tags": [f.provenance.to_tag() for f in state.features.features],
        "stats": [asdict(row) for row in state.stats],
    }
    features = state.features
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        archive=state.archive.matrix(),
        feature_weights=np.stack([f.weights for f in features.features])
        if len(features)
        else np.empty((0, 784)),
        feature_biases=np.array([f.bias for f in features.features]),
        feature_signatures=features.signatures()
        if len(features)
        else np.empty((0, 0)),
    )


def load_checkpoint(path, d: Dataset) -> RunState:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {meta.get('version')}"
            )
        cfg = config_from_dict(meta["config"])
        archive = NoveltyArchive()
        for row in data["archive"]:
            archive.append(row)
        features = FeatureList()
        for weights, bias, sig, tag in zip(
            data["feature_weights"],
            data["feature_biases"],
            data["feature_signatures"],
            meta["feature_tags"],
        ):
            features.append(
                Feature(weights, float(bias), Provenance.from_tag(tag)), sig
            )
        genomes = [genome_from_json(text) for text in meta["genomes"]]
        with Evaluator(d, cfg) as evaluator:
            evaluated = evaluator(genomes)
        population = [
            Individual(g, feat, sig, novelty=nov)
            for g, (feat, sig), nov in zip(genomes, evaluated, meta["novelty"])
        ]
        stats = [GenerationStats(**row) for row in meta["stats"]]
        return RunState(
            meta["generation"], population, archive, features, cfg, stats
        )


def write_stats_csv(rows: list[GenerationStats], path) -> None:
    """Per-generation event log: one comma-separated line per generation."""
    with open(path, "w") as f:
        f.write("generation,archive_size,list_size,best_sparseness,mean_sparseness\n")
        for r in rows:
            f.write(
                f"{r.generation},{r.archive_size},{r.list_size},"
                f"{r.best_sparseness!r},{r.mean_sparseness!r}\n"
            )
