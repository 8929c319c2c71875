"""(mu + lambda) evolution strategy over strategy latents.

Candidates are decoded with the VAE and scored by backtest Sharpe on the
active fold's fitness window. The optimizer is fixed; only the mutation
operator varies:

* ``isotropic``  z' = z + sigma * eps over all dimensions,
* ``dual_block`` the same noise restricted to (LE, LX) on even generations
  and (SE, SX) on odd ones,
* ``gcm``        a learned delta F(z, phi) restricted by the same masks.

Each offspring draws from its own RNG stream keyed by (seed, generation,
offspring index), so the run does not depend on evaluation order.
"""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .backtest import BacktestConfig, simulate
from .embed.codec import DecodeFailure, decode_batch, encode_many
from .embed.model import ProgramVAE
from .errors import InitializationFailed, ModelMissing, NoBars
from .flow import FlowModel, predict_delta
from .lang.ast import Strategy
from .lang.generate import MutationConfig, random_strategy
from .lang.parser import parse_strategy
from .market import DataGuard, FoldSpec, MarketSeries
from .phi import compute_phi, phi_distance

TRACE_SCHEMA = 1
NEG_INF = -math.inf

# RNG stream tags
_INIT, _SELECT, _OFFSPRING = 0, 1, 2


class Operator(str, enum.Enum):
    ISOTROPIC = "isotropic"
    DUAL_BLOCK = "dual_block"
    GCM = "gcm"


FITNESS_WINDOWS = {"validation_sharpe": "val", "train_sharpe": "train"}


@dataclass(frozen=True)
class EsConfig:
    mu: int = 34
    lam: int = 66
    generations: int = 100
    sigma: float = 0.1
    operator: str = "isotropic"
    alpha: float = 1.0
    sigma_in: float = 0.0
    sigma_out: float = 0.0
    seed: int = 0
    fitness: str = "validation_sharpe"
    max_init_rounds: int = 50

    def __post_init__(self):
        object.__setattr__(self, "operator", Operator(self.operator).value)
        if self.mu < 1 or self.lam < 1 or self.generations < 0:
            raise ValueError("mu and lam must be >= 1, generations >= 0")
        if self.operator != Operator.GCM.value and self.sigma <= 0:
            raise ValueError("sigma must be positive for Gaussian operators")
        if self.sigma_in < 0 or self.sigma_out < 0:
            raise ValueError("sigma_in and sigma_out must be >= 0")
        if self.fitness not in FITNESS_WINDOWS:
            raise ValueError(f"unknown fitness {self.fitness!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# -- masks ------------------------------------------------------------------

def direction(g: int) -> str:
    """Active direction for generation ``g``: even -> long, odd -> short."""
    return "long" if g % 2 == 0 else "short"


def direction_mask(latent_dim: int, which: str) -> np.ndarray:
    """Boolean mask: ``long`` covers blocks LE and LX, ``short`` covers SE and SX."""
    if latent_dim % 4:
        raise ValueError("latent length must be divisible by 4")
    d = latent_dim // 4
    blocks = {"long": (0, 2), "short": (1, 3), "full": (0, 1, 2, 3)}[which]
    m = np.zeros(latent_dim, dtype=bool)
    for k in blocks:
        m[k * d:(k + 1) * d] = True
    return m


# -- operators --------------------------------------------------------------

def mutate_isotropic(z: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z + sigma * rng.standard_normal(z.shape)


def mutate_dual_block(z: np.ndarray, sigma: float, g: int, rng: np.random.Generator) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    m = direction_mask(len(z), direction(g))
    eps = rng.standard_normal(z.shape)
    out = z.copy()
    out[m] = z[m] + sigma * eps[m]
    return out


def mutate_gcm(
    z: np.ndarray,
    phi: np.ndarray,
    g: int,
    model: FlowModel | Callable | None,
    alpha: float = 1.0,
    sigma_in: float = 0.0,
    sigma_out: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Masked one-shot delta: z' = z + alpha * m*F(z~, phi) + sigma_out * m*eps'.

    ``model`` is a :class:`FlowModel` or any callable ``(z, phi) -> delta``.
    Inactive coordinates are copied from ``z`` unchanged.
    """
    if model is None:
        raise ModelMissing("GCM mutation needs a flow model")
    z = np.asarray(z, dtype=float)
    rng = rng if rng is not None else np.random.default_rng()
    m = direction_mask(len(z), direction(g))
    z_in = z + sigma_in * rng.standard_normal(z.shape) if sigma_in > 0 else z
    if isinstance(model, FlowModel):
        delta_full = predict_delta(z_in, phi, model)
    else:
        delta_full = np.asarray(model(z_in, phi), dtype=float)
    delta = alpha * delta_full[m]
    if sigma_out > 0:
        delta = delta + sigma_out * rng.standard_normal(z.shape)[m]
    out = z.copy()
    out[m] = z[m] + delta
    return out


# -- individuals and records ------------------------------------------------

@dataclass
class Individual:
    id: int
    latent: np.ndarray
    decoded: Strategy | DecodeFailure
    fitness: float
    phi: np.ndarray | None
    parent_id: int | None
    generation: int
    n_trades: int = 0

    @property
    def valid(self) -> bool:
        return math.isfinite(self.fitness)


def _num(x: float) -> float | None:
    return x if math.isfinite(x) else None


@dataclass
class MutationRecord:
    run_id: str
    asset: str
    seed: int
    fold: int
    operator: str
    generation: int
    offspring_index: int
    mask: str
    parent_id: int
    child_id: int
    parent_latent: list[float]
    child_latent: list[float]
    parent_phi: list[float] | None
    child_phi: list[float] | None
    valid: bool
    parent_fitness: float | None
    child_fitness: float | None
    phi_l2: float | None
    child_strategy: dict | None
    decode_failure: str | None
    config_hash: str = ""
    code_version: str = ""
    schema_version: int = TRACE_SCHEMA

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=False)


@dataclass
class EsReport:
    run_id: str
    asset: str
    fold: int
    config: dict
    best_id: int
    best_fitness: float
    best_strategy: dict | None
    best_latent: list[float]
    best_so_far: list[float]           # index 0 = initial population, then one per generation
    offspring_fitness: list[float]
    init_evaluations: int
    evaluations_to_best: int
    budget_fraction_to_best: float
    valid_offspring_rate: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_fitness"] = _num(self.best_fitness)
        d["best_so_far"] = [_num(x) for x in self.best_so_far]
        d["offspring_fitness"] = [_num(x) for x in self.offspring_fitness]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EsReport":
        d = dict(d)
        inf = lambda x: NEG_INF if x is None else x  # noqa: E731
        d["best_fitness"] = inf(d["best_fitness"])
        d["best_so_far"] = [inf(x) for x in d["best_so_far"]]
        d["offspring_fitness"] = [inf(x) for x in d["offspring_fitness"]]
        return cls(**d)


def budget_fraction_to_best(offspring_fitness: Sequence[float], final_best: float | None = None) -> float:
    """1-based index of the first offspring reaching the final best, over the offspring count.

    ``final_best`` defaults to the best offspring fitness. If no offspring
    reaches it (the best came from the initial population) the whole budget
    counts as used and 1.0 is returned.
    """
    fit = list(offspring_fitness)
    if not fit:
        return 1.0
    target = max(fit) if final_best is None else final_best
    for i, f in enumerate(fit, 1):
        if f >= target and math.isfinite(f):
            return i / len(fit)
    return 1.0


def evaluations_to_reach(best_so_far_offspring: Sequence[float], target: float) -> int | None:
    """1-based offspring index at which a best-so-far trajectory first reaches ``target``."""
    for i, f in enumerate(best_so_far_offspring, 1):
        if f >= target:
            return i
    return None


# -- evaluation -------------------------------------------------------------

class Evaluator:
    """Decode + backtest latents on a fixed window; results are cached by strategy."""

    def __init__(self, model: ProgramVAE, series: MarketSeries, window: tuple[int, int],
                 bt_cfg: BacktestConfig | None = None):
        self.model = model
        self.series = series
        self.window = window
        self.bt_cfg = bt_cfg or BacktestConfig()
        self._cache: dict[Strategy, tuple[float, np.ndarray | None, int]] = {}

    def score(self, s: Strategy) -> tuple[float, np.ndarray | None, int]:
        hit = self._cache.get(s)
        if hit is None:
            try:
                res = simulate(s, self.series, self.window, self.bt_cfg)
            except NoBars:
                hit = (NEG_INF, None, 0)
            else:
                if res.valid:
                    hit = (float(res.sharpe), compute_phi(res, self.series), res.n_trades)
                else:
                    hit = (NEG_INF, None, 0)
            self._cache[s] = hit
        return hit

    def evaluate(self, latents: np.ndarray) -> list[tuple[Strategy | DecodeFailure, float, np.ndarray | None, int]]:
        out = []
        for dec in decode_batch(self.model, latents):
            if isinstance(dec, DecodeFailure):
                out.append((dec, NEG_INF, None, 0))
            else:
                out.append((dec, *self.score(dec)))
        return out


def _rank_key(ind: Individual):
    return (-ind.fitness, ind.id)


def run_es(
    cfg: EsConfig,
    model: ProgramVAE,
    series: MarketSeries,
    fold: FoldSpec,
    flow_model: FlowModel | Callable | None = None,
    guard: DataGuard | None = None,
    bt_cfg: BacktestConfig | None = None,
    gen_cfg: MutationConfig | None = None,
    trace: Callable[[MutationRecord], None] | None = None,
    run_id: str = "run",
    provenance: dict | None = None,
) -> EsReport:
    """Run the ES on one fold; ``trace`` receives one record per offspring in order."""
    op = Operator(cfg.operator)
    if op is Operator.GCM and flow_model is None:
        raise ModelMissing("operator 'gcm' requires a flow model")
    guard = guard or DataGuard()
    window = series.index_range(*guard.window(fold, FITNESS_WINDOWS[cfg.fitness]))
    ev = Evaluator(model, series, window, bt_cfg)
    prov = {k: v for k, v in (provenance or {}).items() if k in ("config_hash", "code_version")}
    gen_cfg = gen_cfg or MutationConfig()
    next_id = 0

    # initial population: encoded random strategies that trade on the fitness window
    rng = np.random.default_rng([cfg.seed, _INIT])
    pool: list[Individual] = []
    init_evals = 0
    for _ in range(cfg.max_init_rounds):
        cands = [random_strategy(gen_cfg, rng) for _ in range(cfg.mu)]
        latents = encode_many(cands, model)
        for z, (dec, fit, phi, nt) in zip(latents, ev.evaluate(latents)):
            init_evals += 1
            if math.isfinite(fit) and len(pool) < cfg.mu:
                pool.append(Individual(next_id, z, dec, fit, phi, None, -1, nt))
                next_id += 1
        if len(pool) == cfg.mu:
            break
    if not pool:
        raise InitializationFailed(f"no valid individual after {init_evals} initial candidates")
    pool.sort(key=_rank_key)

    best_so_far = [pool[0].fitness]
    offspring_fitness: list[float] = []
    n_valid = 0
    for g in range(cfg.generations):
        sel = np.random.default_rng([cfg.seed, _SELECT, g]).integers(len(pool), size=cfg.lam)
        parents = [pool[i] for i in sel]
        children = []
        for i, p in enumerate(parents):
            r = np.random.default_rng([cfg.seed, _OFFSPRING, g, i])
            if op is Operator.ISOTROPIC:
                children.append(mutate_isotropic(p.latent, cfg.sigma, r))
            elif op is Operator.DUAL_BLOCK:
                children.append(mutate_dual_block(p.latent, cfg.sigma, g, r))
            else:
                children.append(mutate_gcm(p.latent, p.phi, g, flow_model, cfg.alpha,
                                           cfg.sigma_in, cfg.sigma_out, r))
        results = ev.evaluate(np.array(children))
        mask = "full" if op is Operator.ISOTROPIC else direction(g)
        offspring = []
        for i, (p, z, (dec, fit, phi, nt)) in enumerate(zip(parents, children, results)):
            child = Individual(next_id, z, dec, fit, phi, p.id, g, nt)
            next_id += 1
            offspring.append(child)
            offspring_fitness.append(fit)
            n_valid += child.valid
            if trace is not None:
                failed = isinstance(dec, DecodeFailure)
                trace(MutationRecord(
                    run_id=run_id, asset=series.name, seed=cfg.seed, fold=fold.index,
                    operator=op.value, generation=g, offspring_index=i, mask=mask,
                    parent_id=p.id, child_id=child.id,
                    parent_latent=p.latent.tolist(), child_latent=z.tolist(),
                    parent_phi=None if p.phi is None else p.phi.tolist(),
                    child_phi=phi.tolist() if child.valid else None,
                    valid=child.valid, parent_fitness=_num(p.fitness), child_fitness=_num(fit),
                    phi_l2=phi_distance(p.phi, phi) if child.valid and p.phi is not None else None,
                    child_strategy=None if failed else dec.to_dict(),
                    decode_failure=dec.reason if failed else None,
                    **prov,
                ))
        pool = sorted(pool + offspring, key=_rank_key)[: cfg.mu]
        best_so_far.append(pool[0].fitness)

    best = pool[0]
    n_off = len(offspring_fitness)
    frac = budget_fraction_to_best(offspring_fitness, best.fitness)
    return EsReport(
        run_id=run_id, asset=series.name, fold=fold.index, config=cfg.to_dict(),
        best_id=best.id, best_fitness=best.fitness,
        best_strategy=None if isinstance(best.decoded, DecodeFailure) else best.decoded.to_dict(),
        best_latent=best.latent.tolist(), best_so_far=best_so_far,
        offspring_fitness=offspring_fitness, init_evaluations=init_evals,
        evaluations_to_best=int(round(frac * n_off)) if n_off else 0,
        budget_fraction_to_best=frac,
        valid_offspring_rate=n_valid / n_off if n_off else 0.0,
    )


def offspring_best_curve(report: EsReport) -> list[float]:
    """Best-so-far fitness after each offspring evaluation, seeded by the initial best."""
    cur = report.best_so_far[0]
    out = []
    for f in report.offspring_fitness:
        cur = max(cur, f)
        out.append(cur)
    return out


def final_test_sharpe(
    report: EsReport,
    series: MarketSeries,
    fold: FoldSpec,
    guard: DataGuard,
    bt_cfg: BacktestConfig | None = None,
) -> float | None:
    """Test-window Sharpe of the run's best strategy; only allowed during final evaluation."""
    if report.best_strategy is None:
        return None
    s = parse_strategy(report.best_strategy)
    window = series.index_range(*guard.window(fold, "test"))
    try:
        return float(simulate(s, series, window, bt_cfg).sharpe)
    except NoBars:
        return None
