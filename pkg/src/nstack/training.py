"""Training loop, random restarts, checkpoints and evaluation."""

from __future__ import annotations

import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import NonFiniteError
from .languages import Dataset, LanguageSpec, cross_entropy, cross_entropy_diff, make_splits
from .models import ModelConfig, StackLm
from .rns import NoSurvivingRunsError

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- config

class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class TrainConfig:
    lr: float | None = None  # None: sample per restart, log-uniform over lr_range
    lr_range: tuple[float, float] = (5e-4, 1e-2)
    clip: float = 5.0
    batch_size: int = 10
    decay: float = 0.9
    decay_patience: int = 5
    stop_patience: int = 10
    max_epochs: int = 200
    time_limit: float | None = None  # seconds per restart
    eval_batch_size: int = 100


@dataclass(frozen=True)
class DataConfig:
    train: int = 10000
    valid: int = 1000
    test_lengths: tuple[int, int] = (40, 100)
    test_per_length: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    language: LanguageSpec = field(default_factory=lambda: LanguageSpec("w-hash-w"))
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 1
    restarts: int = 10

    def to_json(self) -> dict:
        return {"model": self.model.to_json(), "language": self.language.to_json(),
                "data": asdict(self.data), "train": asdict(self.train),
                "seed": self.seed, "restarts": self.restarts}

    @classmethod
    def from_json(cls, d: dict, where="config") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: expected a JSON object")
        _check_keys(d, {"model", "language", "data", "train", "seed", "restarts", "hidden_size"}, where)
        hidden = d.get("hidden_size", 20)
        m = d.get("model", "lstm")
        try:
            if isinstance(m, str):
                model = ModelConfig.parse(m, hidden_size=hidden)
            else:
                _check_keys(m, {f.name for f in fields(ModelConfig)}, f"{where}.model")
                model = ModelConfig(**{"hidden_size": hidden, **m})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}.model: {e}", "model") from None
        lang = d.get("language", {"language": "w-hash-w"})
        if isinstance(lang, str):
            lang = {"language": lang}
        _check_keys(lang, {f.name for f in fields(LanguageSpec)}, f"{where}.language")
        try:
            language = LanguageSpec(**lang)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}.language: {e}", "language") from None
        data = _sub(DataConfig, d.get("data", {}), f"{where}.data")
        train = _sub(TrainConfig, d.get("train", {}), f"{where}.train")
        seed, restarts = d.get("seed", 1), d.get("restarts", 10)
        for key, val in (("seed", seed), ("restarts", restarts)):
            if not isinstance(val, int) or isinstance(val, bool) or val < 0:
                raise ConfigError(f"{where}.{key}: expected a nonnegative integer, got {val!r}", key)
        return cls(model, language, data, train, seed, restarts)


def _check_keys(d: dict, allowed: set[str], where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(d).__name__}")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field {extra[0]!r} (allowed: {', '.join(sorted(allowed))})", extra[0])


def _sub(cls, d, where):
    _check_keys(d, {f.name for f in fields(cls)}, where)
    defaults = cls()
    out = {}
    for f in fields(cls):
        if f.name not in d:
            continue
        val, ref = d[f.name], getattr(defaults, f.name)
        if isinstance(ref, tuple) or (ref is None and isinstance(val, list)):
            if not (isinstance(val, list) and len(val) == 2 and all(_is_number(v) for v in val)):
                raise ConfigError(f"{where}.{f.name}: expected a pair of numbers, got {val!r}", f.name)
            val = tuple(val)
        elif val is not None and not _is_number(val):
            raise ConfigError(f"{where}.{f.name}: expected a number, got {val!r}", f.name)
        elif val is None and ref is not None:
            raise ConfigError(f"{where}.{f.name}: must not be null", f.name)
        out[f.name] = val
    return cls(**out)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    try:
        return ExperimentConfig.from_json(d, where=str(path))
    except ConfigError as e:
        line = _key_line(text, e.key)
        if line is None:
            raise
        raise ConfigError(f"line {line}: {e}", e.key) from None


def _key_line(text: str, key: str | None) -> int | None:
    if key is None:
        return None
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return None


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1 - b1 ** self.step_count
        c2 = 1 - b2 ** self.step_count
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; return the original norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= s
    return norm


def sample_lr(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


# ---------------------------------------------------------------- batching & evaluation

def length_batches(strings, batch_size: int, rng: np.random.Generator | None = None) -> list[list[int]]:
    """Indices grouped into batches of equal-length strings, shuffled when ``rng`` is given."""
    order = np.arange(len(strings)) if rng is None else rng.permutation(len(strings))
    groups: dict[int, list[int]] = {}
    for i in order:
        groups.setdefault(len(strings[i]), []).append(int(i))
    batches = [g[j:j + batch_size] for _, g in sorted(groups.items()) for j in range(0, len(g), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def model_log_probs(model: StackLm, theta, strings, batch_size=100) -> np.ndarray:
    out = np.empty(len(strings))
    for b in length_batches(strings, batch_size):
        out[b] = model.log_probs(theta, [strings[i] for i in b]).log_probs
    return out


@dataclass
class Evaluation:
    cross_entropy: float
    true_cross_entropy: float
    cross_entropy_diff: float


def evaluate(model: StackLm, theta, data: Dataset, batch_size=100) -> Evaluation:
    lp = model_log_probs(model, theta, data.strings, batch_size)
    return Evaluation(cross_entropy(lp, data.lengths), cross_entropy(data.log_probs, data.lengths),
                      cross_entropy_diff(lp, data.log_probs, data.lengths))


def by_length_table(model_lp, true_lp, lengths) -> list[dict]:
    """One row per populated length: count and per-symbol cross-entropies."""
    model_lp, true_lp, lengths = map(np.asarray, (model_lp, true_lp, lengths))
    rows = []
    for n in sorted(set(lengths.tolist())):
        m = lengths == n
        rows.append({
            "length": int(n),
            "count": int(m.sum()),
            "cross_entropy": cross_entropy(model_lp[m], lengths[m]),
            "true_cross_entropy": cross_entropy(true_lp[m], lengths[m]),
            "cross_entropy_diff": cross_entropy_diff(model_lp[m], true_lp[m], lengths[m]),
        })
    return rows


def evaluate_by_length(model: StackLm, theta, test: Dataset, batch_size=100) -> list[dict]:
    lp = model_log_probs(model, theta, test.strings, batch_size)
    return by_length_table(lp, test.log_probs, test.lengths)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    config: ExperimentConfig
    params: dict[str, np.ndarray]
    alphabet: tuple[str, ...]
    epoch: int = 0
    best_valid: float = math.inf
    lr: float = 0.0
    adam_step: int = 0
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    restart: int = 0
    seed: int = 0

    def model(self) -> StackLm:
        return StackLm(self.config.model, self.alphabet)


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    meta = {"version": CHECKPOINT_VERSION, "config": ck.config.to_json(), "alphabet": list(ck.alphabet),
            "epoch": ck.epoch, "best_valid": ck.best_valid, "lr": ck.lr, "adam_step": ck.adam_step,
            "restart": ck.restart, "seed": ck.seed, "shapes": {k: list(v.shape) for k, v in ck.params.items()}}
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for prefix, d in (("param", ck.params), ("adam_m", ck.adam_m), ("adam_v", ck.adam_v)):
        arrays.update({f"{prefix}/{k}": v for k, v in d.items()})
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(io.BytesIO(Path(path).read_bytes()), allow_pickle=False) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
        for key in z.files:
            if "/" in key:
                prefix, name = key.split("/", 1)
                groups[prefix][name] = z[key]
    for name, shape in meta["shapes"].items():
        if list(groups["param"][name].shape) != shape:
            raise ValueError(f"{path}: parameter {name} has shape {groups['param'][name].shape}, expected {shape}")
    return Checkpoint(ExperimentConfig.from_json(meta["config"]), groups["param"], tuple(meta["alphabet"]),
                      meta["epoch"], meta["best_valid"], meta["lr"], meta["adam_step"],
                      groups["adam_m"], groups["adam_v"], meta["restart"], meta["seed"])


# ---------------------------------------------------------------- training

METRIC_FIELDS = ("restart", "epoch", "lr", "train_loss", "valid_cross_entropy", "valid_true_cross_entropy",
                 "valid_cross_entropy_diff", "seconds", "seed")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict]
    failed: bool = False
    reason: str = ""
    lr: float = 0.0  # initial learning rate


def train_model(cfg: ExperimentConfig, splits: dict[str, Dataset], restart: int = 0, lr: float | None = None,
                seed: int | None = None, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """One training run; returns the checkpoint with the best validation cross-entropy difference.

    The learning rate is multiplied by ``decay`` after ``decay_patience``
    epochs without validation improvement; training stops after
    ``stop_patience`` such epochs, ``max_epochs``, or ``time_limit``.
    """
    tc = cfg.train
    seed = cfg.seed * 1000 + restart if seed is None else seed
    rng = np.random.default_rng(seed)
    if lr is None:
        lr = tc.lr if tc.lr is not None else sample_lr(rng, *tc.lr_range)
    train, valid = splits["train"], splits["valid"]
    alphabet = _alphabet(cfg)
    model = StackLm(cfg.model, alphabet)
    theta = model.init_params(rng)
    opt = Adam(theta, lr)
    best = Checkpoint(cfg, {k: v.copy() for k, v in theta.items()}, alphabet, 0, math.inf, lr, 0, restart=restart,
                      seed=seed)
    metrics: list[dict] = []
    start = time.perf_counter()
    since_best = 0
    try:
        ev = evaluate(model, theta, valid, tc.eval_batch_size)
        best.best_valid = ev.cross_entropy_diff
        for epoch in range(1, tc.max_epochs + 1):
            total, symbols = 0.0, 0
            timed_out = False
            for b in length_batches(train.strings, tc.batch_size, rng):
                batch = [train.strings[i] for i in b]
                loss, _, grads = model.loss_and_grads(theta, batch)
                if not math.isfinite(loss):
                    raise NonFiniteError("training loss is not finite")
                clip_grad_norm(grads, tc.clip)
                opt.step(theta, grads)
                total += loss
                symbols += sum(len(w) + 1 for w in batch)
                if tc.time_limit is not None and time.perf_counter() - start > tc.time_limit:
                    timed_out = True
                    break
            ev = evaluate(model, theta, valid, tc.eval_batch_size)
            row = {"restart": restart, "epoch": epoch, "lr": opt.lr, "train_loss": total / max(symbols, 1),
                   "valid_cross_entropy": ev.cross_entropy, "valid_true_cross_entropy": ev.true_cross_entropy,
                   "valid_cross_entropy_diff": ev.cross_entropy_diff,
                   "seconds": time.perf_counter() - start, "seed": seed}
            metrics.append(row)
            if on_epoch:
                on_epoch(row)
            if not math.isfinite(ev.cross_entropy):
                raise NonFiniteError("validation cross-entropy is not finite")
            if ev.cross_entropy_diff < best.best_valid:
                best = Checkpoint(cfg, {k: v.copy() for k, v in theta.items()}, alphabet, epoch,
                                  ev.cross_entropy_diff, opt.lr, opt.step_count,
                                  {k: v.copy() for k, v in opt.m.items()}, {k: v.copy() for k, v in opt.v.items()},
                                  restart, seed)
                since_best = 0
            else:
                since_best += 1
                if since_best % tc.decay_patience == 0:
                    opt.lr *= tc.decay
                if since_best >= tc.stop_patience:
                    break
            if timed_out:
                break
    except (NonFiniteError, NoSurvivingRunsError, FloatingPointError) as e:
        return TrainResult(best, metrics, failed=True, reason=str(e), lr=lr)
    return TrainResult(best, metrics, lr=lr)


def _alphabet(cfg: ExperimentConfig) -> tuple[str, ...]:
    from .languages import make_language
    return make_language(cfg.language.language, cfg.language.k).alphabet


def build_splits(cfg: ExperimentConfig) -> dict[str, Dataset]:
    d = cfg.data
    return make_splits(cfg.language, cfg.seed, d.train, d.valid, d.test_lengths, d.test_per_length)


def restart_plan(cfg: ExperimentConfig) -> list[tuple[int, float, int]]:
    """(restart index, learning rate, seed) for every restart, fixed by the experiment seed."""
    rng = np.random.default_rng([cfg.seed, 7])
    plan = []
    for r in range(cfg.restarts):
        lr = cfg.train.lr if cfg.train.lr is not None else sample_lr(rng, *cfg.train.lr_range)
        plan.append((r, lr, cfg.seed * 1000 + r))
    return plan


def _run_one(args):
    cfg, splits, r, lr, seed = args
    return train_model(cfg, splits, r, lr, seed)


def run_restarts(cfg: ExperimentConfig, splits: dict[str, Dataset] | None = None,
                 workers: int | None = None, on_epoch=None) -> tuple[TrainResult | None, list[TrainResult]]:
    """Train every restart and pick the best by validation cross-entropy difference."""
    splits = build_splits(cfg) if splits is None else splits
    plan = restart_plan(cfg)
    if workers is None:
        workers = int(os.environ.get("NSTACK_THREADS", "1"))
    workers = max(1, min(workers, len(plan)))
    if workers == 1:
        results = [train_model(cfg, splits, r, lr, seed, on_epoch) for r, lr, seed in plan]
    else:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_one, [(cfg, splits, r, lr, seed) for r, lr, seed in plan]))
    ok = [res for res in results if not res.failed and math.isfinite(res.checkpoint.best_valid)]
    best = min(ok, key=lambda res: res.checkpoint.best_valid) if ok else None
    return best, results


def with_overrides(cfg: ExperimentConfig, seed=None, restarts=None) -> ExperimentConfig:
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if restarts is not None:
        cfg = replace(cfg, restarts=restarts)
    return cfg
