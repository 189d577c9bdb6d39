"""Training loop: negative sampling, AdamW with step decay, validation, checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, from_dict
from .errors import FormatError, NumericError, StarGraphError
from .evaluator import KnownTriples, MetricReport, evaluate
from .graph import DatasetSplits
from .model import StarGraphModel
from .objective import TripleBatch
from .optim import AdamW
from .vocab import Vocabulary, check_vocabulary

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def lr_at(step: int, config: RunConfig) -> float:
    """Constant ``lr``, multiplied by ``lr_decay_factor`` from step max_steps/2 on."""
    if step < config.max_steps / 2:
        return config.lr
    return config.lr * config.lr_decay_factor


def sample_negatives(positives: np.ndarray, n: int, num_entities: int, rng: np.random.Generator) -> TripleBatch:
    """Corrupt head or tail (fair coin per positive) with ``n`` uniform entities.

    True triples are not filtered out here.
    """
    if n < 1:
        raise StarGraphError(f"need at least one negative, got n={n}")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    corrupt_head = rng.random(len(positives)) < 0.5
    negatives = rng.integers(0, num_entities, size=(len(positives), n))
    return TripleBatch(positives, negatives, corrupt_head)


@dataclass
class TrainResult:
    steps: int
    losses: list[float] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    best_valid_mrr: float = float("nan")
    best_step: int = -1


class Trainer:
    def __init__(
        self,
        data: DatasetSplits,
        vocab: Vocabulary,
        config: RunConfig,
        out_dir: str | os.PathLike | None = None,
    ):
        check_vocabulary(vocab, data.graph)
        self.data = data
        self.vocab = vocab
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.model = StarGraphModel(
            vocab,
            data.num_relations,
            config.encoder_config(),
            config.score_config(),
            seed=config.seed,
            dtype=np.dtype(config.dtype),
        )
        self.optimizer = AdamW(
            self.model.parameters(),
            lr=config.lr,
            betas=(config.beta1, config.beta2),
            eps=config.adam_eps,
            weight_decay=config.weight_decay,
        )
        self.rng = np.random.default_rng([config.seed, 1])
        self.step = 0
        self.best_valid_mrr = float("-inf")
        self.best_step = -1
        self._known: KnownTriples | None = None

    @property
    def known(self) -> KnownTriples:
        if self._known is None:
            self._known = KnownTriples(self.data.train, self.data.valid, self.data.test)
        return self._known

    def next_batch(self) -> TripleBatch:
        train = self.data.train
        idx = self.rng.integers(0, len(train), size=self.config.batch_size)
        return sample_negatives(train[idx], self.config.neg_size, self.data.num_entities, self.rng)

    def train_step(self) -> float:
        batch = self.next_batch()
        self.model.zero_grad()
        loss = self.model.loss(batch, training=True, rng=self.rng)
        value = loss.item()
        if not np.isfinite(value):
            self._dump_diagnostics(value, batch)
            raise NumericError(f"non-finite loss {value} at step {self.step}")
        loss.backward()
        self.optimizer.step(lr_at(self.step, self.config))
        self.model.invalidate()
        self.step += 1
        return value

    def validate(self) -> MetricReport | None:
        valid = self.data.valid
        if len(valid) == 0:
            return None
        if self.config.valid_limit:
            valid = valid[: self.config.valid_limit]
        return evaluate(valid, self.model, self.known, self.config.valid_protocol, seed=self.config.seed)

    def run(self, until: int | None = None) -> TrainResult:
        """Train until step ``until`` (default ``max_steps``); returns per-step losses."""
        cfg = self.config
        until = cfg.max_steps if until is None else min(until, cfg.max_steps)
        result = TrainResult(self.step)
        window: list[float] = []
        metrics = self._open_metrics()
        try:
            while self.step < until:
                lr = lr_at(self.step, cfg)
                value = self.train_step()
                result.losses.append(value)
                window.append(value)
                valid_mrr = None
                if cfg.valid_interval and self.step % cfg.valid_interval == 0:
                    report = self.validate()
                    if report is not None:
                        valid_mrr = report.mrr
                        if valid_mrr > self.best_valid_mrr:
                            self.best_valid_mrr, self.best_step = valid_mrr, self.step
                            self._save("best.ckpt")
                if self.step % cfg.log_interval == 0 or valid_mrr is not None:
                    row = {
                        "step": self.step,
                        "loss": float(np.mean(window)),
                        "lr": lr,
                        "valid_mrr": "" if valid_mrr is None else valid_mrr,
                    }
                    window = []
                    result.log.append(row)
                    logger.info(
                        "step %d loss %.5f lr %.2e%s",
                        row["step"], row["loss"], lr,
                        "" if valid_mrr is None else f" valid MRR {valid_mrr:.4f}",
                    )
                    if metrics is not None:
                        metrics[1].writerow(row)
                        metrics[0].flush()
                if self.step % cfg.checkpoint_interval == 0:
                    self._save("last.ckpt")
        finally:
            if metrics is not None:
                metrics[0].close()
        self._save("last.ckpt")
        result.steps = self.step
        result.best_valid_mrr = self.best_valid_mrr if self.best_step >= 0 else float("nan")
        result.best_step = self.best_step
        return result

    # --- persistence ------------------------------------------------------

    def _open_metrics(self):
        if self.out_dir is None:
            return None
        path = self.out_dir / "metrics.csv"
        fresh = not path.exists() or self.step == 0
        fh = open(path, "w" if fresh else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=["step", "loss", "lr", "valid_mrr"])
        if fresh:
            writer.writeheader()
        return fh, writer

    def _save(self, name: str) -> None:
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / name)

    def save_checkpoint(self, path: str | os.PathLike) -> None:
        arrays = {f"param/{k}": v for k, v in self.model.state_dict().items()}
        arrays.update({f"opt/{k}": v for k, v in self.optimizer.state_dict().items()})
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "step": self.step,
            "best_valid_mrr": self.best_valid_mrr if self.best_step >= 0 else None,
            "best_step": self.best_step,
            "rng": self.rng.bit_generator.state,
            "graph_checksum": self.data.graph.checksum().hex(),
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        tmp = Path(f"{path}.tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)

    @classmethod
    def resume(
        cls,
        path: str | os.PathLike,
        data: DatasetSplits,
        vocab: Vocabulary,
        out_dir: str | os.PathLike | None = None,
    ) -> "Trainer":
        meta, arrays = read_checkpoint(path)
        if meta["graph_checksum"] != data.graph.checksum().hex():
            raise StarGraphError(f"{path}: checkpoint was trained on a different graph")
        trainer = cls(data, vocab, from_dict(meta["config"]), out_dir)
        trainer.model.load_state_dict(
            {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        )
        trainer.optimizer.load_state_dict(
            {k[len("opt/"):]: v for k, v in arrays.items() if k.startswith("opt/")}
        )
        trainer.rng.bit_generator.state = meta["rng"]
        trainer.step = meta["step"]
        if meta["best_valid_mrr"] is not None:
            trainer.best_valid_mrr, trainer.best_step = meta["best_valid_mrr"], meta["best_step"]
        return trainer

    def _dump_diagnostics(self, value: float, batch: TripleBatch) -> None:
        if self.out_dir is None:
            return
        info = {
            "step": self.step,
            "loss": repr(value),
            "param_norms": {k: float(np.linalg.norm(p.data)) for k, p in self.model.params.items()},
            "param_finite": {k: bool(np.isfinite(p.data).all()) for k, p in self.model.params.items()},
            "batch_positives": batch.positives[:16].tolist(),
        }
        with open(self.out_dir / "diagnostics.json", "w") as fh:
            json.dump(info, fh, indent=2)


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint: {exc}") from None
    if "meta" not in arrays:
        raise FormatError(f"{path}: checkpoint has no metadata")
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
    return meta, arrays


def load_model(path: str | os.PathLike, data: DatasetSplits, vocab: Vocabulary) -> tuple[StarGraphModel, RunConfig]:
    meta, arrays = read_checkpoint(path)
    check_vocabulary(vocab, data.graph)
    config = from_dict(meta["config"])
    model = StarGraphModel(
        vocab, data.num_relations, config.encoder_config(), config.score_config(),
        seed=config.seed, dtype=np.dtype(config.dtype),
    )
    model.load_state_dict({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    return model, config


def train(data: DatasetSplits, vocab: Vocabulary, config: RunConfig, out_dir=None) -> tuple[StarGraphModel, TrainResult]:
    trainer = Trainer(data, vocab, config, out_dir)
    result = trainer.run()
    return trainer.model, result
