"""StarGraph model: encoder parameters + relation table + score function."""

from __future__ import annotations

import numpy as np

from . import objective
from . import tensor as T
from .encoder import EncoderConfig, assemble, init_encoder, run_encoder
from .errors import StarGraphError
from .objective import ScoreConfig, TripleBatch
from .tensor import Parameter, Tensor
from .vocab import Vocabulary

EVAL_CHUNK = 1 << 14


class StarGraphModel:
    def __init__(
        self,
        vocab: Vocabulary,
        num_relations: int,
        encoder_config: EncoderConfig,
        score_config: ScoreConfig,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.vocab = vocab
        self.num_relations = num_relations
        self.encoder_config = encoder_config
        self.score_config = score_config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = init_encoder(
            rng, encoder_config, vocab.num_entities, vocab.num_anchors, score_config.gamma, dtype
        )
        bound = score_config.gamma / encoder_config.d_a
        self.params["relations"] = Parameter(
            rng.uniform(-bound, bound, size=(num_relations, 3 * encoder_config.d_a)).astype(dtype),
            "relations",
        )
        self._cache: np.ndarray | None = None

    @property
    def num_entities(self) -> int:
        return self.vocab.num_entities

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def encode(self, entity_ids, training: bool = False, rng=None) -> Tensor:
        batch = assemble(self.vocab, entity_ids, self.encoder_config)
        return run_encoder(self.params, batch, self.encoder_config, training, rng)

    def loss(self, batch: TripleBatch, training: bool = False, rng=None) -> Tensor:
        ids = batch.entities()
        reps = self.encode(ids, training, rng)
        return objective.batch_objective(reps, ids, self.params["relations"], batch, self.score_config)

    # --- evaluation -------------------------------------------------------

    def invalidate(self) -> None:
        self._cache = None

    def entity_representations(self) -> np.ndarray:
        """Eval-mode representations of all entities, computed in chunks and cached.

        Call :meth:`invalidate` after changing parameters.
        """
        if self._cache is None:
            out = np.empty((self.num_entities, self.encoder_config.d_a), dtype=self.dtype)
            with T.no_grad():
                for lo in range(0, self.num_entities, EVAL_CHUNK):
                    ids = np.arange(lo, min(lo + EVAL_CHUNK, self.num_entities))
                    out[lo : lo + len(ids)] = self.encode(ids).data
            self._cache = out
        return self._cache

    def score_candidates(self, fixed, rels, side: str, candidates) -> np.ndarray:
        """Scores of ``(fixed, rel, c)`` (side='tail') or ``(c, rel, fixed)`` (side='head').

        ``candidates`` is ``[C]`` (shared) or ``[Q, C]``; returns ``[Q, C]``.
        """
        if side not in ("head", "tail"):
            raise StarGraphError(f"side must be head|tail, got {side!r}")
        reps = self.entity_representations()
        fixed = np.asarray(fixed, dtype=np.int64)
        rels = np.asarray(rels, dtype=np.int64)
        candidates = np.asarray(candidates, dtype=np.int64)
        shared = candidates.ndim == 1
        q = len(fixed)
        c = candidates.shape[-1]
        out = np.empty((q, c), dtype=self.dtype)
        d = reps.shape[1]
        step_c = max(1, min(c, EVAL_CHUNK))
        step_q = max(1, (1 << 22) // (step_c * d))
        with T.no_grad():
            for qlo in range(0, q, step_q):
                qs = slice(qlo, min(qlo + step_q, q))
                f = T.Tensor(reps[fixed[qs]][:, None, :])
                rel = T.Tensor(self.params["relations"].data[rels[qs]][:, None, :])
                for clo in range(0, c, step_c):
                    cs = slice(clo, min(clo + step_c, c))
                    ids = candidates[cs] if shared else candidates[qs, cs]
                    cand = T.Tensor(reps[ids] if not shared else reps[ids][None])
                    h, t = (cand, f) if side == "head" else (f, cand)
                    out[qs, cs] = objective.score(self.score_config, h, t, rel).data
        return out

    # --- persistence ------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise StarGraphError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise StarGraphError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]
        self.invalidate()
