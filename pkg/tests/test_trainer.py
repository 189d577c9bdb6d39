import csv

import numpy as np
import pytest
from scipy import stats

from stargraph import tensor as T
from stargraph.config import RunConfig, preset_config
from stargraph.datasets import random_triples, star_graph
from stargraph.errors import FormatError, NumericError, StarGraphError
from stargraph.graph import from_arrays
from stargraph.optim import AdamW
from stargraph.tensor import Parameter
from stargraph.trainer import Trainer, load_model, lr_at, read_checkpoint, sample_negatives
from stargraph.vocab import build_vocabulary, select_anchors

SMALL = dict(
    d_a=16, d_n=8, k_anchors=4, m_neighbors=3, heads=2, batch_size=32, neg_size=8,
    num_anchors=5, log_interval=50, valid_interval=0, checkpoint_interval=10**6,
)


def setup(triples=None, n=50, r=4, **overrides):
    triples = random_triples(n, 400, r, seed=0) if triples is None else triples
    data = from_arrays(triples, triples[:40], triples[:40], num_entities=n, num_relations=r)
    cfg = RunConfig(**{**SMALL, **overrides})
    vocab = build_vocabulary(data.graph, select_anchors(data.graph, cfg.num_anchors), cfg.k_anchors, cfg.m_neighbors)
    return data, vocab, cfg


# --- schedule and sampling ---------------------------------------------------------


def test_lr_schedule():
    cfg = RunConfig()
    assert lr_at(0, cfg) == 5e-4
    assert lr_at(249_999, cfg) == 5e-4
    assert lr_at(250_000, cfg) == pytest.approx(5e-5)
    assert lr_at(500_000, cfg) == pytest.approx(5e-5)


def test_negative_shapes():
    rng = np.random.default_rng(0)
    pos = random_triples(1000, 512, 3, seed=1)
    batch = sample_negatives(pos, 64, 1000, rng)
    assert batch.negatives.shape == (512, 64)
    assert batch.negatives.min() >= 0 and batch.negatives.max() < 1000
    assert 0.4 < batch.corrupt_head.mean() < 0.6
    one = sample_negatives(pos[:3], 5, 1, rng)
    assert np.all(one.negatives == 0)
    with pytest.raises(StarGraphError):
        sample_negatives(pos, 0, 10, rng)


def test_negatives_are_uniform():
    batch = sample_negatives(np.zeros((10_000, 3), dtype=np.int64), 100, 100, np.random.default_rng(12345))
    counts = np.bincount(batch.negatives.ravel(), minlength=100)
    assert stats.chisquare(counts).pvalue > 0.01
    assert stats.binomtest(int(batch.corrupt_head.sum()), 10_000).pvalue > 0.01


# --- AdamW -------------------------------------------------------------------------


def test_adamw_first_step():
    p = Parameter(np.array([1.0]), "p")
    opt = AdamW([p], lr=0.1)
    p.grad[...] = 1.0
    opt.step()
    assert p.data[0] == pytest.approx(0.9, abs=1e-7)


def test_adamw_zero_grad_leaves_params():
    p = Parameter(np.array([1.0, -2.0]), "p")
    opt = AdamW([p], lr=0.1)
    for _ in range(3):
        opt.step()
    assert p.data.tolist() == [1.0, -2.0]


def test_adamw_weight_decay_is_decoupled():
    p = Parameter(np.array([2.0]), "p")
    AdamW([p], lr=0.1, weight_decay=0.5).step()
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_adamw_converges_on_quadratic():
    target = np.array([1.0, -1.0, 0.5])
    theta = Parameter(np.zeros(3), "theta")
    opt = AdamW([theta], lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        diff = T.sub(theta, target)
        T.total(T.mul(diff, diff)).backward()
        opt.step()
    assert np.linalg.norm(theta.data - target) < 1e-2


def test_adamw_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(6, 4))
    p = Parameter(rng.normal(size=4), "p")
    ref = p.data.copy()
    m = v = np.zeros(4)
    opt = AdamW([p], lr=0.03, betas=(0.8, 0.99), eps=1e-6, weight_decay=0.1)
    for t, g in enumerate(grads, start=1):
        p.grad[...] = g
        opt.step()
        ref = ref * (1 - 0.03 * 0.1)
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        ref = ref - 0.03 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-6)
    assert np.allclose(p.data, ref, rtol=1e-12)


def test_adamw_rejects_non_finite_grad():
    p = Parameter(np.array([1.0]), "weights")
    p.grad[...] = np.nan
    opt = AdamW([p])
    with pytest.raises(NumericError, match="weights"):
        opt.step()
    assert p.data[0] == 1.0 and opt.t == 0


def test_adamw_only_touches_params_with_grad():
    a, b = Parameter(np.ones(2), "a"), Parameter(np.ones(2), "b")
    opt = AdamW([a, b], lr=0.1)
    a.grad[...] = 1.0
    opt.step()
    assert b.data.tolist() == [1.0, 1.0] and not np.allclose(a.data, 1.0)


# --- training loop ------------------------------------------------------------------


def test_loss_trend_on_small_toy():
    data, vocab, cfg = setup(max_steps=2000, lr=5e-3)
    losses = np.array(Trainer(data, vocab, cfg).run().losses)
    assert np.all(np.isfinite(losses))
    smooth = np.convolve(losses, np.ones(100) / 100, mode="valid")
    quartiles = [q.mean() for q in np.array_split(smooth, 4)]
    assert all(a >= b for a, b in zip(quartiles, quartiles[1:])), quartiles


def test_resume_matches_uninterrupted(tmp_path):
    data, vocab, cfg = setup(max_steps=40, dropout=0.1)
    full = Trainer(data, vocab, cfg).run().losses
    first = Trainer(data, vocab, cfg)
    first.run(until=30)
    first.save_checkpoint(tmp_path / "s30.ckpt")
    again = Trainer.resume(tmp_path / "s30.ckpt", data, vocab)
    assert again.step == 30
    tail = again.run().losses
    assert tail == full[30:]


def test_runs_are_reproducible():
    data, vocab, cfg = setup(max_steps=15)
    assert Trainer(data, vocab, cfg).run().losses == Trainer(data, vocab, cfg).run().losses


def test_out_dir_artifacts(tmp_path):
    data, vocab, cfg = setup(max_steps=100, valid_interval=50, checkpoint_interval=50)
    result = Trainer(data, vocab, cfg, tmp_path).run()
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert list(rows[0]) == ["step", "loss", "lr", "valid_mrr"]
    assert [int(r["step"]) for r in rows] == [50, 100]
    assert all(r["valid_mrr"] for r in rows)
    assert result.best_step in (50, 100)
    meta, arrays = read_checkpoint(tmp_path / "best.ckpt")
    assert meta["config"] == cfg.to_dict() and meta["format_version"] == 1
    model, loaded = load_model(tmp_path / "last.ckpt", data, vocab)
    assert loaded == cfg
    assert np.array_equal(model.params["relations"].data, arrays["param/relations"]) == (result.best_step == 100)


def test_checkpoint_round_trip(tmp_path):
    data, vocab, cfg = setup(max_steps=5)
    tr = Trainer(data, vocab, cfg)
    tr.run()
    tr.save_checkpoint(tmp_path / "c.ckpt")
    model, _ = load_model(tmp_path / "c.ckpt", data, vocab)
    for name, p in tr.model.params.items():
        assert np.array_equal(p.data, model.params[name].data)
    assert np.array_equal(model.entity_representations(), tr.model.entity_representations())


def test_checkpoint_errors(tmp_path):
    data, vocab, cfg = setup(max_steps=2)
    tr = Trainer(data, vocab, cfg)
    tr.save_checkpoint(tmp_path / "c.ckpt")
    (tmp_path / "junk").write_bytes(b"not a checkpoint")
    with pytest.raises(FormatError):
        read_checkpoint(tmp_path / "junk")
    other, other_vocab, _ = setup(random_triples(50, 400, 4, seed=9))
    with pytest.raises(StarGraphError, match="different graph"):
        Trainer.resume(tmp_path / "c.ckpt", other, other_vocab)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_dumps_diagnostics(tmp_path):
    data, vocab, cfg = setup(max_steps=3)
    tr = Trainer(data, vocab, cfg, tmp_path)
    tr.model.params["relations"].data[...] = np.inf
    with pytest.raises(NumericError, match="non-finite loss"):
        tr.run()
    assert (tmp_path / "diagnostics.json").exists()


def test_star_config_stays_finite_for_10k_steps():
    """The star preset's graph and tokens at a reduced width and batch, for 10k steps."""
    data = star_graph()
    cfg = preset_config("star", dict(d_a=16, d_n=8, heads=2, batch_size=16, neg_size=4, max_steps=10_000,
                                     log_interval=1000, valid_interval=0, checkpoint_interval=10**6))
    vocab = build_vocabulary(data.graph, select_anchors(data.graph, 2), 2, 1)
    losses = Trainer(data, vocab, cfg).run().losses
    assert len(losses) == 10_000 and np.all(np.isfinite(losses))
