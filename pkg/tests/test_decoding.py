import json

import numpy as np
import pytest

from eie.data import Dataset, SyntheticGenConfig, synth_generate
from eie.decoding import (
    BANNED_IDS, DecodeConfig, _step_scores, beam_decode, generate, generate_corpus, greedy_decode, read_jsonl,
    record_memory, write_jsonl,
)
from eie.model import Guidance, ModelConfig, forward_full, init_params
from eie.rng import Rng
from eie.training import TrainingConfig, train_loop
from eie.vocab import SPECIAL, build_vocab

from conftest import TINY


@pytest.fixture(scope="module")
def corpus():
    ds = synth_generate(SyntheticGenConfig(num_records=50, feature_dim=8, image_tokens=3), seed=2)
    vocab = build_vocab(r.summary for r in ds)
    cfg = ModelConfig(vocab_size=len(vocab), max_text_len=12, **TINY)
    return ds, vocab, cfg, init_params(cfg, Rng(7).child("init"))


@pytest.fixture(scope="module")
def trained_esg():
    ds = synth_generate(SyntheticGenConfig(num_records=16, feature_dim=8, image_tokens=3), seed=4)
    cfg = TrainingConfig(variant="eie-esg", lr=1e-3, total_iterations=1200, batch_size=4, seed=0, checkpoint_every=0)
    res = train_loop(ds, cfg, model_overrides=dict(hidden_dim=32, num_heads=2))
    return ds, res


def test_greedy_is_deterministic(corpus):
    ds, vocab, cfg, params = corpus
    a = [generate(r, params, cfg, vocab).ids for r in ds.records[:10]]
    b = [generate(r, params, cfg, vocab).ids for r in ds.records[:10]]
    assert a == b


def test_beam_width_one_equals_greedy(corpus):
    ds, vocab, cfg, params = corpus
    for r in ds.records:
        mem = record_memory(r, params, cfg, Guidance("soft"))
        g = greedy_decode(mem, params, cfg, 12)
        b = beam_decode(mem, params, cfg, 12, 1)
        assert g[0] == b[0]
        if g[2]:
            assert b[2] and b[1] == pytest.approx(g[1], abs=1e-9)


def test_outputs_avoid_structural_tokens_and_respect_length(corpus):
    ds, vocab, cfg, params = corpus
    for strategy, width in (("greedy", 1), ("beam", 3)):
        dc = DecodeConfig(strategy=strategy, beam_width=width, max_len=6)
        for r in ds.records[:15]:
            gen = generate(r, params, cfg, vocab, dc)
            assert len(gen.ids) <= 6
            assert not set(gen.ids) & set(BANNED_IDS)
            assert SPECIAL.EOS not in gen.ids


def test_beam_score_not_below_greedy(corpus):
    ds, vocab, cfg, params = corpus
    for r in ds.records[:10]:
        mem = record_memory(r, params, cfg, Guidance("soft"))
        g = greedy_decode(mem, params, cfg, 12)
        b = beam_decode(mem, params, cfg, 12, 4)
        if g[2] and b[2]:
            assert b[1] >= g[1] - 1e-9


def test_incremental_scores_match_full_forward(corpus):
    ds, vocab, cfg, params = corpus
    r = ds.records[0]
    words = vocab.encode(r.summary)[2:6]
    mem = record_memory(r, params, cfg, Guidance("soft"))
    inc = _step_scores([words], mem, params, cfg)[0]
    ids = np.array([[SPECIAL.CLS, SPECIAL.BOS, *words, SPECIAL.MASK]])
    full = forward_full([r], ids, Guidance("soft"), params, cfg).data[0, -1].astype(np.float64)
    full[list(BANNED_IDS)] = -np.inf
    z = full - full.max()
    full = z - np.log(np.exp(z).sum())
    ok = np.isfinite(full)
    assert np.array_equal(ok, np.isfinite(inc))
    assert np.allclose(inc[ok], full[ok], atol=1e-4)


def test_corpus_rows_match_inputs(corpus, tmp_path):
    ds, vocab, cfg, params = corpus
    rows, failures = generate_corpus(ds.records[:7], params, cfg, vocab)
    assert not failures and [r["id"] for r in rows] == [r.id for r in ds.records[:7]]
    path = write_jsonl(rows, tmp_path / "h.jsonl")
    assert len(path.read_text().splitlines()) == 7
    assert read_jsonl(path) == rows
    assert set(json.loads(path.read_text().splitlines()[0])) == {"id", "hypothesis", "reference"}


def test_empty_corpus_gives_empty_file(corpus, tmp_path):
    _, vocab, cfg, params = corpus
    rows, failures = generate_corpus(Dataset(14, []).records, params, cfg, vocab)
    path = write_jsonl(rows, tmp_path / "h.jsonl")
    assert path.read_text() == "" and read_jsonl(path) == []


def test_mismatched_record_is_skipped(corpus):
    ds, vocab, cfg, params = corpus
    bad = synth_generate(SyntheticGenConfig(num_records=1, feature_dim=4, image_tokens=3), seed=0).records[0]
    rows, failures = generate_corpus([ds.records[0], bad, ds.records[1]], params, cfg, vocab)
    assert len(rows) == 2 and failures[0][0] == bad.id and "do not match" in failures[0][1]


def test_read_jsonl_names_bad_line(tmp_path):
    p = tmp_path / "h.jsonl"
    p.write_text('{"id": "a", "hypothesis": "x", "reference": "y"}\n{oops\n')
    with pytest.raises(ValueError, match="line 2"):
        read_jsonl(p)


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(strategy="sample")
    with pytest.raises(ValueError):
        DecodeConfig(beam_width=0)


def test_guidance_changes_output_of_trained_esg(trained_esg):
    ds, res = trained_esg
    soft = [generate(r, res.params, res.model_cfg, res.vocab, DecodeConfig(guidance=Guidance("soft"))).ids
            for r in ds.records]
    off = [generate(r, res.params, res.model_cfg, res.vocab, DecodeConfig(guidance=Guidance("off"))).ids
           for r in ds.records]
    assert soft != off
