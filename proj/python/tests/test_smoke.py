import math

import pytest

import starlab


@pytest.fixture(scope="module")
def tiny_corpus():
    vocab = starlab.Vocab()
    vocab.size = 10
    codebook = starlab.make_codebook(vocab, 8, 7)
    domain = starlab.DomainSpec()
    domain.name = "clean"
    domain.frames_per_token = 2
    return starlab.synth_corpus(vocab, domain, codebook, 4, 3, 5, 11)


def test_star_combine_matches_reference_points():
    assert starlab.star_combine(1.17, 0.43) == pytest.approx(0.482, abs=1e-3)
    assert starlab.star_combine(1.0, 1.0) == pytest.approx(1.072, abs=1e-3)
    assert starlab.star_combine(0.81, 1.47) == pytest.approx(1.61, abs=1e-2)


def test_edit_distance_and_ter():
    assert starlab.edit_distance([1, 2, 3], [1, 2, 3]) == 0
    assert starlab.edit_distance([1, 2], [2, 2, 3]) == 2
    assert starlab.ter([[1, 2, 9, 4, 5]], [[1, 2, 3, 4, 5]]) == pytest.approx(0.2)


def test_corpus_round_trip(tiny_corpus, tmp_path):
    path = str(tmp_path / "corpus.jsonl")
    starlab.save_corpus(tiny_corpus, path)
    loaded = starlab.load_corpus(path)
    assert len(loaded.utterances) == len(tiny_corpus.utterances)
    assert loaded.utterances[0].reference == tiny_corpus.utterances[0].reference
    assert loaded.vocab.size == 10


def test_model_decode_and_score(tiny_corpus, tmp_path):
    cfg = starlab.ModelConfig()
    cfg.enc_layers = 1
    cfg.dec_layers = 1
    cfg.heads = 2
    cfg.model_dim = 32
    cfg.ff_dim = 64
    cfg.feature_dim = 8
    cfg.vocab = tiny_corpus.vocab
    cfg.max_len = 12
    cfg.init_seed = 42
    model = starlab.init_model(cfg)
    assert model.param_count() > 0

    trace = starlab.greedy_decode(model, tiny_corpus.utterances[0])
    assert trace.tokens[0] == cfg.vocab.bos
    assert trace.attention.shape[0] == len(trace.tokens)
    assert math.exp(trace.log_likelihood) <= 1.0

    if not trace.truncated and len(trace.content_tokens()) >= 1:
        scores = starlab.score_trace(trace)
        n = len(trace.content_tokens()) + 1
        assert len(scores.star) == n
        assert sum(scores.star) / n == pytest.approx(1.0, abs=1e-9)

    path = str(tmp_path / "model.ckpt")
    starlab.save_model(model, path)
    restored = starlab.load_model(path)
    assert restored.param_count() == model.param_count()
    again = starlab.greedy_decode(restored, tiny_corpus.utterances[0])
    assert again.tokens == trace.tokens


def test_run_star_reports(tiny_corpus):
    cfg = starlab.ModelConfig()
    cfg.enc_layers = 1
    cfg.dec_layers = 1
    cfg.heads = 2
    cfg.model_dim = 32
    cfg.ff_dim = 64
    cfg.feature_dim = 8
    cfg.vocab = tiny_corpus.vocab
    cfg.max_len = 12
    cfg.init_seed = 42
    model = starlab.init_model(cfg)

    adapt = starlab.AdaptConfig()
    adapt.K = 2
    adapt.epochs = 1
    adapt.grad_accum = 2
    adapt.seed = 3
    adapt.threads = 1
    adapted, report = starlab.run_star(model, tiny_corpus, adapt)
    assert len(report["rounds"]) == 1
    assert report["rounds"][0]["total"] == 4
    assert adapted.step_count >= model.step_count


def test_errors_are_typed():
    with pytest.raises(starlab.IoError):
        starlab.load_model("/nonexistent/model.ckpt")
    cfg = starlab.ModelConfig()
    cfg.model_dim = 30
    cfg.heads = 4
    with pytest.raises(starlab.ConfigError):
        starlab.init_model(cfg)
