import math

import numpy as np
import pytest
import torch

from gerbil import seqmodel
from gerbil.core import EOS, SOS, SubsetRecord
from gerbil.seqmodel import (
    CheckpointError,
    ModelConfig,
    NaNLoss,
    SequenceTooLong,
    SubsetVAE,
    TrainConfig,
    UnknownToken,
    build_model,
    decode_logits,
    encode,
    evaluator_loss,
    generate,
    generate_raw,
    joint_loss,
    kl_loss,
    load_checkpoint,
    pad_sequences,
    reconstruction_loss,
    reparameterize,
    save_checkpoint,
    token_accuracy,
    train,
)

SMALL = ModelConfig(d_model=16, heads=2, ff_dim=32, latent_dim=8, evaluator_hidden=(16, 16))


def small_model(n_features=6, seed=0, cfg=SMALL):
    return build_model(n_features, cfg, seed)


def t(values):
    return torch.tensor(values, dtype=torch.float64)


def test_kl_verbatim_values():
    z = torch.zeros(64, dtype=torch.float64)
    assert float(kl_loss(z, z)) == 0.0
    m = z.clone()
    m[0] = 1
    assert abs(float(kl_loss(m, z)) - 1.0) < 1e-9
    s = z.clone()
    s[0] = 1
    assert abs(float(kl_loss(z, s)) - (math.e - 2)) < 1e-9


def test_kl_standard_form_and_batch_mean():
    s = t([[1.0, 0.0], [0.0, 0.0]])
    m = t([[0.0, 0.0], [2.0, 0.0]])
    expected = (0.5 * (math.exp(2) - 3) + 0.5 * 4) / 2
    assert float(kl_loss(m, s, "standard")) == pytest.approx(expected, abs=1e-12)
    assert float(kl_loss(m, None)) == 0.0


def test_joint_loss_weights():
    assert joint_loss(1.0, 0.5, 2.0) == pytest.approx(0.902, abs=1e-12)
    assert joint_loss(0.0, 0.0, 0.0) == 0.0
    assert joint_loss(1.0, 0.5, 2.0, TrainConfig(gamma=0.0)) == pytest.approx(0.9, abs=1e-12)


def test_reparameterize():
    e = t([0.3, -1.2])
    z = torch.zeros(2, dtype=torch.float64)
    assert torch.equal(reparameterize(z, z, e), e)
    m = t([0.5, 1.5])
    assert torch.equal(reparameterize(m, t([0.1, 0.2]), z), m)
    out = reparameterize(t([1.0]), t([math.log(2)]), t([0.5]))
    assert float(out[0]) == pytest.approx(2.0, abs=1e-12)


def test_token_nll_softmax_value():
    logits = torch.tensor([[[0.0, 10.0, 0.0]]], dtype=torch.float64)
    nll = seqmodel._token_nll(logits, torch.tensor([[SOS]]))
    assert float(nll[0]) == pytest.approx(math.log(1 + 2 * math.exp(-10)), rel=1e-12)
    assert float(nll[0]) == pytest.approx(9.08e-5, abs=1e-7)


def test_decode_distribution_normalised():
    model = small_model()
    e = torch.randn(SMALL.latent_dim, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        p = torch.softmax(decode_logits(e, [SOS, 4, 7], model).double(), dim=-1)
    assert p.shape == (model.vocab_size,)
    assert abs(float(p.sum()) - 1) < 1e-9
    with pytest.raises(ValueError):
        decode_logits(e, [4], model)


def _uniform_decoder(model):
    with torch.no_grad():
        model.out.weight.zero_()
        model.out.bias.zero_()


def test_reconstruction_loss_uniform_decoder():
    model = small_model()
    _uniform_decoder(model)
    e = torch.zeros(SMALL.latent_dim)
    seq = [5, 3, 8]
    expected = (len(seq) + 1) * math.log(model.vocab_size)
    with torch.no_grad():
        got = float(reconstruction_loss(e, seq, model))
    assert got == pytest.approx(expected, rel=1e-6)


def test_reconstruction_loss_matches_token_by_token_oracle():
    model = small_model().double()
    e = torch.randn(SMALL.latent_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    seq = [6, 3, 8, 4]
    with torch.no_grad():
        total = 0.0
        prefix = [SOS]
        for nxt in seq + [EOS]:
            logp = torch.log_softmax(decode_logits(e, prefix, model), dim=-1)
            total -= float(logp[nxt])
            prefix.append(nxt)
        got = float(reconstruction_loss(e, seq, model))
    assert got == pytest.approx(total, rel=1e-10)


def _constant_evaluator(model, value):
    last = model.evaluator[-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.fill_(value)


@torch.no_grad()
def test_evaluator_loss_examples():
    model = small_model().double()
    e = torch.zeros(SMALL.latent_dim, dtype=torch.float64)
    _constant_evaluator(model, 0.6)
    assert float(evaluator_loss(e, 0.6, model)) == pytest.approx(0.0, abs=1e-15)
    assert float(evaluator_loss(e, 0.8, model)) == pytest.approx(0.04, abs=1e-12)
    _constant_evaluator(model, 0.5)
    batch = torch.zeros(2, SMALL.latent_dim, dtype=torch.float64)
    assert float(evaluator_loss(batch, [0.6, 0.8], model)) == pytest.approx(0.05, abs=1e-12)


def test_encode_determinism_and_order_sensitivity():
    model = small_model()
    a1, a2 = encode([3, 5, 8], model), encode([3, 5, 8], model)
    assert torch.equal(a1.m, a2.m) and torch.equal(a1.sigma, a2.sigma)
    b = encode([8, 3, 5], model)
    assert not torch.allclose(a1.m, b.m)


def test_encode_rejects_bad_sequences():
    model = small_model(n_features=4)
    with pytest.raises(SequenceTooLong):
        encode([3] * (model.max_len + 1), model)
    with pytest.raises(UnknownToken):
        encode([3, 7], model)
    with pytest.raises(UnknownToken):
        encode([EOS], model)


def test_padding_does_not_change_results():
    model = small_model().double()
    seqs = [[4, 5], [3, 6, 7, 8, 5]]
    enc, dec_in, target = pad_sequences(seqs)
    with torch.no_grad():
        m, s = model.encode_batch(enc)
        alone = encode(seqs[0], model)
        torch.testing.assert_close(m[0], alone.m, rtol=1e-12, atol=1e-12)
        torch.testing.assert_close(s[0], alone.sigma, rtol=1e-12, atol=1e-12)
        batch_nll = seqmodel._token_nll(model.decode_batch(m, dec_in), target)
        single = reconstruction_loss(m[0], seqs[0], model)
    assert float(batch_nll[0]) == pytest.approx(float(single), rel=1e-12)


def _fd_check(model, points, h=1e-4):
    worst = 0.0
    for e in points:
        x = e.clone().requires_grad_(True)
        (g,) = torch.autograd.grad(model.evaluate(x[None]).sum(), x)
        fd = torch.empty_like(e)
        with torch.no_grad():
            for i in range(len(e)):
                d = torch.zeros_like(e)
                d[i] = h
                fd[i] = (model.evaluate((e + d)[None]) - model.evaluate((e - d)[None])).sum() / (2 * h)
        rel = (g - fd).abs() / torch.maximum(g.abs(), fd.abs()).clamp_min(1e-8)
        worst = max(worst, float(rel.max()))
    return worst


def test_evaluator_gradient_matches_finite_differences():
    model = build_model(10, ModelConfig(), seed=0).double()
    gen = torch.Generator().manual_seed(0)
    points = [torch.randn(64, dtype=torch.float64, generator=gen) for _ in range(10)]
    assert _fd_check(model, points) < 1e-4


def _records(n_features=6, n=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, n_features + 1))
        toks = tuple(int(x) + 3 for x in rng.permutation(n_features)[:k])
        out.append(SubsetRecord(toks, float(rng.random())))
    return out


def test_training_descends_at_default_lr():
    recs = _records()
    res = train(recs, 6, SMALL, TrainConfig(epochs=400, seed=0))
    assert res.curve[-1]["joint"] < res.curve[0]["joint"]
    assert len(res.curve) == 400


def test_training_is_deterministic():
    recs = _records()
    cfg = TrainConfig(epochs=3, batch_size=5, seed=4)
    a = train(recs, 6, SMALL, cfg).model.state_dict()
    b = train(recs, 6, SMALL, cfg).model.state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_training_overfits_small_problem():
    recs = _records(n_features=20, n=50, seed=1)
    res = train(recs, 20, ModelConfig(), TrainConfig(epochs=400, batch_size=32, lr=1e-3, seed=0))
    assert token_accuracy(res.model, [r.tokens for r in recs]) >= 0.95


def test_nan_loss_is_reported(monkeypatch):
    def bad(*args):
        nan = torch.tensor(float("nan"), requires_grad=True)
        return nan, nan, nan

    monkeypatch.setattr(seqmodel, "_batch_losses", bad)
    with pytest.raises(NaNLoss) as err:
        train(_records(), 6, SMALL, TrainConfig(epochs=2))
    assert err.value.epoch == 1 and err.value.batch == 0


def test_generate_stops_at_eos_first():
    model = small_model()
    _uniform_decoder(model)
    with torch.no_grad():
        model.out.bias[EOS] = 5.0
    assert generate(torch.zeros(SMALL.latent_dim), model) == ()


def test_generate_truncates_without_eos():
    model = small_model()
    _uniform_decoder(model)
    with torch.no_grad():
        model.out.bias[5] = 5.0
    raw = generate_raw(model, torch.zeros(SMALL.latent_dim), max_len=4)
    assert raw == [[5, 5, 5, 5]]
    assert generate(torch.zeros(SMALL.latent_dim), model, max_len=4) == (5,)


def test_checkpoint_round_trip(tmp_path):
    res = train(_records(), 6, SMALL, TrainConfig(epochs=2))
    path = tmp_path / "ck.pt"
    save_checkpoint(res, path)
    back = load_checkpoint(path)
    assert back.model_cfg == SMALL
    sd1, sd2 = res.model.state_dict(), back.model.state_dict()
    assert all(torch.equal(sd1[k], sd2[k]) for k in sd1)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "ck.pt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    torch.save({"format": "other"}, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_deterministic_variant_has_no_logscale():
    model = SubsetVAE(5, ModelConfig(variational=False, d_model=16, heads=2, latent_dim=8))
    lp = encode([3, 4], model)
    assert lp.sigma is None
