import math

import pytest

import aped


def test_version():
    assert aped.__version__ == "1.0.0"


def test_parse_round_trip():
    ids = aped.parse_phonemes("HH AH L OW")
    assert len(ids) == 4
    assert aped.render_phonemes(ids) == "HH AH L OW"


def test_unknown_phoneme_is_rejected():
    with pytest.raises(ValueError, match="XX"):
        aped.parse_phonemes("AA XX")


def test_align_substitution_and_deletion():
    r = aped.align("K AE T", "K AH")
    assert r["error_states"] == [0, 1, 1]
    # Traceback from the last cell prefers the diagonal, so T pairs with AH.
    assert r["ops"] == ["match", "deletion", "substitution"]
    assert r["asr_mask"][-1] == 1
    assert r["score"] == -1.0


def test_metrics_counts():
    r = aped.metrics([1, 1, 0, 0], [1, 0, 1, 0])
    assert (r["tr"], r["fr"], r["fa"], r["ta"]) == (1, 1, 1, 1)
    assert math.isclose(r["f1"], 0.5)


def test_theta_sweep_is_monotone():
    probs = [[0.05, 0.3, 0.55, 0.8, 0.95], [0.2, 0.6]]
    states = [[0, 1, 0, 1, 1], [1, 0]]
    rows = aped.theta_sweep(probs, states)
    assert len(rows) == 9
    far = [r["far"] for r in rows]
    frr = [r["frr"] for r in rows]
    assert far == sorted(far)
    assert frr == sorted(frr, reverse=True)


def test_train_and_evaluate(tmp_path):
    manifest = aped.generate_corpus(tmp_path / "corpus", n_utts=60, seed=2, min_len=6, max_len=8)
    model = "model.d_model=16\nmodel.n_heads=2\nmodel.d_ff=32\nmodel.enc_layers=1\nmodel.dec_layers=1\n"
    pre = tmp_path / "pre.ckpt"
    out = aped.train(f"stage=pretrain_asr\nepochs=2\ndata={manifest}\nout_checkpoint={pre}\n{model}")
    assert out["log"].startswith("epoch,loss,asr,accent,eval,val_per")
    ad = tmp_path / "ad.ckpt"
    aped.train(f"stage=adapt_aped\nepochs=1\ndata={manifest}\ninit_checkpoint={pre}\nout_checkpoint={ad}\n{model}")
    r = aped.evaluate(str(ad), manifest)
    assert r["ta"] + r["fr"] + r["fa"] + r["tr"] > 0
    assert 0.0 <= r["f1"] <= 1.0
    assert 0.0 < aped.all_reject_f1(manifest) < 1.0

    m = aped.Model.load(str(ad))
    assert m.mode == "conditioned"
    probs = m.predict_error_probs([[0.0] * 39] * 12, aped.parse_phonemes("AA B K"))
    assert len(probs) == 3
    assert all(0.0 < p < 1.0 for p in probs)
