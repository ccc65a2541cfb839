import math

import numpy as np
import pytest

import sslada


def tiny_config():
    return {
        "family": {
            "seed": 4,
            "base": {"dim": 8, "latent_dim": 3},
            "domains": [
                {"name": "S", "n_samples": 300, "positive_ratio": 0.3, "role": "source"},
                {"name": "T", "n_samples": 160, "positive_ratio": 0.3, "role": "target",
                 "shift": {"rotation": 0.4, "noise_scale": 1.2}},
            ],
        },
        "backbone": {"dims": [8, 16, 8]},
        "workflow": {"ssl_pretrain": False, "ssl_retrain": False},
        "adapt": {"steps": 5, "batch_size": 16, "domain_fit_steps": 5},
        "probe": {"max_epochs": 5},
        "seeds": [0, 1],
        "budget": 5,
    }


def test_auprc_examples():
    assert sslada.auprc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0
    assert sslada.auprc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == pytest.approx(5 / 6, abs=1e-15)
    assert sslada.auprc([0.5] * 10, [1, 0, 0, 1, 0, 0, 0, 0, 0, 1]) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        sslada.auprc([0.1, 0.2], [0, 0])


def test_aada_and_aggregate():
    assert sslada.score_aada(0.2, [0.5, 0.5]) == pytest.approx(4 * math.log(2), rel=1e-14)
    assert sslada.score_aada(0.5, [0.3, 0.7]) == sslada.entropy([0.3, 0.7])
    mean, std = sslada.aggregate([0.71, 0.80, 0.65, 0.77, 0.77])
    assert mean == pytest.approx(0.74, abs=1e-14)
    assert std == pytest.approx(0.06, abs=1e-12)


def test_default_family_shapes():
    fam = sslada.generate_domains()
    assert fam["source"] == "H"
    assert len(fam["targets"]) == 10
    h = fam["domains"]["H"]
    assert h["features"].shape == (4699, 16)
    assert int(np.sum(h["labels"])) == 465
    assert len(set(h["ids"].tolist())) == 4699


def test_config_errors():
    cfg = sslada.default_config()
    assert cfg["budget"] == 10
    with pytest.raises(ValueError):
        sslada.run({"bogus": 1})
    with pytest.raises(ValueError):
        sslada.run({"seeds": [1, 1]})


def test_run_is_reproducible():
    a = sslada.run(tiny_config())
    b = sslada.run(tiny_config())
    assert a == b
    assert a["domains"] == ["T"]
    assert len(a["methods"]) == 5
