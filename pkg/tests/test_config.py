import json

import pytest

from ecacl.config import TrainConfig, dump_config, from_dict, load_config, schema, to_dict
from ecacl.errors import ConfigError
from ecacl.experiments import set_path


def test_defaults_match_published_settings():
    c = TrainConfig()
    assert (c.lambda1, c.lambda2, c.sigma, c.margin) == (0.1, 1.0, 0.8, 1.0)
    assert (c.uda.name, c.uda.weight) == ("mme", 0.1)
    assert (c.optim.momentum, c.optim.gamma, c.optim.beta) == (0.9, 10.0, 0.75)
    assert (c.steps, c.eval_every, c.N_u) == (3000, 200, 24)
    assert (c.strong_aug.num_ops, c.strong_aug.magnitude, c.strong_aug.cutout_fraction) == (2, 0.5, 0.5)


def test_round_trip_through_json(tmp_path):
    c = TrainConfig().replace(variant="ecacl_t", sigma=0.9)
    dump_config(c, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == c


def test_partial_document_fills_defaults(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"sigma": 0.7, "data": {"split": {"split_seed": 3}}}))
    c = load_config(tmp_path / "c.json")
    assert c.sigma == 0.7 and c.data.split.split_seed == 3 and c.lambda2 == 1.0


@pytest.mark.parametrize(
    "doc",
    [
        {"sigmaa": 0.5},
        {"data": {"colour": 1}},
        {"sigma": "high"},
        {"steps": 1.5},
        {"strong_labeled": 1},
        {"variant": "ecacl_x"},
        {"sigma": 1.5},
        {"lambda1": -0.1},
        {"uda": {"name": "dann"}},
        {"strong_aug": {"op_set": ["blur"]}},
        {"N_t": 2},
    ],
)
def test_invalid_documents_are_config_errors(doc):
    with pytest.raises(ConfigError):
        from_dict(TrainConfig, doc)


def test_bad_json_is_config_error(tmp_path):
    (tmp_path / "c.json").write_text("{sigma: 1}")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_schema_covers_every_field():
    s = schema()
    assert set(s) == set(to_dict(TrainConfig()))
    assert s["sigma"] == {"type": "float", "default": 0.8}
    assert "split_seed" in s["data"]["split"]


def test_set_path_validates():
    c = set_path(TrainConfig(), "data.split.split_seed", 4)
    assert c.data.split.split_seed == 4
    with pytest.raises(ConfigError):
        set_path(TrainConfig(), "data.nope", 1)
    with pytest.raises(ConfigError):
        set_path(TrainConfig(), "sigma.x", 1)
