import json

import numpy as np
import pytest
from helpers import random_bank
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_shaping import __version__
from spectral_shaping.errors import FormatError
from spectral_shaping.experiments import make_ground_truth
from spectral_shaping.filtering import project_chebyshev
from spectral_shaping.graphs import generate_graph
from spectral_shaping.io import (
    bank_from_dict,
    bank_to_dict,
    checkpoint_from_dict,
    checkpoint_to_dict,
    config_hash,
    dumps,
    filter_from_dict,
    filter_to_dict,
    graph_from_dict,
    graph_to_dict,
    load_bank,
    provenance,
    read_json,
    read_matrix_csv,
    read_table_csv,
    response_table,
    write_json,
    write_loss_history,
    write_matrix_csv,
    write_response_csv,
)
from spectral_shaping.kernel import eval_bank
from spectral_shaping.training import LossRecord, TrainingState


def through_json(d):
    return json.loads(dumps(d))


def assert_same_bank(a, b):
    assert a.lambda_max == b.lambda_max
    assert a.baseline.activation == b.baseline.activation
    for (na, xa), (nb, xb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(xa, xb)


@pytest.mark.parametrize("activation", ["tanh", "softplus"])
def test_bank_round_trip_is_bit_faithful(activation):
    bank = random_bank(np.random.default_rng(0), 3, lambda_max=7.25, activation=activation)
    back = bank_from_dict(through_json(bank_to_dict(bank)))
    assert_same_bank(bank, back)
    lam = np.linspace(0, 7.25, 33)
    np.testing.assert_array_equal(eval_bank(bank, lam), eval_bank(back, lam))


def test_bank_document_fields():
    d = bank_to_dict(random_bank(np.random.default_rng(1), 2))
    assert d["format_version"] == 1
    assert d["layer_sizes"] == [1, 8, 8, 1]
    assert d["input_normalization"] == "divide_by_lambda_max"


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("mu_raw"),
    lambda d: d.update(format_version=99),
    lambda d: d.update(layer_sizes=[1, 4, 1]),
    lambda d: d.update(weights="nope"),
    lambda d: d.update(mu_raw=[1.0]),
])
def test_corrupt_banks_raise_format_errors(mutate):
    d = bank_to_dict(random_bank(np.random.default_rng(2), 2))
    mutate(d)
    with pytest.raises(FormatError):
        bank_from_dict(d)


def test_graph_round_trip():
    g = generate_graph("ws", {"k": 4, "p": 0.2}, seed=3, n=20)
    back = graph_from_dict(through_json(graph_to_dict(g)))
    assert back.num_nodes == g.num_nodes
    assert back.edges() == g.edges()
    assert back.family == g.family and back.seed == g.seed
    with pytest.raises(FormatError):
        graph_from_dict({"n": 3})
    with pytest.raises(FormatError):
        graph_from_dict({"n": 3, "edges": [[0, 5, 1.0]]})


def test_filter_round_trip():
    f = project_chebyshev(np.cos, 3.5, 16, damping="jackson")
    back = filter_from_dict(through_json(filter_to_dict(f)))
    np.testing.assert_array_equal(back.coefficients, f.coefficients)
    assert back.lambda_max == f.lambda_max and back.damping == f.damping
    with pytest.raises(FormatError):
        filter_from_dict({"lambda_max": 1.0})


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    bank = random_bank(rng, 2)
    state = TrainingState.fresh(bank)
    for name in state.m:
        state.m[name] = rng.standard_normal(state.m[name].shape)
        state.v[name] = rng.random(state.v[name].shape)
    state.step = 17
    write_json(tmp_path / "ckpt.json", checkpoint_to_dict(state, {"note": "x"}))
    d = read_json(tmp_path / "ckpt.json")
    assert d["note"] == "x"
    back = checkpoint_from_dict(d)
    assert back.step == 17
    assert_same_bank(bank, back.bank)
    for name in state.m:
        np.testing.assert_array_equal(back.m[name], state.m[name])
        np.testing.assert_array_equal(back.v[name], state.v[name])
    # both checkpoint and bare bank documents load as banks
    assert_same_bank(load_bank(tmp_path / "ckpt.json"), bank)
    write_json(tmp_path / "bank.json", bank_to_dict(bank))
    assert_same_bank(load_bank(tmp_path / "bank.json"), bank)
    del d["adam_v"]
    with pytest.raises(FormatError):
        checkpoint_from_dict(d)


def test_invalid_json_is_a_format_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        read_json(p)
    p.write_text("[1, 2, 3]")
    with pytest.raises(FormatError):
        load_bank(p)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_matrix_csv_round_trip_is_exact(tmp_path_factory, matrix):
    p = tmp_path_factory.mktemp("csv") / "m.csv"
    write_matrix_csv(p, matrix, meta={"kind": "inputs"})
    np.testing.assert_array_equal(read_matrix_csv(p), matrix)


def test_matrix_csv_layout_and_errors(tmp_path):
    p = tmp_path / "m.csv"
    write_matrix_csv(p, np.arange(6.0).reshape(3, 2), meta={"rows": "signals"})
    lines = p.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[-2:] == ["0.0,2.0,4.0", "1.0,3.0,5.0"]
    for text in ("1,2\n3,x\n", "# only a comment\n", "1,2,3\n4,5\n"):
        p.write_text(text)
        with pytest.raises(FormatError):
            read_matrix_csv(p)


def test_loss_history_csv(tmp_path):
    hist = [LossRecord(0, 3.0, 2.5, 0.25, 0.25), LossRecord(1, 1.0, 0.75, 0.125, 0.125)]
    write_loss_history(tmp_path / "loss.csv", hist, meta={"k": 1})
    rows = read_table_csv(tmp_path / "loss.csv")
    assert list(rows[0]) == ["epoch", "total", "data", "smooth", "shape"]
    assert [float(r["total"]) for r in rows] == [3.0, 1.0]


def test_response_table_columns_and_values(tmp_path):
    bank = random_bank(np.random.default_rng(5), 3, lambda_max=4.0)
    gt = make_ground_truth(2, 4.0, 0)
    rows, columns = response_table(bank, ground_truth=gt)
    assert columns == ["lambda", "response_total", "response_component_1", "response_component_2",
                       "response_component_3", "ground_truth"]
    assert len(rows) == 512
    lam = np.array([r["lambda"] for r in rows])
    np.testing.assert_array_equal(lam, np.linspace(0, 4.0, 512))
    np.testing.assert_allclose([r["response_total"] for r in rows], eval_bank(bank, lam), rtol=1e-15)
    comp_sum = [sum(r[f"response_component_{k}"] for k in (1, 2, 3)) for r in rows]
    np.testing.assert_allclose(comp_sum, [r["response_total"] for r in rows], rtol=1e-12, atol=1e-14)
    write_response_csv(tmp_path / "resp.csv", bank)
    back = read_table_csv(tmp_path / "resp.csv")
    assert len(back) == 512 and "ground_truth" not in back[0]


def test_provenance_and_hash():
    a = {"x": 1, "y": [1, 2]}
    b = {"y": [1, 2], "x": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"x": 2, "y": [1, 2]})
    assert provenance(a) == {"config_hash": config_hash(a), "version": __version__}
    assert dumps(a) == dumps(b)
