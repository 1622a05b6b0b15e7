import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from lib.core.tensor import Tensor
from lib.handlers.tokenizer import tokenize
from lib.models.network import (EncoderSpec, HeadSpec, Mode, RngKey, TaskKind, encode, init_pln,
                                 init_rln, loss, predict)
from lib.utils.exceptions import ConfigError, DataError, GraphError

def test_init_rln_is_deterministic(tiny_spec):
    assert init_rln(tiny_spec, 5).equals(init_rln(tiny_spec, 5))
    assert not init_rln(tiny_spec, 5).equals(init_rln(tiny_spec, 6))

def test_init_rln_biases_zero_and_weights_bounded():
    spec = EncoderSpec(vocab_size=50, embed_dim=20, hidden_dims=(30, 10))
    theta = init_rln(spec, 0)
    fan = {'rln.embedding': (50, 20), 'rln.layer0.weight': (20, 30), 'rln.layer1.weight': (30, 10)}
    for name, value in theta.items():
        if name.endswith('bias'):
            assert_array_equal(value, 0.0)
        else:
            bound = math.sqrt(6.0 / sum(fan[name]))
            assert np.all(np.abs(value) <= bound)

def test_init_pln_per_task_index(tiny_spec):
    head = HeadSpec(TaskKind.CLASSIFICATION, tiny_spec.rep_dim, num_classes=3)
    assert init_pln(head, 0, task_index=1).equals(init_pln(head, 0, task_index=1))
    assert not init_pln(head, 0, task_index=1).equals(init_pln(head, 0, task_index=2))
    assert init_pln(head, 0)['pln.out.weight'].shape == (tiny_spec.rep_dim, 3)

def test_hidden_head_adds_layer(tiny_spec):
    head = HeadSpec(TaskKind.REGRESSION, tiny_spec.rep_dim, hidden_dim=4)
    w = init_pln(head, 0)
    assert w.names() == ('pln.hidden.weight', 'pln.hidden.bias', 'pln.out.weight', 'pln.out.bias')

def test_padding_leaves_representation_unchanged(tiny_spec):
    theta = init_rln(tiny_spec, 0)
    ids, mask = tokenize('alpha beta gamma', tiny_spec.vocab_size, tiny_spec.max_len)
    short_ids, short_mask = ids.copy(), mask.copy()
    longer = EncoderSpec(tiny_spec.vocab_size, tiny_spec.embed_dim, tiny_spec.hidden_dims, max_len=20)
    long_ids, long_mask = tokenize('alpha beta gamma', longer.vocab_size, longer.max_len)
    a = encode(theta, short_ids[None], short_mask[None]).data
    b = encode(theta, long_ids[None], long_mask[None]).data
    assert_array_equal(a, b)

def test_identical_rows_give_identical_representations(tiny_spec):
    theta = init_rln(tiny_spec, 0)
    ids, mask = tokenize('one two three', tiny_spec.vocab_size, tiny_spec.max_len)
    rep = encode(theta, np.stack([ids, ids]), np.stack([mask, mask])).data
    assert rep.shape == (2, tiny_spec.rep_dim)
    assert_array_equal(rep[0], rep[1])

def test_encode_is_equivariant_to_batch_permutation(tiny_spec):
    theta = init_rln(tiny_spec, 0)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        batch = int(rng.integers(2, 9))
        ids = rng.integers(0, tiny_spec.vocab_size, size=(batch, tiny_spec.max_len))
        lengths = rng.integers(1, tiny_spec.max_len + 1, size=batch)
        mask = (np.arange(tiny_spec.max_len)[None, :] < lengths[:, None]).astype(np.float64)
        order = rng.permutation(batch)
        rep = encode(theta, ids, mask).data
        assert_allclose(encode(theta, ids[order], mask[order]).data, rep[order], rtol=1e-12, atol=1e-15)

def test_out_of_range_token_raises(tiny_spec):
    theta = init_rln(tiny_spec, 0)
    ids = np.full((1, tiny_spec.max_len), tiny_spec.vocab_size)
    with pytest.raises(DataError):
        encode(theta, ids, np.ones_like(ids))

def test_predict_eval_is_deterministic(tiny_spec, rng):
    w = init_pln(HeadSpec(TaskKind.CLASSIFICATION, tiny_spec.rep_dim), 0)
    rep = Tensor(rng.normal(size=(3, tiny_spec.rep_dim)))
    assert_array_equal(predict(w, rep).data, predict(w, rep).data)

def test_zero_representation_gives_zero_logits(tiny_spec):
    w = init_pln(HeadSpec(TaskKind.CLASSIFICATION, tiny_spec.rep_dim, num_classes=4), 0)
    out = predict(w, Tensor(np.zeros((2, tiny_spec.rep_dim)))).data
    assert_array_equal(out, np.zeros((2, 4)))

def test_regression_head_output_shape(tiny_spec, rng):
    w = init_pln(HeadSpec(TaskKind.REGRESSION, tiny_spec.rep_dim), 0)
    assert predict(w, Tensor(rng.normal(size=(5, tiny_spec.rep_dim)))).shape == (5, 1)

def test_train_mode_dropout_depends_on_key(tiny_spec, rng):
    w = init_pln(HeadSpec(TaskKind.CLASSIFICATION, tiny_spec.rep_dim, dropout_rate=0.5), 0)
    rep = Tensor(rng.normal(size=(8, tiny_spec.rep_dim)))
    key = RngKey(0).fold_in(3)
    a = predict(w, rep, Mode.TRAIN, key).data
    assert_array_equal(a, predict(w, rep, Mode.TRAIN, key).data)
    assert not np.array_equal(a, predict(w, rep, Mode.TRAIN, key.fold_in(1)).data)
    with pytest.raises(GraphError):
        predict(w, rep, Mode.TRAIN)

def test_confident_logits_drive_loss_to_zero():
    previous = math.inf
    for margin in (1.0, 5.0, 20.0, 50.0):
        value = loss(Tensor(np.array([[margin, 0.0]])), np.array([0]), TaskKind.CLASSIFICATION).item()
        assert value < previous
        previous = value
    assert previous < 1e-20

def test_uniform_logits_loss_is_log_c():
    value = loss(Tensor(np.zeros((3, 5))), np.array([0, 1, 4]), TaskKind.CLASSIFICATION).item()
    assert value == pytest.approx(math.log(5), abs=1e-12)

def test_regression_loss_zero_at_target():
    targets = np.array([0.5, 1.5])
    assert loss(Tensor(targets[:, None]), targets, TaskKind.REGRESSION).item() == 0.0

def test_loss_kind_mismatch_raises():
    with pytest.raises(DataError):
        loss(Tensor(np.zeros((2, 2))), np.array([0.5, 0.1]), TaskKind.CLASSIFICATION)

def test_invalid_specs_raise():
    with pytest.raises(ConfigError):
        EncoderSpec(dropout_rate=1.0)
    with pytest.raises(ConfigError):
        HeadSpec(TaskKind.CLASSIFICATION, 4, num_classes=1)
