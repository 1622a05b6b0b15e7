import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from lib.handlers.dataset import Phase, Sample, Task, TaskStream, assign_splits, split_support_query
from lib.handlers.dataset_handler import ColumnSpec, DatasetSchema, load_jsonl, load_tsv
from lib.handlers.synthetic import SyntheticSpec, gen_synthetic_stream, partition_stream, secret_oracle
from lib.handlers.tokenizer import SEP_ID, token_id, tokenize
from lib.models.network import TaskKind
from lib.utils.exceptions import ConfigError, DataError
from lib.utils.metrics import accuracy

def test_empty_text_is_all_padding():
    ids, mask = tokenize('', 4096, 64)
    assert_array_equal(ids, np.zeros(64))
    assert_array_equal(mask, np.zeros(64))

def test_long_text_is_truncated():
    ids, mask = tokenize(' '.join(f'tok{i}' for i in range(100)), 4096, 64)
    assert ids.shape == (64,)
    assert mask.sum() == 64

def test_token_hash_is_stable():
    # blake2b 在不同进程之间结果一致
    assert token_id('hello', 4096) == token_id('hello', 4096)
    assert tokenize('Hello world', 4096, 8)[0][0] == tokenize('hello', 4096, 8)[0][0]
    assert 2 <= token_id('hello', 4096) < 4096

def test_tokenize_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        tokenize('hello', 4096, 0)
    with pytest.raises(ConfigError):
        tokenize('hello', 2, 8)

def test_sentence_pair_uses_separator():
    ids, mask = tokenize('a b', 4096, 8, text_pair='c')
    assert ids[2] == SEP_ID
    assert mask.sum() == 4

def samples(n, label=lambda i: i % 2):
    return [Sample(f"text {i}", label(i)) for i in range(n)]

def test_split_support_query_sizes_and_disjoint():
    data = samples(50)
    support, query = split_support_query(data, 20, 15, seed=3)
    assert (len(support), len(query)) == (20, 15)
    assert not {id(s) for s in support} & {id(s) for s in query}

def test_split_is_seeded():
    data = samples(50)
    a = split_support_query(data, 10, 10, seed=3)
    b = split_support_query(data, 10, 10, seed=3)
    assert [s.text for s in a[0]] == [s.text for s in b[0]]
    assert [s.text for s in a[1]] == [s.text for s in b[1]]

def test_split_never_cycles():
    with pytest.raises(DataError):
        split_support_query(samples(10), 6, 5, seed=0)

def test_assign_splits_order_matches_support_query():
    data = samples(60)
    splits = assign_splits(data, 10, 10, 20, seed=4)
    support, query = split_support_query(data, 10, 10, seed=4)
    assert splits['support'] == support
    assert splits['query'] == query
    assert len(splits['eval']) == 20

def test_task_rejects_shared_samples():
    shared = Sample('x', 1)
    with pytest.raises(DataError):
        Task('t', TaskKind.CLASSIFICATION, 'accuracy', splits={'support': [shared], 'query': [shared]})

def test_task_rejects_metric_kind_mismatch():
    with pytest.raises(DataError):
        Task('t', TaskKind.CLASSIFICATION, 'pearson')

def test_stream_rejects_duplicate_ids():
    task = Task('t', TaskKind.CLASSIFICATION, 'accuracy')
    with pytest.raises(DataError):
        TaskStream([task, Task('t', TaskKind.CLASSIFICATION, 'accuracy')])

def test_synthetic_stream_is_seeded(tiny_synthetic):
    a = gen_synthetic_stream(tiny_synthetic, seed=7)
    b = gen_synthetic_stream(tiny_synthetic, seed=7)
    for x, y in zip(a, b):
        assert x.id == y.id
        for split in x.splits:
            assert [(s.text, s.label) for s in x.split(split)] == [(s.text, s.label) for s in y.split(split)]

def test_synthetic_secrets_are_disjoint(tiny_stream):
    secrets = [set(task.metadata['secret_tokens']) for task in tiny_stream]
    for i in range(len(secrets)):
        for j in range(i + 1, len(secrets)):
            assert not secrets[i] & secrets[j]

def test_secret_oracle_is_perfect_without_noise(tiny_stream):
    for task in tiny_stream:
        data = [s for split in task.splits.values() for s in split]
        preds = [secret_oracle(s, task.metadata['secret_tokens']) for s in data]
        assert accuracy(preds, [s.label for s in data]) == 1.0

def test_synthetic_labels_are_balanced():
    spec = SyntheticSpec(n_tasks=2, samples_per_task=400)
    for seed in range(20):
        for task in gen_synthetic_stream(spec, seed):
            labels = [s.label for split in task.splits.values() for s in split]
            assert 0.45 <= np.mean(labels) <= 0.55

def test_synthetic_regression_scores_in_range():
    spec = SyntheticSpec(n_tasks=1, samples_per_task=400, kinds=('pearson',))
    task = gen_synthetic_stream(spec, 0)[0]
    assert task.kind is TaskKind.REGRESSION
    scores = [s.label for split in task.splits.values() for s in split]
    assert min(scores) >= 0.0 and max(scores) <= 5.0
    assert all(s.text_pair for s in task.split('support'))

def test_partition_stream(tiny_stream):
    train, targets = partition_stream(tiny_stream, 2)
    assert train.phase is Phase.META_TRAIN and len(train) == 2
    assert targets.phase is Phase.META_TEST and targets.ids == [tiny_stream[2].id]
    with pytest.raises(DataError):
        partition_stream(tiny_stream, 3)

def test_load_jsonl(tmp_path):
    path = tmp_path / 'data.jsonl'
    rows = [{'text': 'a b', 'label': 'yes'}, {'text': 'c', 'label': 'no'}, {'text': 'd e f', 'label': 'yes'}]
    path.write_text('\n'.join(json.dumps(r) for r in rows) + '\n', encoding='utf-8')
    schema = DatasetSchema(TaskKind.CLASSIFICATION, label_map={'no': 0, 'yes': 1})
    loaded = load_jsonl(str(path), schema)
    assert [s.label for s in loaded] == [1, 0, 1]

def test_load_jsonl_unknown_label_names_line(tmp_path):
    path = tmp_path / 'data.jsonl'
    path.write_text('{"text": "a", "label": "yes"}\n{"text": "b", "label": "maybe"}\n', encoding='utf-8')
    schema = DatasetSchema(TaskKind.CLASSIFICATION, label_map={'no': 0, 'yes': 1})
    with pytest.raises(DataError, match=r':2\)'):
        load_jsonl(str(path), schema)

def test_load_tsv_sentence_pairs(tmp_path):
    path = tmp_path / 'rte.tsv'
    path.write_text(
        'index\tsentence1\tsentence2\tlabel\n'
        '0\tA man is walking.\tA person moves.\tentailment\n'
        '1\tThe sky is green.\tThe sky is blue.\tnot_entailment\n',
        encoding='utf-8'
    )
    columns = ColumnSpec(text=1, pair=2, label=3, label_map={'entailment': 0, 'not_entailment': 1})
    loaded = load_tsv(str(path), columns)
    assert [(s.text, s.text_pair, s.label) for s in loaded] == [
        ('A man is walking.', 'A person moves.', 0),
        ('The sky is green.', 'The sky is blue.', 1),
    ]

def test_load_tsv_regression_bad_value(tmp_path):
    path = tmp_path / 'sts.tsv'
    path.write_text('a\tb\t1.5\nc\td\tabc\n', encoding='utf-8')
    columns = ColumnSpec(text=0, pair=1, label=2, kind=TaskKind.REGRESSION)
    with pytest.raises(DataError, match=r':2\)'):
        load_tsv(str(path), columns, has_header=False)

def test_missing_file_raises(tmp_path):
    with pytest.raises(DataError):
        load_jsonl(str(tmp_path / 'absent.jsonl'), DatasetSchema())
