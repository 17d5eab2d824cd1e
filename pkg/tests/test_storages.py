import json
import os

import pytest

from tinypose.errors import DataError
from tinypose.storages import (JSONStorage, Storage, atomic_directory,
                               read_json, touch, write_json)

report = {'scene_id': 'scene000003', 'objective': 'learned',
          'solver': 'exact', 'value': 2.7182818284590451,
          'poses': [{'class_id': 1, 'quaternion': [1.0, 0.0, 0.0, 0.0],
                     'translation': [0.01, -0.02, 0.6]}],
          'num_hypotheses': {'1': 12}, 'failed_bases': None,
          'visible': [True, False]}


def test_json(tmp_path):
    storage = JSONStorage(tmp_path / 'estimate.json')
    assert storage.read() is None
    storage.write(report)

    assert storage.read() == report
    assert repr(storage).startswith('<JSONStorage path=')
    storage.close()


def test_json_sorted_output(tmp_path):
    path = tmp_path / 'summary.json'
    with JSONStorage(path) as storage:
        storage.write({'recall': 0.5, 'num_gt': 4})

    assert path.read_text() == '{\n  "num_gt": 4,\n  "recall": 0.5\n}'


def test_json_shorter_document_truncates(tmp_path):
    with JSONStorage(tmp_path / 'ensemble.json') as storage:
        storage.write({'trees': [{'value': 0.001}] * 20})
        storage.write({'trees': []})
        assert storage.read() == {'trees': []}


def test_json_read_only(tmp_path):
    path = tmp_path / 'scene.json'
    with pytest.raises(FileNotFoundError):
        JSONStorage(path, access_mode='r')

    with JSONStorage(path) as storage:
        storage.write({'scene_id': 'a'})

    with JSONStorage(path, access_mode='r') as storage:
        assert storage.read() == {'scene_id': 'a'}
        with pytest.raises(IOError):
            storage.write({'scene_id': 'b'})


def test_json_invalid_contents(tmp_path):
    path = tmp_path / 'scene.json'
    path.write_text('{"scene_id": ')
    with JSONStorage(path, access_mode='r') as storage:
        with pytest.raises(DataError):
            storage.read()


def test_create_dirs(tmp_path):
    path = tmp_path / 'results' / 'learned' / 'summary.json'
    with pytest.raises(IOError):
        JSONStorage(path)

    JSONStorage(path, create_dirs=True).close()
    assert path.exists()

    # Existing directories are fine
    JSONStorage(path, create_dirs=True).close()


def test_touch_keeps_contents(tmp_path):
    path = tmp_path / 'depth.pgm.json'
    path.write_text('{"scale": 0.0001}')
    touch(path, create_dirs=False)
    assert path.read_text() == '{"scale": 0.0001}'


def test_transaction_commit(tmp_path):
    path = tmp_path / 'estimate.json'
    with JSONStorage(path) as storage:
        with storage.transaction():
            storage.write(report)
        assert storage.read() == report

    assert not os.path.exists(f'{path}.backup')
    assert not os.path.exists(f'{path}.lock')


def test_transaction_rollback(tmp_path):
    path = tmp_path / 'estimate.json'
    with JSONStorage(path) as storage:
        storage.write({'value': 1.0})

        with pytest.raises(RuntimeError):
            with storage.transaction():
                storage.write({'value': 2.0})
                raise RuntimeError('solver crashed')

        assert storage.read() == {'value': 1.0}

    assert not os.path.exists(f'{path}.backup')


def test_transaction_nesting(storage):
    storage.begin()
    with pytest.raises(RuntimeError):
        storage.begin()
    storage.commit()

    with pytest.raises(RuntimeError):
        storage.commit()
    with pytest.raises(RuntimeError):
        storage.rollback()


def test_storage_is_abstract():
    class Incomplete(Storage):
        def read(self):
            return None

    with pytest.raises(TypeError):
        Incomplete()


def test_write_read_json(tmp_path):
    path = tmp_path / 'nested' / 'estimate.json'
    write_json(path, report)
    assert read_json(path) == report

    with open(path) as handle:
        assert json.load(handle) == report


def test_read_json_missing(tmp_path):
    with pytest.raises(DataError):
        read_json(tmp_path / 'missing.json')


def test_read_json_empty(tmp_path):
    path = tmp_path / 'empty.json'
    path.write_text('')
    with pytest.raises(DataError):
        read_json(path)


def test_atomic_directory(tmp_path):
    target = tmp_path / 'scene000000'
    with atomic_directory(target) as staging:
        (staging / 'depth.pgm').write_bytes(b'P5')
        assert not target.exists()

    assert (target / 'depth.pgm').read_bytes() == b'P5'
    assert [p.name for p in tmp_path.iterdir()] == ['scene000000']


def test_atomic_directory_failure_keeps_old(tmp_path):
    target = tmp_path / 'scene000000'
    target.mkdir()
    (target / 'scene.json').write_text('old')

    with pytest.raises(KeyError):
        with atomic_directory(target) as staging:
            (staging / 'scene.json').write_text('new')
            raise KeyError('boom')

    assert (target / 'scene.json').read_text() == 'old'
    assert [p.name for p in tmp_path.iterdir()] == ['scene000000']


def test_atomic_directory_replaces(tmp_path):
    target = tmp_path / 'scene000000'
    target.mkdir()
    (target / 'stale.txt').write_text('stale')

    with atomic_directory(target) as staging:
        (staging / 'scene.json').write_text('{}')

    assert sorted(p.name for p in target.iterdir()) == ['scene.json']
