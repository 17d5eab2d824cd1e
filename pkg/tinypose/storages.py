"""
Contains the :class:`base class <tinypose.storages.Storage>` for document
storages and its implementations.

Every JSON document TinyPose produces (``scene.json``, raster headers,
hypothesis sets, ensembles, selection reports and evaluation summaries) goes
through a storage. Directory-shaped outputs (one directory per scene) are
written with :func:`atomic_directory`.
"""

import fcntl
import io
import json
import os
import shutil
import tempfile
from abc import ABC, abstractmethod
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

from .errors import DataError

__all__ = ('Storage', 'JSONStorage', 'touch',
           'atomic_directory', 'read_json', 'write_json')

PathLike = Union[str, 'os.PathLike[str]']


def touch(path: PathLike, create_dirs: bool):
    """
    Create a file if it doesn't exist yet.

    :param path: The file to create.
    :param create_dirs: Whether to create all missing parent directories.
    """
    if create_dirs:
        base_dir = os.path.dirname(os.fspath(path))
        if base_dir and not os.path.exists(base_dir):
            os.makedirs(base_dir)

    # Mode 'a' creates the file without touching existing contents
    with open(path, 'a'):
        pass


class Storage(ABC):
    """
    The abstract base class for all storages with transaction support.

    A storage (de)serializes one JSON-compatible document and keeps it in
    some place (a file on disk, ...).
    """

    def __init__(self):
        self._in_transaction = False

    @abstractmethod
    def read(self) -> Optional[Dict[str, Any]]:
        """
        Read the stored document, ``None`` if nothing was written yet.
        """
        raise NotImplementedError('To be overridden!')

    @abstractmethod
    def write(self, data: Dict[str, Any]) -> None:
        """
        Replace the stored document.
        """
        raise NotImplementedError('To be overridden!')

    def close(self) -> None:
        """
        Optional: Close open file handles, etc.
        """
        pass

    @abstractmethod
    def _begin_transaction(self) -> None:
        raise NotImplementedError('To be overridden!')

    @abstractmethod
    def _commit_transaction(self) -> None:
        raise NotImplementedError('To be overridden!')

    @abstractmethod
    def _rollback_transaction(self) -> None:
        raise NotImplementedError('To be overridden!')

    def begin(self) -> None:
        if self._in_transaction:
            raise RuntimeError('Transaction already in progress')
        self._in_transaction = True
        self._begin_transaction()

    def commit(self) -> None:
        if not self._in_transaction:
            raise RuntimeError('No transaction in progress')
        try:
            self._commit_transaction()
        finally:
            self._in_transaction = False

    def rollback(self) -> None:
        if not self._in_transaction:
            raise RuntimeError('No transaction in progress')
        try:
            self._rollback_transaction()
        finally:
            self._in_transaction = False

    @contextmanager
    def transaction(self):
        """
        Write inside a transaction: either every write of the block lands
        or the previous document is restored.
        """
        self.begin()
        try:
            yield self
            self.commit()
        except BaseException:
            self.rollback()
            raise

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class JSONStorage(Storage):
    """
    Store a document in a JSON file.

    Output is deterministic: keys are sorted and the indentation is fixed
    unless other ``json.dumps`` keyword arguments are passed.

    :param path: The file to use
    :param create_dirs: Create missing parent directories
    :param encoding: File encoding, UTF-8 by default
    :param access_mode: ``'r+'`` to read and write, ``'r'`` for read-only
    """

    #: Keyword arguments handed to ``json.dumps`` by default
    default_dump_kwargs: Dict[str, Any] = {'sort_keys': True, 'indent': 2}

    def __init__(self, path: PathLike, create_dirs=False, encoding=None,
                 access_mode='r+', **kwargs):
        super().__init__()
        self._mode = access_mode
        self.path = os.fspath(path)
        self.encoding = encoding or 'utf-8'
        self.kwargs = dict(self.default_dump_kwargs, **kwargs)
        self._lock_file: Optional[io.TextIOWrapper] = None
        self._backup_path = f'{self.path}.backup'

        if any(character in self._mode for character in ('+', 'w', 'a')):
            touch(self.path, create_dirs=create_dirs)

        self._handle = open(self.path, mode=self._mode,
                            encoding=self.encoding)

    def __repr__(self):
        return '<{} path={!r} mode={!r}>'.format(
            type(self).__name__, self.path, self._mode)

    def _acquire_lock(self):
        if not self._lock_file:
            self._lock_file = open(f'{self.path}.lock', 'w')
        fcntl.flock(self._lock_file.fileno(), fcntl.LOCK_EX)

    def _release_lock(self):
        if self._lock_file:
            fcntl.flock(self._lock_file.fileno(), fcntl.LOCK_UN)
            self._lock_file.close()
            self._lock_file = None
            lock_path = f'{self.path}.lock'
            if os.path.exists(lock_path):
                os.remove(lock_path)

    def _begin_transaction(self) -> None:
        self._acquire_lock()
        shutil.copyfile(self.path, self._backup_path)

    def _commit_transaction(self) -> None:
        self._handle.flush()
        os.fsync(self._handle.fileno())
        if os.path.exists(self._backup_path):
            os.remove(self._backup_path)
        self._release_lock()

    def _rollback_transaction(self) -> None:
        try:
            self._handle.close()
            shutil.copyfile(self._backup_path, self.path)
            self._handle = open(self.path, mode=self._mode,
                                encoding=self.encoding)
        finally:
            if os.path.exists(self._backup_path):
                os.remove(self._backup_path)
            self._release_lock()

    def close(self) -> None:
        self._handle.close()

    def read(self) -> Optional[Dict[str, Any]]:
        self._handle.seek(0, os.SEEK_END)
        size = self._handle.tell()

        if not size:
            return None

        self._handle.seek(0)
        try:
            return json.load(self._handle)
        except json.JSONDecodeError as exc:
            raise DataError(f'{self.path} is not valid JSON: {exc}') from exc

    def write(self, data: Dict[str, Any]) -> None:
        self._handle.seek(0)

        serialized = json.dumps(data, **self.kwargs)

        try:
            self._handle.write(serialized)
        except io.UnsupportedOperation:
            raise IOError(f'Cannot write to {self.path}. '
                          f'Access mode is "{self._mode}"')

        self._handle.flush()
        os.fsync(self._handle.fileno())

        # Drop leftovers of a longer previous document
        self._handle.truncate()


def write_json(path: PathLike, data: Dict[str, Any],
               create_dirs: bool = True) -> None:
    """
    Write one JSON document through a transaction of a :class:`JSONStorage`.
    """
    with JSONStorage(path, create_dirs=create_dirs) as storage:
        with storage.transaction():
            storage.write(data)


def read_json(path: PathLike) -> Dict[str, Any]:
    """
    Read one JSON document written by :func:`write_json`.
    """
    if not os.path.exists(path):
        raise DataError(f'{os.fspath(path)} does not exist')

    with JSONStorage(path, access_mode='r') as storage:
        data = storage.read()

    if data is None:
        raise DataError(f'{os.fspath(path)} is empty')
    return data


@contextmanager
def atomic_directory(path: PathLike) -> Iterator[Path]:
    """
    Build a directory next to ``path`` and move it into place on success.

    If the block raises, the partially written directory is removed and an
    existing directory at ``path`` is left untouched.

    :param path: Final location of the directory
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f'.{target.name}.',
                                    dir=target.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    if target.exists():
        shutil.rmtree(target)
    os.replace(staging, target)
