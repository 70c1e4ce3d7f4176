"""Release-point instrumentation for sensitive data.

Trainers read sensitive records only inside ``with release_point(name):``
blocks, each of which corresponds to a ledger event. Wrapping a Dataset in
:class:`GuardedDataset` turns any read outside such a block into an error and
counts reads per release point; ordinary Datasets are unaffected.
"""
import contextlib
from collections import Counter

_active = []


@contextlib.contextmanager
def release_point(name):
    _active.append(name)
    try:
        yield
    finally:
        _active.pop()


class UnguardedAccess(RuntimeError):
    pass


class GuardedDataset:
    """Dataset proxy. Size, shape and class count are public metadata; records are not."""

    _public = {"K", "shape", "dim", "split", "__len__"}

    def __init__(self, ds):
        object.__setattr__(self, "_ds", ds)
        object.__setattr__(self, "reads", Counter())

    def __len__(self):
        return len(self._ds)

    def __getattr__(self, name):
        if name in self._public:
            return getattr(self._ds, name)
        if not _active:
            raise UnguardedAccess(f"sensitive attribute {name!r} read outside a release point")
        self.reads[_active[-1]] += 1
        return getattr(self._ds, name)
