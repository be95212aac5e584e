# diffcore/rng.py

from typing import Tuple, Union

import numpy as np

StreamId = Union[int, Tuple[int, ...]]


class Rng:
    """
    可拆分的随机数流：(seed, stream_id) 唯一决定抽样序列

    stream_id 可以是整数或整数元组，元组用于派生子流（例如 (片段编号, 步数)），
    这样每个视频、每个训练步的随机数都与遍历顺序无关。
    """

    def __init__(self, seed: int, stream_id: StreamId = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        ids = stream_id if isinstance(stream_id, tuple) else (stream_id,)
        self.stream_id = tuple(int(s) & 0xFFFFFFFFFFFFFFFF for s in ids)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream_id)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def substream(self, *ids: int) -> "Rng":
        return Rng(self.seed, self.stream_id + tuple(ids))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        """半开区间 [low, high)"""
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream_id={self.stream_id})"
