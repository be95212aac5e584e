# losses/perceptual.py

from typing import List, Sequence

from diffcore.layers import Conv2d, Module
from diffcore.rng import Rng
from diffcore.tensor import Tensor, relu


class PerceptualPyramid(Module):
    """
    固定的随机卷积金字塔：3 级 stride-2 卷积 + relu
    权重由种子决定且冻结，梯度只经过激活传回输入图像
    """

    def __init__(self, channels: Sequence[int], seed: int):
        rng = Rng(seed, 0)
        self.stages = []
        in_ch = 3
        for i, ch in enumerate(channels):
            self.stages.append(Conv2d(in_ch, ch, 3, rng.substream(i), stride=2, padding=1))
            in_ch = ch
        self.freeze()

    def __call__(self, images: Tensor) -> List[Tensor]:
        feats = []
        x = images
        for stage in self.stages:
            x = relu(stage(x))
            feats.append(x)
        return feats
