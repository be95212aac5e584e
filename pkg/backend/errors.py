# errors.py
"""
项目统一异常类型

库代码只负责抛出，退出码的映射在 app.py 中完成。
"""


class ShapeError(ValueError):
    """张量形状不匹配"""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        shown = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: 形状不匹配 {shown}")


class DegenerateVectorError(ValueError):
    """零范数向量（退化的潜变量）"""


class ConfigError(ValueError):
    """配置文件不合法，key_path 为出错的键路径（如 train.variant）"""

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"配置错误 [{key_path}]: {message}")


class SamplingError(ValueError):
    """视频长度不足以完成采样"""

    def __init__(self, message: str, required: int):
        self.required = required
        super().__init__(f"{message}（至少需要 {required} 帧）")


class TrajectoryError(ValueError):
    """下落轨迹离开画面"""

    def __init__(self, t: int, position):
        self.t = t
        self.position = tuple(float(p) for p in position)
        super().__init__(f"轨迹在 t={t} 离开画面，位置 {self.position}")


class TrainingDivergedError(RuntimeError):
    """损失出现 NaN，附带步数与各分量"""

    def __init__(self, step: int, components: dict):
        self.step = step
        self.components = dict(components)
        detail = ", ".join(f"{k}={v}" for k, v in self.components.items())
        super().__init__(f"第 {step} 步损失为 NaN: {detail}")
