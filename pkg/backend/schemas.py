# schemas.py
"""
实验配置的数据模型（pydantic）

一个 JSON 文档对应一个 ExperimentConfig，未知键一律拒绝。
默认值全部来自 config.py。
"""

import json
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

import config
from errors import ConfigError

Variant = Literal["AE-STN", "CSS-STN", "DSL-STN", "no-decode", "no-split", "no-stn"]
Contrastive = Literal["none", "css", "dsl", "triplet"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============== 合成数据 ==============

class PuppetConfig(_Strict):
    """木偶渲染与姿态过程"""
    canvas: Tuple[int, int] = Field(config.CANVAS_SIZE, description="画布 (H, W)，像素")
    joint_count: int = Field(len(config.JOINT_NAMES), description="关节数 K（至少包含头与骨盆）")
    limb_lengths: Dict[str, float] = Field(default_factory=lambda: dict(config.LIMB_LENGTHS), description="肢体长度（像素）")
    limb_radius: float = Field(config.LIMB_RADIUS, gt=0, description="肢体胶囊半径")
    head_radius: float = Field(config.HEAD_RADIUS, gt=0, description="头部半径")
    appearance: Optional[List[Tuple[float, float, float]]] = Field(
        None, description="各部位 RGB（头、躯干、手臂、腿），为空时每个片段随机生成")
    mean_reversion: float = Field(config.POSE_MEAN_REVERSION, ge=0, le=1, description="关节角均值回复速率")
    noise_scale: float = Field(config.POSE_NOISE_SCALE, ge=0, description="关节角噪声尺度（弧度）")
    max_step: float = Field(config.POSE_MAX_STEP, gt=0, description="关节角单步最大变化（弧度）")
    fall_mode: Literal["off", "orthographic", "perspective"] = Field("off", description="自由落体投影方式")
    camera_distance: float = Field(640.0, gt=0, description="透视模式下的相机距离（像素单位）")
    depth_velocity: float = Field(1.0, description="透视模式下每帧的深度变化（像素单位）")

    @field_validator("joint_count")
    @classmethod
    def _check_k(cls, v):
        if not 2 <= v <= len(config.JOINT_NAMES):
            raise ValueError(f"K 必须在 [2, {len(config.JOINT_NAMES)}] 内（骨盆为根节点）")
        return v

    @field_validator("limb_lengths")
    @classmethod
    def _check_limbs(cls, v):
        missing = set(config.LIMB_LENGTHS) - set(v)
        if missing:
            raise ValueError(f"缺少肢体长度: {sorted(missing)}")
        if any(length <= 0 for length in v.values()):
            raise ValueError("肢体长度必须为正")
        return v

    @field_validator("appearance")
    @classmethod
    def _check_hues(cls, v):
        if v is None:
            return v
        if len(v) != 4:
            raise ValueError("appearance 需要 4 个部位的颜色")
        for rgb in v:
            if any(c < 0.0 or c > 1.0 for c in rgb):
                raise ValueError("颜色分量必须在 [0, 1] 内")
        return v

    @property
    def joint_names(self) -> List[str]:
        return config.JOINT_NAMES[: self.joint_count]


class DatasetConfig(_Strict):
    kind: Literal["pose", "fall"] = Field("pose", description="普通姿态片段或自由落体片段")
    train_clips: int = Field(config.TRAIN_CLIPS, ge=1)
    val_clips: int = Field(config.VAL_CLIPS, ge=1)
    test_clips: int = Field(config.TEST_CLIPS, ge=1)
    clip_length: int = Field(config.CLIP_LENGTH, ge=4)
    fall_gravity: float = Field(0.04, description="自由落体 y 方向加速度（像素/帧²）")
    fall_v0_x: Tuple[float, float] = Field((-0.2, 0.2), description="初速度 x 的均匀分布区间")
    fall_v0_y: Tuple[float, float] = Field((-0.3, 0.0), description="初速度 y 的均匀分布区间（负值为向上起跳）")
    background: Literal["known", "median", "first-last"] = Field(
        "median", description="训练合成时使用的背景：真实背景或由视频估计")
    workers: int = Field(1, ge=1, description="生成片段的并行线程数")


# ============== 模型 ==============

class ModelConfig(_Strict):
    n_tv: int = Field(config.N_TV, ge=1, description="时变分量维度")
    n_ti: int = Field(config.N_TI, ge=1, description="时不变分量维度")
    crop_size: int = Field(config.CROP_SIZE, ge=8, description="裁剪分辨率（需被 8 整除）")
    trunk_channels: List[int] = Field(default_factory=lambda: list(config.TRUNK_CHANNELS))
    decoder_channels: List[int] = Field(default_factory=lambda: list(config.DECODER_CHANNELS))
    decoder_feature_channels: int = Field(config.DECODER_FEATURE_CHANNELS, ge=1)
    detector_channels: List[int] = Field(default_factory=lambda: list(config.DETECTOR_CHANNELS))
    detector_downsample: int = Field(config.DETECTOR_DOWNSAMPLE, ge=1)
    box_scale_min: float = Field(config.BOX_SCALE_MIN, gt=0, lt=1)
    perceptual_channels: List[int] = Field(default_factory=lambda: list(config.PERCEPTUAL_CHANNELS))
    perceptual_seed: int = Field(config.PERCEPTUAL_SEED)

    @field_validator("crop_size")
    @classmethod
    def _check_crop(cls, v):
        if v % 8:
            raise ValueError("crop_size 必须能被 8 整除（解码器三次 2 倍上采样）")
        return v

    @field_validator("trunk_channels", "detector_channels")
    @classmethod
    def _check_four_blocks(cls, v):
        if len(v) != 4:
            raise ValueError("需要 4 个 stride-2 卷积块的通道数")
        return v

    @field_validator("decoder_channels", "perceptual_channels")
    @classmethod
    def _check_three_stages(cls, v):
        if len(v) != 3:
            raise ValueError("需要 3 个阶段的通道数")
        return v


# ============== 损失 / 采样 ==============

class LossWeights(_Strict):
    lambda_pixel: float = Field(config.LAMBDA_PIXEL, ge=0, description="像素项权重 λ")
    rho_perceptual: float = Field(config.RHO_PERCEPTUAL, ge=0, description="感知项权重 ρ")
    alpha: float = Field(config.ALPHA_CONTRASTIVE, ge=0, description="对比损失权重 α")
    gamma: float = Field(config.GAMMA_TRACK, ge=0, description="跟踪损失权重 γ")
    temperature: float = Field(config.CSS_TEMPERATURE, gt=0, description="CSS 温度 τ")
    beta: float = Field(config.TRIPLET_MARGIN, ge=0, description="三元组间隔 β")
    tau_order: float = Field(config.TAU_ORDER, ge=0, description="顺序损失阈值（像素）")
    d_max: Optional[int] = Field(None, ge=2, description="DSL 距离阈值（帧），为空时取 sampler.d_max")
    prior_weight: float = Field(config.BOX_PRIOR_WEIGHT, ge=0, description="框先验权重")


class SamplerConfig(_Strict):
    d_near: int = Field(config.D_NEAR, ge=1, description="正样本最大帧距")
    d_max: int = Field(config.D_MAX, ge=2, description="负样本最小帧距")
    gravity_spacing: int = Field(config.GRAVITY_SPACING, ge=1, description="等距四元组的帧间隔 Δ")
    jitter_gain: Tuple[float, float] = Field(config.JITTER_GAIN)
    jitter_offset: Tuple[float, float] = Field(config.JITTER_OFFSET)

    @model_validator(mode="after")
    def _check_distances(self):
        if not self.d_near < self.d_max / 2:
            raise ValueError(f"需要 d_near < d_max/2，当前 d_near={self.d_near}, d_max={self.d_max}")
        return self


# ============== 训练 ==============

@dataclass(frozen=True)
class VariantSpec:
    decode: bool
    stn: bool
    contrastive: str
    latent_split: bool


VARIANT_PRESETS: Dict[str, VariantSpec] = {
    "AE-STN": VariantSpec(decode=True, stn=True, contrastive="none", latent_split=False),
    "CSS-STN": VariantSpec(decode=True, stn=True, contrastive="css", latent_split=True),
    "DSL-STN": VariantSpec(decode=True, stn=True, contrastive="dsl", latent_split=True),
    "no-decode": VariantSpec(decode=False, stn=True, contrastive="dsl", latent_split=False),
    "no-split": VariantSpec(decode=True, stn=True, contrastive="dsl", latent_split=False),
    "no-stn": VariantSpec(decode=False, stn=False, contrastive="dsl", latent_split=False),
}


class TrainConfig(_Strict):
    variant: Variant = Field("DSL-STN", description="消融变体")
    decode: Optional[bool] = Field(None, description="覆盖变体的解码开关")
    stn: Optional[bool] = Field(None, description="覆盖变体的 STN 开关")
    contrastive: Optional[Contrastive] = Field(None, description="覆盖变体的对比损失类型")
    latent_split: Optional[bool] = Field(None, description="覆盖变体的潜变量拆分开关")
    swap_ti: bool = Field(True, description="训练时在同一视频内交换时不变分量")
    learning_rate: float = Field(config.LEARNING_RATE, gt=0)
    quadruples_per_batch: int = Field(config.QUADRUPLES_PER_BATCH, ge=1)
    epochs: int = Field(config.EPOCHS, ge=1)
    steps_per_epoch: int = Field(config.STEPS_PER_EPOCH, ge=1)
    eval_every: int = Field(config.EVAL_EVERY, ge=1)
    patience: int = Field(config.EARLY_STOP_PATIENCE, ge=1, description="早停耐心（评估次数）")
    gravity_schedule: Literal["off", "two-stage"] = Field("off")
    gravity_stage1_steps: int = Field(config.GRAVITY_STAGE1_STEPS, ge=0)
    workers: int = Field(1, ge=1, description="消融矩阵中并行训练的线程数（各次运行互相独立，结果与串行一致）")

    @model_validator(mode="after")
    def _check_variant(self):
        resolved = self.resolved()
        if not resolved.decode and resolved.latent_split:
            raise ValueError("不解码的模型无法进行潜变量拆分（latent_split 必须为 false）")
        return self

    def resolved(self) -> VariantSpec:
        base = VARIANT_PRESETS[self.variant]
        return VariantSpec(
            decode=base.decode if self.decode is None else self.decode,
            stn=base.stn if self.stn is None else self.stn,
            contrastive=base.contrastive if self.contrastive is None else self.contrastive,
            latent_split=base.latent_split if self.latent_split is None else self.latent_split,
        )


class ProbeConfig(_Strict):
    kind: Literal["mlp", "linear"] = Field("mlp", description="两隐层 MLP 或单层线性（2D 关键点）")
    hidden: int = Field(config.PROBE_HIDDEN, ge=1)
    dropout: float = Field(config.PROBE_DROPOUT, ge=0, lt=1)
    epochs: int = Field(config.PROBE_EPOCHS, ge=1)
    batch_size: int = Field(config.PROBE_BATCH, ge=1)
    learning_rate: float = Field(config.PROBE_LEARNING_RATE, gt=0)
    fractions: List[float] = Field(default_factory=lambda: list(config.LABELED_FRACTIONS))
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])

    @field_validator("fractions")
    @classmethod
    def _check_fractions(cls, v):
        if any(f <= 0 or f > 1 for f in v):
            raise ValueError("标注比例必须在 (0, 1] 内")
        return v


class ExperimentConfig(_Strict):
    seed: int = Field(config.SEED, ge=0)
    dataset_dir: str = Field(config.DATASET_DIR)
    output_dir: str = Field(config.OUTPUT_DIR)
    paper_dataset: Literal["h36m", "mpi", "diving", "ski"] = Field("h36m", description="--paper-scale 使用的数据集预设")
    puppet: PuppetConfig = Field(default_factory=PuppetConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    losses: LossWeights = Field(default_factory=LossWeights)
    train: TrainConfig = Field(default_factory=TrainConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    ablate_variants: List[Variant] = Field(
        default_factory=lambda: ["AE-STN", "CSS-STN", "DSL-STN", "no-decode", "no-split", "no-stn"])

    @model_validator(mode="after")
    def _sync_d_max(self):
        if self.losses.d_max is None:
            self.losses.d_max = self.sampler.d_max
        elif self.losses.d_max != self.sampler.d_max:
            raise ValueError(f"losses.d_max={self.losses.d_max} 与 sampler.d_max={self.sampler.d_max} 不一致")
        return self

    def apply_paper_scale(self, dataset: Optional[str] = None) -> "ExperimentConfig":
        """切换到全尺寸的维度与所选数据集的采样距离（dataset 为空时用 paper_dataset）"""
        data = self.model_dump()
        name = dataset or self.paper_dataset
        if name not in config.PAPER_DATASET_PRESETS:
            raise ConfigError("paper_dataset", f"未知的数据集预设 {name}")
        preset = config.PAPER_DATASET_PRESETS[name]
        data["paper_dataset"] = name
        data["model"]["n_tv"] = config.PAPER_SCALE["n_tv"]
        data["model"]["n_ti"] = config.PAPER_SCALE["n_ti"]
        data["model"]["crop_size"] = config.PAPER_SCALE["crop_size"]
        data["probe"]["hidden"] = config.PAPER_SCALE["probe_hidden"]
        data["sampler"]["d_near"] = preset["d_near"]
        data["sampler"]["d_max"] = preset["d_max"]
        data["losses"]["d_max"] = preset["d_max"]
        data["losses"]["alpha"] = preset["alpha"]
        data["losses"]["lambda_pixel"] = preset["lambda_pixel"]
        # 片段要足够长才能采到 d_max 之外的负样本
        data["dataset"]["clip_length"] = max(data["dataset"]["clip_length"], 2 * preset["d_max"] + 1)
        return ExperimentConfig.model_validate(data)


def parse_experiment_config(text: str) -> ExperimentConfig:
    """解析 JSON 文本；出错时抛出带键路径的 ConfigError"""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<document>", f"JSON 解析失败: {e}")
    if not isinstance(raw, dict):
        raise ConfigError("<document>", "顶层必须是 JSON 对象")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        key_path = ".".join(str(p) for p in first["loc"]) or "<document>"
        raise ConfigError(key_path, first["msg"])


def load_experiment_config(path: str) -> Tuple[ExperimentConfig, str]:
    """读取配置文件，返回 (配置, 原始文本)；原始文本用于在输出目录中逐字回显"""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_experiment_config(text), text
