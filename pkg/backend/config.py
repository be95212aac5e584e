# config.py

# ============== 合成视频（桌面规模） ==============
# 画布大小 (H, W)
CANVAS_SIZE = (64, 64)
# 关节点：头、骨盆、左右手、左右脚（骨盆为根节点）
JOINT_NAMES = ["head", "pelvis", "left_hand", "right_hand", "left_foot", "right_foot"]
PELVIS_INDEX = 1
# 肢体长度（像素）
LIMB_LENGTHS = {
    "torso": 10.0,
    "head": 4.0,
    "upper_arm": 6.0,
    "lower_arm": 6.0,
    "thigh": 7.0,
    "shin": 7.0,
}
# 胶囊半径（像素），头部单独给半径
LIMB_RADIUS = 1.6
HEAD_RADIUS = 3.0
# 关节角均值回复随机游走：回复速率、噪声尺度、单步最大变化（弧度）
POSE_MEAN_REVERSION = 0.05
POSE_NOISE_SCALE = 0.08
POSE_MAX_STEP = 0.12

# 数据集：8 个训练片段 + 2 个验证 + 2 个测试，每段 300 帧
TRAIN_CLIPS = 8
VAL_CLIPS = 2
TEST_CLIPS = 2
CLIP_LENGTH = 300

# ============== 注意力 STN ==============
BOX_SCALE_MIN = 0.05
DETECTOR_DOWNSAMPLE = 4
DETECTOR_CHANNELS = [8, 16, 16, 32]
# 批均值先验：框大小约为画面的 50%，位置居中
BOX_PRIOR_SCALE = 0.5
BOX_PRIOR_CENTER = 0.0
BOX_PRIOR_WEIGHT = 1.0

# ============== 编解码器 ==============
CROP_SIZE = 64
N_TV = 32
N_TI = 8
TRUNK_CHANNELS = [16, 32, 32, 64]
DECODER_CHANNELS = [32, 32, 16]
DECODER_FEATURE_CHANNELS = 32
# 颜色抖动：逐通道增益、全局亮度偏移
JITTER_GAIN = (0.6, 1.4)
JITTER_OFFSET = (-0.2, 0.2)

# ============== 损失权重 ==============
LAMBDA_PIXEL = 2.0
RHO_PERCEPTUAL = 2.0
ALPHA_CONTRASTIVE = 0.05
GAMMA_TRACK = 1.0
CSS_TEMPERATURE = 0.1
TRIPLET_MARGIN = 0.2
TAU_ORDER = 20.0
PERCEPTUAL_CHANNELS = [8, 16, 32]
PERCEPTUAL_SEED = 1234

# ============== 采样 ==============
D_NEAR = 2
D_MAX = 20
GRAVITY_SPACING = 3

# ============== 训练 ==============
LEARNING_RATE = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
QUADRUPLES_PER_BATCH = 4
EPOCHS = 10
STEPS_PER_EPOCH = 100
EVAL_EVERY = 50
EARLY_STOP_PATIENCE = 10
GRAVITY_STAGE1_STEPS = 500

# ============== 姿态探针 ==============
PROBE_HIDDEN = 128
PROBE_DROPOUT = 0.5
PROBE_EPOCHS = 60
PROBE_BATCH = 64
PROBE_LEARNING_RATE = 1e-3
LABELED_FRACTIONS = [0.01, 0.1, 1.0]

# ============== 实验 ==============
SEED = 0
OUTPUT_DIR = "./runs"
DATASET_DIR = "./data/synthetic"

# 全尺寸：潜变量 600/129，裁剪 128，探针隐层 2048
PAPER_SCALE = {
    "n_tv": 600,
    "n_ti": 129,
    "crop_size": 128,
    "probe_hidden": 2048,
}
# 各数据集的正/负样本采样距离与系数
PAPER_DATASET_PRESETS = {
    "h36m": {"d_near": 10, "d_max": 200, "alpha": 0.05, "lambda_pixel": 2.0},
    "mpi": {"d_near": 10, "d_max": 450, "alpha": 0.01, "lambda_pixel": 2.0},
    "diving": {"d_near": 3, "d_max": 20, "alpha": 0.01, "lambda_pixel": 2.0},
    "ski": {"d_near": 5, "d_max": 40, "alpha": 0.01, "lambda_pixel": 0.05},
}
