import logging

import platformdirs

APP_NAME = "tadquality"

DEFAULT_CONFIG_PATH = platformdirs.user_config_path(APP_NAME) / "config.toml"
MANIFEST_SUFFIX = ".manifest.json"

# Anchor scale set {r_min, r_max, I} and the duration-to-scale divisor
DEFAULT_ANCHOR_SET = (1.0, 50.0, 20)
ACTIVITYNET_ANCHOR_SET = (1.0, 130.0, 22)
DEFAULT_TAU = 2.0
DEFAULT_BEM_SAMPLES = 16
DEFAULT_FINEST_STRIDE = 2

DEFAULT_NMS_THRESHOLD = 0.5
DEFAULT_NMS_SIGMA = 0.5
DEFAULT_SCORE_FLOOR = 1e-4

EPSILON = 1e-7
DEFAULT_FOCAL_ALPHA = 0.25
DEFAULT_FOCAL_GAMMA = 2.0
DEFAULT_LOSS_ETA = 5.0
DEFAULT_LOSS_LAMBDA = 1.0
DEFAULT_LOSS_GAMMA = 0.5

DEFAULT_TIOU_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
ACTIVITYNET_TIOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

DEFAULT_PYRAMID_STRIDES = (1, 2, 4, 8, 16)
DEFAULT_REGRESSION_RANGES = (
    (0.0, 4.0),
    (4.0, 8.0),
    (8.0, 16.0),
    (16.0, 32.0),
    (32.0, float("inf")),
)

FINITE_DIFFERENCE_STEP = 1e-5
GRADIENT_TOLERANCE = 1e-4
DEFAULT_GRADCHECK_POINTS = 100

DEFAULT_SEED = 0
DEFAULT_FPS = 10.0
MAX_PACKING_RETRIES = 100

DEFAULT_LOG_LEVEL = logging.WARNING
