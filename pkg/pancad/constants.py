import math

# Units: all geometry is in millimeters, angles in radians.
LENGTH_UNIT = "mm"
LOG_BASE = "e"

BACKGROUND = -1
BACKGROUND_NAME = "background"

TWO_PI = 2.0 * math.pi

# Entity graph
DEFAULT_EPSILON_MM = 100.0
DEFAULT_ETA = 0.2
DEFAULT_K_MAX = 3
PARALLEL_ANGLE_TOL = 0.01
CIRCLE_ANCHOR_SAMPLES = 32

# Rasterization
LINE_WIDTH_PX = 5
MAX_CANVAS_PIXELS = 100_000_000
VOTE_SAMPLES = 32
BBOX_SAMPLES = 64
MAX_STROKE_PIECE_PX = 256.0
DISTANCE_CLIP_PX = 16.0
LINE_KERNEL_SIZE = 25
PYRAMID_LEVELS = 4
PYRAMID_CHANNELS = 8
FEATURE_SCALE_PPM = 0.05
FEATURE_LINE_WIDTH_PX = 2

# Panoptic fusion
MEMBERSHIP_FRACTION = 0.5
MEMBERSHIP_SAMPLES = 32

# Evaluation
MATCH_IOU = 0.5
AP_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
AP_RECALL_POINTS = 101
HISTOGRAM_MIN_MM = 1.0
HISTOGRAM_MAX_MM = 100_000.0
HISTOGRAM_BINS = 20

# Synthetic blocks are 20m x 20m
BLOCK_SIZE_MM = 20_000.0
WALL_THICKNESS_MM = 240.0

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

STUFF_CLASSES = ("wall", "parking")

THING_CLASSES = (
    "single door",
    "double door",
    "sliding door",
    "window",
    "bay window",
    "blind window",
    "opening symbol",
    "stairs",
    "gas stove",
    "refrigerator",
    "washing machine",
    "sofa",
    "bed",
    "chair",
    "table",
    "bedside cupboard",
    "TV cabinet",
    "half-height cabinet",
    "high cabinet",
    "wardrobe",
    "sink",
    "bath",
    "bath tub",
    "squat toilet",
    "urinal",
    "toilet",
    "elevator",
    "escalator",
)

CLASS_CATEGORIES = {
    "single door": "door",
    "double door": "door",
    "sliding door": "door",
    "window": "window",
    "bay window": "window",
    "blind window": "window",
    "opening symbol": "window",
    "stairs": "stair",
    "elevator": "stair",
    "escalator": "stair",
    "gas stove": "appliance",
    "refrigerator": "appliance",
    "washing machine": "appliance",
    "sofa": "furniture",
    "bed": "furniture",
    "chair": "furniture",
    "table": "furniture",
    "bedside cupboard": "furniture",
    "TV cabinet": "furniture",
    "half-height cabinet": "furniture",
    "high cabinet": "furniture",
    "wardrobe": "furniture",
    "sink": "equipment",
    "bath": "equipment",
    "bath tub": "equipment",
    "squat toilet": "equipment",
    "urinal": "equipment",
    "toilet": "equipment",
    "door": "door",
    "wall": "wall",
    "parking": "parking lot",
}

SYNTH_THING_CLASSES = ("door", "window", "table")
