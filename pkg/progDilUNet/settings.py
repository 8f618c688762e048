# -*- coding: utf-8 -*-
"""Settings.py."""

# default arguments
MODEL_DFT = "unet_progressive"
BASE_WIDTH_DFT = 32
CLASSES_DFT = 4
INPUT_SIZE_DFT = 128
DEPTH_DFT = 4
NETSPEC_DFT = None  # network spec file: name, base_width, classes, input_size, depth

EPOCHS_DFT = 40
BATCH_SIZE_DFT = 4  # four images per mini-batch
LR_DFT = 1e-4
SEED_DFT = 0
CHECKPOINT_DIR_DFT = "./checkpoints"
DATASET_DFT = "./phantoms"
LOGLEVEL_DFT = "WARNING"
WORKERS_DFT = 1
PREFETCH_DFT = 2  # batches waiting in the feeder queue

# Adam and plateau schedule
BETA1_DFT = 0.9
BETA2_DFT = 0.99
ADAM_EPS_DFT = 1e-8
PATIENCE_DFT = 20
LR_FACTOR_DFT = 0.5

# layers
BN_EPS_DFT = 1e-5
BN_MOMENTUM_DFT = 0.1
PRELU_SLOPE_DFT = 0.25

# data
SPACING_DFT = (0.5, 0.5)  # mm per pixel
SPLIT_RATIOS_DFT = (40, 5, 15)
SPLIT_NAMES = ("train", "val", "test")
EVAL_CLASSES_DFT = (1, 2, 3)

# phantom generator, lengths are fractions of the image size unless noted
PHANTOM_SIZE_DFT = 128
LUMEN_AXIS_RANGE_DFT = (0.14, 0.24)
CENTER_JITTER_DFT = 0.05
WALL_THICKNESS_RANGE_DFT = (3.0, 6.0)  # px
APEX_GAIN_DFT = 0.6  # extra relative thickness at the ends of the long axis
TUMOR_COUNT_RANGE_DFT = (0, 2)
TUMOR_RADIUS_RANGE_DFT = (3.0, 8.0)  # px
TUMOR_ATTACHED_DFT = True
INTENSITY_DFT = {"background": 0.45, "lumen": 0.85, "wall": 0.15, "tumor": 0.4}
BIAS_AMPLITUDE_DFT = 0.3
NOISE_SIGMA_DFT = 0.04
BOUNDARY_BLUR_DFT = 0.8  # gaussian sigma (px) softening the wall edges

# rf analyzer
RF_ACCOUNTING_DFT = "encoder"
REPORTED_RF = 267
RF_TOLERANCE = 0.25

# report formatting
FLOAT_FMT = "{:.4f}"
TRAIN_LOG_NAME = "train_log.tsv"
BEST_CKPT_NAME = "best.dlck"
LAST_CKPT_NAME = "last.dlck"
