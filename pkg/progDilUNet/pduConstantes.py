# -*- coding: utf-8 -*-
"""Constantes for the segmentation engine"""

# label codes
BACKGROUND, LUMEN, WALL, TUMOR = 0, 1, 2, 3
CLASS_NAMES = {BACKGROUND: "background", LUMEN: "lumen", WALL: "wall", TUMOR: "tumor"}
N_CLASSES = 4
FOREGROUND = (LUMEN, WALL, TUMOR)

# tensor container
TENSOR_MAGIC = b"DLS1"
CODE_F32 = 0x01
CODE_U8 = 0x02
CODE_F64 = 0x03
CODE_DTYPES = {CODE_F32: "<f4", CODE_U8: "u1", CODE_F64: "<f8"}

# checkpoint
CKPT_MAGIC = b"DLCK"
CKPT_VERSION = 1
CKPT_SUFFIX = ".dlck"

# dataset layout
IMG_SUFFIX = "_img.dls"
LBL_SUFFIX = "_lbl.dls"
PROB_SUFFIX = "_prob{cls}.dls"
MANIFEST_NAME = "manifest.txt"
MANIFEST_COLS = ["id", "seed", "split"]

MODEL_NAMES = ("unet_original", "unet_baseline", "unet_dilated", "unet_progressive")

# dilation schedules
PROGRESSIVE_DILATIONS = (1, 2, 4)
HEAD_DILATIONS = (1, 2, 4, 8)  # from shallow to deep encoder blocks

# exit codes
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
