"""
Constants of the desk-scale prompt detector.
All quantities are returned in a fresh dictionary so that callers may edit them.
"""

LOG_FORMAT = "%(levelname)s:%(name)s:%(funcName)s\n> %(message)s"
# > the sidecar run log is the only place with timestamps
RUNLOG_FORMAT = "%(levelname)s:%(asctime)s:%(name)s:%(funcName)s\n> %(message)s"

# > shape kinds known to the scene rasteriser
SHAPES = ("square", "disk", "triangle", "cross", "ring")

# > magic and version of the parameter-store binary format
PDPS_MAGIC = b"PDPS"
PDPS_VERSION = 1

# > versions of the JSON artefacts
CACHE_VERSION = 1
DATASET_VERSION = 1


def get_mpod_constants():
    '''
    Get the dictionary of constants for the model, losses, optimiser and evaluation.
    '''
    Cnt = {
        # ---------- model ----------
        'D': 64,                       # model width
        'NHEAD': 4,                    # attention heads everywhere
        'NLVL': 3,                     # feature levels (strides 4, 8, 16)
        'NQ': 20,                      # number of decoder queries
        'NENC': 2,                     # encoder layers
        'NDEC': 2,                     # decoder layers
        'FFN_MULT': 4,                 # FFN hidden = FFN_MULT * D
        'IMSZ': 64,                    # square input image side
        'REF_EXT': (0.15, 0.3, 0.5),   # query reference extent per level
        'LN_EPS': 1e-5,
        # ---------- prompts ----------
        'VOCAB': 1024,                 # hashed token vocabulary
        'NPTS': 4,                     # deformable points per level and head
        'TXT_REDUCE': 'max',           # textual similarity reduction: max | mean
        'NVIS_MAX': 32,                # upper bound of randomly drawn prompt counts
        # ---------- classification / losses ----------
        'TAU': 0.1,
        'BG_COEF': 0.1,
        'LMBD_CLS': 2.0,
        'LMBD_L1': 5.0,
        'LMBD_GIOU': 2.0,
        # ---------- optimiser ----------
        'LR': 1e-3,
        'BETAS': (0.9, 0.999),
        'ADAM_EPS': 1e-8,
        'BATCH': 4,
        'CLIP': 1.0,
        # ---------- inference / evaluation ----------
        'CONF_THR': 0.3,
        'IOU_THRS': tuple(round(0.5 + 0.05*i, 2) for i in range(10)),
        # ---------- misc ----------
        'SEED': 20240611,
    }  # yapf: disable
    return Cnt
