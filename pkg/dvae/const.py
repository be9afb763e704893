import math

MAGIC = b"DVAE"
FORMAT_VERSION = 1
CHECKPOINT_SUFFIX = ".dvae"
BIT_COMPRESSED = 1 << 0

# record kinds in a checkpoint file
REC_CONFIG = "config"
REC_STEP = "step"
REC_PARAM = "param/"
REC_CODEBOOK = "codebook/"
REC_ADAM = "adam/"
REC_PRIOR = "prior/"
REC_PRIOR_ADAM = "prior_adam/"

# dtypes on disk
DTYPE_F32 = 0
DTYPE_I64 = 1

VARIANT_DUAL = "dualvae"
VARIANT_REDUAL = "redualvae"

LEAKY_SLOPE = 0.2
LN_EPS = 1e-5
MASK_VALUE = -1e9
ARGMAX_TEMPERATURE = 1e-4

# vq defaults
COMMITMENT_BETA = 0.25
EMA_DECAY = 0.99
LAPLACE_EPS = 1e-5
EMPTY_CLUSTER = 1e-12

# histogram feature
HIST_BINS = 32
HIST_RANGE = (-3.0, 3.0)
HIST_LOG_EPS = 1e-4
HIST_FLOOR = 1e-6

SPLIT_TEST_FRACTION = 0.05
THREADS_ENV = "DUALVAE_THREADS"

LOSS_COLUMNS = ("step", "recon_F", "recon_z", "vq", "kl", "total")
PRIOR_COLUMNS = ("step", "nll")
REPORT_COLUMNS = ("model", "arm", "mean_kl", "stderr", "n")
USAGE_COLUMNS = ("code", "count")
CHECK_COLUMNS = ("check", "passed", "statistic", "detail")

LOG2PI = math.log(2.0 * math.pi)

# full-scale histogram kl reference values (anime faces, 64x64), logged beside bench results
REFERENCE_KL_WITH_REG = 0.6834
REFERENCE_KL_WITHOUT_REG = 0.9408
REFERENCE_KL_PAIRWISE = 0.9799
