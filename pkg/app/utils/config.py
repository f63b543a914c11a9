import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Working directories
WORKDIR = os.getenv("EVSV_WORKDIR", os.path.join(os.getcwd(), "evsv_work"))
CACHE_DIR = os.getenv("EVSV_CACHE_DIR", os.path.join(WORKDIR, "cache"))

# Logging
LOG_LEVEL = os.getenv("EVSV_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("EVSV_LOG_FILE")

# Audio analysis constants
SAMPLE_RATE = 16000
FRAME_MS = 25.0
HOP_MS = 10.0
F0_HOP_MS = 5.0
N_FFT = 512
N_MELS = 40
MEL_FMIN_HZ = 0.0
MEL_FMAX_HZ = 8000.0
N_MCEP = 24
N_CWT_SCALES = 10
LOG_FLOOR = 1e-10
F0_MIN_HZ = 50.0
F0_MAX_HZ = 600.0
VOICING_THRESHOLD = 0.3
# Smallest-lag peak must reach this fraction of the best correlation peak
PEAK_FRACTION = 0.85
SYNTH_PEAK = 0.9

EMOTIONS = ["neutral", "calm", "angry", "happy", "sad"]
EMOTIONAL = ["happy", "angry", "sad", "calm"]

# Training-set utterance counts per emotion in the reference corpus; used as the default mix
DEFAULT_EMOTION_MIX = {
    "neutral": 118948,
    "calm": 3487,
    "angry": 751,
    "happy": 1344,
    "sad": 7598,
}

# Toy emotion transforms: activation shows up in F0 level/range, energy, rate and formants
DEFAULT_EMOTION_TRANSFORMS = {
    "neutral": {"f0_shift_factor": 1.0, "f0_range_scale": 1.0, "energy_scale": 1.0, "rate_scale": 1.0, "formant_shift": 1.0},
    "angry": {"f0_shift_factor": 1.35, "f0_range_scale": 1.6, "energy_scale": 1.6, "rate_scale": 1.15, "formant_shift": 1.08},
    "happy": {"f0_shift_factor": 1.25, "f0_range_scale": 1.4, "energy_scale": 1.3, "rate_scale": 1.1, "formant_shift": 1.05},
    "sad": {"f0_shift_factor": 0.88, "f0_range_scale": 0.6, "energy_scale": 0.6, "rate_scale": 0.85, "formant_shift": 0.97},
    "calm": {"f0_shift_factor": 0.94, "f0_range_scale": 0.8, "energy_scale": 0.8, "rate_scale": 0.9, "formant_shift": 1.0},
}

# Default optimizer settings for desk-scale runs
DEFAULT_OPTIMIZER = {
    "base_lr": 1e-3,
    "decay_rate": 0.98,
    "decay_every": 10000,
}

# Optimizer and batch settings reported for the production model
LARGE_CORPUS_SCHEDULE = {
    "base_lr": 1e-6,
    "decay_rate": 0.98,
    "decay_every": 10000,
    "speakers_per_batch": 32,
    "utterances_per_speaker": 5,
}

# Default weights for the converter objective
DEFAULT_LOSS_WEIGHTS = {
    "lambda_cy": 10.0,
    "lambda_id": 5.0,
    "id_cutoff_iters": 10000,
}
