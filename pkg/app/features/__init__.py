from app.features.types import Waveform, MelSpectrogram, McepSequence, F0Contour, LogF0Cwt
from app.features.audio_io import read_wav, write_wav, resample_linear
from app.features.spectral import frame_signal, mel_filterbank, mel_spectrogram, mcep_analyze, synthesize
from app.features.prosody import estimate_f0, cwt_decompose, cwt_reconstruct, log_gaussian_f0_transform
