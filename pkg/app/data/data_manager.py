import os

import numpy as np

from app.features.audio_io import read_wav
from app.features.prosody import estimate_f0
from app.features.spectral import mel_spectrogram, mcep_analyze
from app.features.types import MelSpectrogram, McepSequence, F0Contour
from app.utils.config import CACHE_DIR, HOP_MS, LOG_FLOOR
from app.utils.errors import CheckpointError, MissingFeatureCacheError
from app.utils.logger import logger
from app.utils.parallel import parallel_map
from app.utils.serialization import file_hash, save_features, load_features

# All three streams share the 10 ms frame grid
FEATURE_KINDS = ("mel", "mcep", "f0")


def compute_features(kind, waveform):
    if kind == "mel":
        return mel_spectrogram(waveform).frames
    if kind == "mcep":
        return mcep_analyze(waveform).coeffs
    if kind == "f0":
        return estimate_f0(waveform, hop_ms=HOP_MS).f0_hz
    raise ValueError(f"unknown feature kind '{kind}'")


def cache_path(cache_dir, digest, kind):
    return os.path.join(cache_dir, kind, digest[:2], f"{digest}.evsf")


def _extract_job(job):
    """Fill the cache for one WAV; returns how many entries were built"""
    path, kinds, cache_dir, force_refresh = job
    digest = file_hash(path)
    waveform = None
    built = 0
    for kind in kinds:
        target = cache_path(cache_dir, digest, kind)
        if os.path.exists(target) and not force_refresh:
            continue
        if waveform is None:
            waveform = read_wav(path)
        save_features(target, compute_features(kind, waveform))
        built += 1
    return built


class DataManager:
    """Feature cache keyed by WAV content hash, one EVSF file per stream"""

    def __init__(self, cache_dir=None, jobs=1):
        """Initialize data manager"""
        self.cache_dir = cache_dir or CACHE_DIR
        self.jobs = jobs
        self._digests = {}
        os.makedirs(self.cache_dir, exist_ok=True)
        logger.info(f"Data manager initialized with cache directory: {self.cache_dir}")

    def digest(self, path):
        """Content hash of a WAV, memoized on (mtime, size)"""
        stat = os.stat(path)
        key = (os.path.abspath(path), stat.st_mtime_ns, stat.st_size)
        if key not in self._digests:
            self._digests[key] = file_hash(path)
        return self._digests[key]

    def features(self, path, kind, force_refresh=False):
        """Cached feature matrix for a WAV, computed and stored on a miss"""
        target = cache_path(self.cache_dir, self.digest(path), kind)

        if os.path.exists(target) and not force_refresh:
            try:
                features = load_features(target)
                logger.debug(f"Using cached {kind} features for {path}")
                return features
            except (CheckpointError, OSError, ValueError) as e:
                logger.warning(f"Rebuilding corrupt {kind} cache entry for {path}: {e}")

        logger.debug(f"Extracting {kind} features for {path}")
        features = compute_features(kind, read_wav(path))
        save_features(target, features)
        # Return what a later cache hit would return
        return load_features(target)

    def mel(self, path):
        frames = np.maximum(self.features(path, "mel"), np.log(LOG_FLOOR))
        return MelSpectrogram(frames)

    def mcep(self, path):
        return McepSequence(self.features(path, "mcep"))

    def f0(self, path):
        return F0Contour.from_hz(self.features(path, "f0"), hop_ms=HOP_MS)

    def extract(self, paths, kinds=FEATURE_KINDS, force_refresh=False):
        """Populate the cache for every path; returns the number of entries built"""
        paths = sorted(set(paths))
        jobs = [(p, tuple(kinds), self.cache_dir, force_refresh) for p in paths]
        built = sum(parallel_map(_extract_job, jobs, jobs=self.jobs, desc="extract-features"))
        logger.info(f"Feature cache: {built} entries built, {len(paths) * len(kinds) - built} already cached")
        return built

    def missing(self, paths, kinds=FEATURE_KINDS):
        return [(p, k) for p in paths for k in kinds
                if not os.path.exists(cache_path(self.cache_dir, self.digest(p), k))]

    def require(self, paths, kinds=FEATURE_KINDS):
        """Raise unless every (path, kind) is already cached"""
        missing = self.missing(paths, kinds)
        if missing:
            raise MissingFeatureCacheError(
                f"feature cache is missing {len(missing)} entries (first: {missing[0][1]} for {missing[0][0]}); "
                f"run extract-features first"
            )
