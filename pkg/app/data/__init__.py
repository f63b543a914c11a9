from app.data.manifest import Manifest, UtteranceRecord, load_manifest, save_manifest, split_speakers
from app.data.synthetic_corpus import gen_corpus, SyntheticSpeakerSpec, EmotionTransform
from app.data.augmentation import AugmentationPlan, parse_plan, build_augmented_set
from app.data.data_manager import DataManager
