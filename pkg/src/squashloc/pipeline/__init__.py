"""Configuration, audio and record I/O, cross-channel matching and the end-to-end run."""

from squashloc.pipeline.audio import IngestionError, ingest, read_wav, write_wav
from squashloc.pipeline.config import (
    ClassifierConfig,
    ConfigError,
    IOConfig,
    MatcherConfig,
    PipelineConfig,
    config_from_dict,
    load_config,
)
from squashloc.pipeline.matching import match_detections
from squashloc.pipeline.records import (
    ClassifiedLocatedEvent,
    Label,
    RecordError,
    read_detections,
    read_events,
    read_labels,
    write_detections,
    write_events,
    write_labels,
)
from squashloc.pipeline.run import (
    BundleClassifier,
    LabelOracle,
    PipelineError,
    compare_localizations,
    detect_block,
    process_block,
    run,
    training_datasets,
)

__all__ = [
    "BundleClassifier", "ClassifiedLocatedEvent", "ClassifierConfig", "ConfigError", "IOConfig",
    "IngestionError", "Label", "LabelOracle", "MatcherConfig", "PipelineConfig", "PipelineError",
    "RecordError", "compare_localizations", "config_from_dict", "detect_block", "ingest",
    "load_config", "match_detections", "process_block", "read_detections", "read_events",
    "read_labels", "read_wav", "run", "training_datasets", "write_detections", "write_events",
    "write_labels", "write_wav",
]
