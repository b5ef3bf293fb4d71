from paqm import config


class PaqmError(Exception):
    """Base error; exit_code is the CLI process status"""
    exit_code = config.EXIT_PIPELINE


class ConfigError(PaqmError):
    exit_code = config.EXIT_USAGE


class AudioIOError(PaqmError):
    exit_code = config.EXIT_IO


class AudioFormatError(AudioIOError):
    """Readable file in a codec, bit depth, rate or layout we refuse"""


class PipelineError(PaqmError, ValueError):
    exit_code = config.EXIT_PIPELINE


class AlignmentError(PipelineError):
    pass


class InsufficientDataError(PipelineError):
    pass


class DegenerateDataError(PipelineError):
    """Constant vectors, rank-deficient systems"""


class ModelError(PipelineError):
    """Untrained, corrupt or incompatible mapping model"""
