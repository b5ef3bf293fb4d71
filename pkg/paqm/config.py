from paqm import __version__

TOOL_NAME = "paqm"
TOOL_VERSION = __version__
MODEL_FORMAT_VERSION = "paqm-salience-model/1"
INTERACTIONS_FORMAT_VERSION = "paqm-interactions/1"
REPORT_FORMAT_VERSION = "paqm-report/1"

CONFIG_ENV_VAR = "PAQM_CONFIG"

# Distortion metrics (PEAQ-style model output variables)
DM_RMS_NOISE_LOUD = "RmsNoiseLoud"
DM_SEGMENTAL_NMR = "SegmentalNMR"
DM_EHS = "EHS"
DM_IMPS_NOISE_LOUD = "ImpsNoiseLoud"
DM_NAMES = (DM_RMS_NOISE_LOUD, DM_SEGMENTAL_NMR, DM_EHS)

# Cognitive effect metrics
CEM_PS = "PS"
CEM_PDEV = "PDEV"
CEM_BVAR = "BVAR"
CEM_NAMES = (CEM_PS, CEM_PDEV, CEM_BVAR)
CEM_LABELS = {
    CEM_PS: "PS",
    CEM_PDEV: "PDEV",
    CEM_BVAR: "β-VAR",
}

SUPPORTED_SAMPLE_RATES = (44100, 48000)
SUPPORTED_WAV_SUBTYPES = ("PCM_16", "PCM_24", "PCM_32", "FLOAT")

NMR_FLOOR_DB = -100.0

# Degradation is zero at these values; used as the first basis knot
NO_DISTORTION_VALUES = {
    DM_RMS_NOISE_LOUD: 0.0,
    DM_SEGMENTAL_NMR: NMR_FLOOR_DB,
    DM_EHS: 0.0,
    DM_IMPS_NOISE_LOUD: 0.0,
}

# Which CEMs each system variant may gate with
VARIANT_CEMS = {
    "bvar": (CEM_PS, CEM_BVAR),
    "pdev": (CEM_PS, CEM_PDEV),
    "none": (),
    "all": CEM_NAMES,
}

HEATMAP_METRICS = ("ehs", "pdev", "bvar", "ps", "nprime")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PIPELINE = 4
