"""Prompt-only intrusion detection on flow records.

Flows are rendered to one-line text with six boolean flags, sent to an LLM
under a verdict grammar, and scored at a threshold calibrated on a dev slice.
"""

from .calibration import CalibrationResult, apply_threshold, calibrate_threshold
from .dataset import FlowRecord, SubsetSelection, load_csv, sample_balanced, split_dev_test
from .flags import FlagSet, FlagThresholds, RarityTable, compute_cues, compute_flags, fit_rarity_table
from .grammar import GrammarSpec, ModelVerdict, accepts, emit_gbnf, parse_verdict
from .inference import BackendConfig, InferenceOutcome, MockWeights, classify_batch, classify_flow
from .metrics import ConfusionMatrix, Metrics, bootstrap_f1_ci, classification_metrics, confusion, roc_pr_points, wilson_ci
from .prompt import Exemplar, PromptMode, PromptTemplate, build_prompt, select_exemplars
from .render import FlowRenderer, FlowText, RenderPolicy, render_flow_text

__version__ = "0.1.0"
