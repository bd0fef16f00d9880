"""Next-event prediction from Petri-net replay enriched with per-place time decay."""

from .decay import DecayModel, SampleSet, build_samples, build_vocabulary, decay_values, estimate_alphas
from .errors import (ConfigError, LogParseError, PnmlError, ReplayError, SampleFormatError,
                     TrainingError, ValidationError)
from .event_log import EventInstance, EventLog, Trace, load_log, parse_csv, parse_xes, split_folds
from .metrics import EvalReport, dunn_sidak, evaluate, sign_test
from .neural import MlpModel, TrainConfig, build_dream_nap, build_dream_napr, train
from .petri_net import PetriNet, build_net, parse_pnml, serialize_pnml
from .pipeline import RunConfig, run_experiment
from .replay import ReplayPolicy, fitness, log_fitness, replay_log, replay_trace, select_model
from .simulate import SimulationConfig, simulate_log, timing_loop_net

__version__ = "0.1.0"
