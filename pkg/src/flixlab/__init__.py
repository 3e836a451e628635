"""Per-feature low-rank adapters composed over a frozen base."""

from .adapters import (AdapterBank, LoraAdapter, active_param_count, compose_delta,
                       compute_matched_rank, effective_weight, merge_for_serving,
                       param_matched_rank, total_param_count, zero_init)
from .data import (Example, SplitPlan, SyntheticSpec, exact_match, generate, read_tsv,
                   token_f1, write_tsv)
from .errors import (ConfigError, DomainError, FlixError, NumericalError, ShapeError,
                     UnknownFeatureError)
from .features import (Feature, FeatureRegistry, Metadata, feature_dropout, featurize,
                       mask_for_unseen_language)
from .model import (AdapterGradients, Batch, FrozenBase, TaggerModel, finite_difference_check,
                    forward, grad_adapters, loss)
from .train import TrainConfig, TrainReport, evaluate, train, train_baseline_lora

__version__ = "0.1.0"
