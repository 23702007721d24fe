"""Minimally uncertain counterfactual explanations with path-integrated attributions."""

from .attribution import (Explanation, RiemannConfig, UncertaintyBand, agi_generate_and_attribute,
                          explanation_uncertainty, exquce_attribution, exquce_uncertainty,
                          featurewise_uncertainty, ig_attribution, path_attribution,
                          segment_attribution)
from .data import Dataset, Normalizer, load_csv, normalize, synthetic_blobs, train_test_split
from .generator import (CounterfactualResult, CounterfactualSet, GeneratorConfig,
                        generate_counterfactual, generate_counterfactual_set, quce_objective)
from .models import MlpClassifier, TrainConfig, VaeModel, train_classifier, train_vae, vae_loss

__version__ = "0.1.0"
