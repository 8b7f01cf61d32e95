"""End-to-end learned communication over unknown channels, trained with
noisy or learned loss feedback."""

from .baselines import AnalogLink, Codebook, QPSKModem, agrell_generate_fallback, agrell_load
from .channels import Channel, snr_to_noise_var
from .comm import CommSystem, GaussianTransport, PerfectTransport, alternating_train, evaluate_bler
from .config import ExperimentConfig, load_config
from .estimators import AlternatingAutoencoder, FeedbackLink
from .feedback import FeedbackSystem, LearnedTransport, evaluate_mse, main_loop
from .nn import Adam, ConfigurationError, Mlp, SGD, TrainingError

__version__ = "0.1.0"
