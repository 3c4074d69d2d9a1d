"""Google-matrix analysis of country x sector money-flow networks."""

__version__ = "0.1.0"

from .google_core import GoogleMatrix, GpvmResult, build_stochastic, gpvm, pagerank  # noqa: E402
from .net_model import MoneyTensor, Registry, load_registry, load_tensor, synth_generate, tiva_registry  # noqa: E402
from .value_rank import RankVector, import_export_values, value_probabilities  # noqa: E402

__all__ = [
    "GoogleMatrix", "GpvmResult", "MoneyTensor", "RankVector", "Registry",
    "build_stochastic", "gpvm", "import_export_values", "load_registry", "load_tensor",
    "pagerank", "synth_generate", "tiva_registry", "value_probabilities",
]
