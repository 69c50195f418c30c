from flow_tts import rng
from flow_tts.net.config import ModelConfig
from flow_tts.net.decoder import decoder_specs
from flow_tts.net.encoder import encoder_specs
from flow_tts.net.layers import Specs
from flow_tts.net.params import ModelParams


def param_specs(config: ModelConfig) -> Specs:
  return encoder_specs(config) | decoder_specs(config)


def init_params(config: ModelConfig, seed: rng.Seed = 0) -> ModelParams:
  """Fresh 32-bit parameters for `config`, deterministic in `seed`."""
  return ModelParams.initialize(param_specs(config), seed)


def preset_param_count(config: ModelConfig) -> int:
  """Parameter count without allocating the tensors."""
  return sum(spec.size for spec in param_specs(config).values())
