from flow_tts.net.config import (
  REFERENCE_PARAM_COUNT,
  DecoderConfig,
  EncoderConfig,
  ModelConfig,
)
from flow_tts.net.decoder import (
  decoder_field,
  decoder_forward,
  sinusoidal_embedding,
  time_embed,
)
from flow_tts.net.encoder import (
  EncoderOutput,
  OutOfVocabularyError,
  encoder_forward,
)
from flow_tts.net.layers import rope_rotate, snake_beta
from flow_tts.net.model import init_params, param_specs, preset_param_count
from flow_tts.net.params import ModelParams, count_params

__all__ = [
  "REFERENCE_PARAM_COUNT",
  "DecoderConfig",
  "EncoderConfig",
  "EncoderOutput",
  "ModelConfig",
  "ModelParams",
  "OutOfVocabularyError",
  "count_params",
  "decoder_field",
  "decoder_forward",
  "encoder_forward",
  "init_params",
  "param_specs",
  "preset_param_count",
  "rope_rotate",
  "sinusoidal_embedding",
  "snake_beta",
  "time_embed",
]
