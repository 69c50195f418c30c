from flow_tts.data.batching import Batch, EmptyCorpusError, make_batches
from flow_tts.data.corpus import (
  Utterance,
  export_corpus,
  load_entry,
  load_manifest,
  read_manifest,
  synth_corpus,
  token_signatures,
)
from flow_tts.data.tensor_file import read_tensor_file, write_tensor_file
from flow_tts.data.vocab import DEFAULT_VOCAB, Vocab, detokenize, tokenize

__all__ = [
  "DEFAULT_VOCAB",
  "Batch",
  "EmptyCorpusError",
  "Utterance",
  "Vocab",
  "detokenize",
  "export_corpus",
  "load_entry",
  "load_manifest",
  "make_batches",
  "read_manifest",
  "read_tensor_file",
  "synth_corpus",
  "token_signatures",
  "tokenize",
  "write_tensor_file",
]
