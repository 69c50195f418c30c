from flow_tts.cli.commands import CliError, UsageError, build_parser, main

__all__ = ["CliError", "UsageError", "build_parser", "main"]
