"""Flow-matching text-to-acoustic-frames engine on a numpy tape autodiff."""
