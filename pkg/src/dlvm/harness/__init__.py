"""Command-line experiment harness: config, corpora, metrics, recipes."""
