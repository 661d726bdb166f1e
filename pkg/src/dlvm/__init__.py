"""Deep latent-variable models of text on a small numpy autodiff core."""

__version__ = "0.1.0"
