"""Deep evidential regression lab: autodiff, models, losses, uncertainty proxies and experiments."""

__version__ = "0.1.0"
