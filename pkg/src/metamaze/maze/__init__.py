from . import core, render

__all__ = ["core", "render"]
