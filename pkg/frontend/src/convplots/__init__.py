"""Log-log convergence figures from experiment CSVs."""

from .render import FigureSpec, RenderError, RenderSummary, main, render

__all__ = ["FigureSpec", "RenderError", "RenderSummary", "main", "render"]
