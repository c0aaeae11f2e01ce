"""
Theme configuration: matplotlib style and color scheme.
Light theme shared by every emitted figure.
"""

from typing import Dict


# Color constants
COLORS = {
    'centerline': '#2196F3',        # Later frames
    'initial': '#B0BEC5',           # First frame
    'head': '#F44336',              # Base / head marker
    'reference': '#707070',         # Reference slope lines
    'grid': '#E0E0E0',
    'text': '#31333F',
}

SERIES_COLORS = ['#2196F3', '#FF9800', '#00C853', '#9C27B0', '#F44336', '#795548']

FIGURE_SIZE = (6.0, 4.5)
LINE_WIDTH = 1.2
SVG_HASH_SALT = "cosseratflow"

PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


def plot_style() -> Dict:
    """rcParams for deterministic, self-contained SVG output."""
    return {
        "svg.hashsalt": SVG_HASH_SALT,
        "svg.fonttype": "none",
        "axes.edgecolor": COLORS['text'],
        "axes.labelcolor": COLORS['text'],
        "axes.grid": True,
        "grid.color": COLORS['grid'],
        "xtick.color": COLORS['text'],
        "ytick.color": COLORS['text'],
        "lines.linewidth": LINE_WIDTH,
        "font.size": 9,
    }
