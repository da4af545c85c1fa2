"""
RecShield banner and version information for command-line output.
"""

from rich.console import Console
from rich.panel import Panel

__version__ = "0.1.0"

SIMPLE_LOGO = """
  ┌─ RecShield ─────────────────────────────────┐
  │  threshold recommendations on encrypted     │
  │  predictions from an expert model           │
  └─────────────────────────────────────────────┘
"""


def get_version_info() -> str:
    return f"Version: {__version__}    License: MIT"


def print_banner(console: Console | None = None) -> None:
    console = console or Console()
    console.print(Panel(f"{SIMPLE_LOGO.strip()}\n\n{get_version_info()}", border_style="blue"))
