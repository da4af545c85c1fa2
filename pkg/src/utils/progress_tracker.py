import logging
import time
from typing import Any

from rich.console import Console
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TaskProgressColumn,
    TextColumn,
    TimeRemainingColumn,
)
from rich.table import Table

logger = logging.getLogger(__name__)


class ProgressTracker:
    def __init__(self, verbose: bool = True):
        self.console = Console()
        self.verbose = verbose
        self.start_time = None
        self.stats: dict[str, Any] = {"total_steps": 0, "completed_steps": 0}
        self.progress = None
        self.task_id = None

    def start_processing(self, total_steps: int, operation: str = "Processing"):
        self.start_time = time.time()
        self.stats["total_steps"] = total_steps
        self.stats["completed_steps"] = 0

        if self.verbose:
            self.progress = Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                BarColumn(),
                TaskProgressColumn(),
                TimeRemainingColumn(),
                console=self.console,
            )
            self.task_id = self.progress.add_task(f"[cyan]{operation}...", total=total_steps)
            self.progress.start()

    def step_done(self, description: str | None = None):
        self.stats["completed_steps"] += 1

        if self.verbose and self.progress:
            if description:
                self.progress.update(self.task_id, description=f"[cyan]{description}")
            self.progress.advance(self.task_id)

    def stop_processing(self):
        if self.progress:
            self.progress.stop()
            self.progress = None

        if self.start_time:
            self.stats["elapsed_time"] = time.time() - self.start_time

    def print_training_summary(self, summary: dict[str, Any]):
        self.console.print("\n[bold cyan]═══ Training Summary ═══[/bold cyan]\n")

        table = Table(show_header=True, header_style="bold magenta")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", justify="right", style="green")
        for key, value in summary.items():
            table.add_row(key, f"{value:.4f}" if isinstance(value, float) else str(value))

        if "elapsed_time" in self.stats:
            elapsed = self.stats["elapsed_time"]
            table.add_row("Time Elapsed", f"{int(elapsed // 60)}m {int(elapsed % 60)}s")

        self.console.print(table)

    def print_verdict_summary(self, verdict: list[int], user_ids: list[str], show_rejected: int = 20):
        accepted = sum(verdict)
        table = Table(title="RobDet Verdict", show_header=True, header_style="bold magenta")
        table.add_column("Outcome", style="cyan")
        table.add_column("Profiles", justify="right", style="green")
        table.add_row("Accepted", str(accepted))
        table.add_row("Rejected", str(len(verdict) - accepted))
        self.console.print(table)

        rejected = [user_ids[u] for u, bit in enumerate(verdict) if bit == 0]
        if rejected:
            shown = ", ".join(rejected[:show_rejected])
            more = f" (+{len(rejected) - show_rejected} more)" if len(rejected) > show_rejected else ""
            self.console.print(f"[yellow]Rejected:[/yellow] {shown}{more}")

    def create_counters_table(
        self,
        observed: dict[str, dict[str, int]],
        expected: dict[str, dict[str, int]],
        published: dict[str, dict[str, int]] | None = None,
        physical_ciphertexts: int | None = None,
    ) -> Table:
        """Observed against closed-form counts.

        ``published`` adds a column with the values a published table lists where they
        differ from the closed form; ``physical_ciphertexts`` goes into the caption.
        """
        caption = None
        if physical_ciphertexts is not None:
            caption = f"Physical SWHE ciphertexts returned by the user: {physical_ciphertexts}"
        table = Table(title="Operation Counters", caption=caption, show_header=True, header_style="bold magenta")

        table.add_column("Party", style="cyan")
        table.add_column("Operation", style="cyan")
        table.add_column("Observed", justify="right", style="green")
        table.add_column("Expected", justify="right", style="yellow")
        if published is not None:
            table.add_column("Published", justify="right", style="magenta")

        for party in observed:
            listed = (published or {}).get(party, {})
            for op in sorted(set(observed[party]) | set(expected.get(party, {})) | set(listed)):
                got, want = observed[party].get(op, 0), expected.get(party, {}).get(op, 0)
                style = "" if got == want else "[red]"
                cells = [party, op, f"{style}{got}", str(want)]
                if published is not None:
                    cells.append(str(listed[op]) if op in listed and listed[op] != want else "")
                table.add_row(*cells)

        return table

    def create_bench_table(self, report) -> Table:
        table = Table(
            title=f"Primitive Costs ({report.profile}, n={report.poly_degree}, Paillier {report.paillier_bits} bits)",
            show_header=True,
            header_style="bold magenta",
        )

        table.add_column("Scheme", style="cyan")
        table.add_column("Primitive", style="cyan")
        table.add_column("Mean (ms)", justify="right", style="green")
        table.add_column("σ (ms)", justify="right", style="green")
        table.add_column("Published (ms)", justify="right", style="yellow")

        for row in report.rows:
            published = f"{row.published_ms:g}" if row.published_ms is not None else "-"
            table.add_row(row.scheme, row.primitive, f"{row.mean_ms:.4f}", f"{row.std_ms:.4f}", published)

        return table

    def print_recommendations(self, recommended: list[str], protocol: str, thresholds: list[float]):
        body = ", ".join(recommended) if recommended else "(none)"
        panel = Panel(
            f"[bold]Thresholds:[/bold] {', '.join(f'{v:.1f}' for v in thresholds)}\n"
            f"[bold]Items ({len(recommended)}):[/bold] {body}",
            title=f"[bold blue]Recommendations ({protocol})[/bold blue]",
            border_style="blue",
        )
        self.console.print(panel)

    def print_error(self, message: str):
        self.console.print(f"[red]✗ Error:[/red] {message}")

    def print_warning(self, message: str):
        self.console.print(f"[yellow]⚠ Warning:[/yellow] {message}")

    def print_info(self, message: str):
        if self.verbose:
            self.console.print(f"[blue]ℹ Info:[/blue] {message}")

    def print_success(self, message: str):
        self.console.print(f"[green]✓ Success:[/green] {message}")
