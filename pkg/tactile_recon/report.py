"""Text and PDF renderings of a run report, side by side with the hardware reference figures."""

from pathlib import Path
from typing import Union

from reportlab.lib.colors import HexColor
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.units import mm
from reportlab.pdfgen import canvas

from tactile_recon.models import RunReport


# (mean, std) pairs in mm per metric, measured on the printed surfaces with the
# tactile probe and with a depth camera.
TACTILE_REFERENCE: dict[str, dict[str, tuple[float, float]]] = {
    "surface1": {"ucm": (0.75, 0.53), "scm": (0.017, 0.93), "cc": (0.75, 0.54)},
    "surface2": {"ucm": (0.70, 0.52), "scm": (0.011, 0.90), "cc": (0.69, 0.48)},
    "surface3": {"ucm": (0.53, 0.42), "scm": (0.014, 0.95), "cc": (0.49, 0.3)},
    "surface4": {"ucm": (0.72, 0.57), "scm": (0.012, 0.88), "cc": (0.67, 0.60)},
    "surface5": {"ucm": (0.55, 0.42), "scm": (0.003, 0.75), "cc": (0.59, 0.44)},
}

VISION_REFERENCE: dict[str, dict[str, tuple[float, float]]] = {
    "surface1": {"ucm": (1.05, 0.92), "scm": (0.12, 1.13), "cc": (1.02, 0.94)},
    "surface2": {"ucm": (0.98, 0.89), "scm": (0.12, 1.02), "cc": (0.99, 0.88)},
    "surface3": {"ucm": (0.96, 0.82), "scm": (0.15, 1.31), "cc": (1.03, 0.91)},
    "surface4": {"ucm": (1.02, 0.8), "scm": (0.17, 1.25), "cc": (1.07, 0.94)},
    "surface5": {"ucm": (1.23, 0.97), "scm": (0.21, 1.127), "cc": (1.26, 1.07)},
}

# Averages over the five printed surfaces reported for the tactile probe.
TACTILE_AVERAGE_UCM = 0.652
TACTILE_AVERAGE_CC = 0.637


def pm(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def _reference_cell(table: dict, surface: str, metric: str) -> str:
    entry = table.get(surface)
    if entry is None:
        return "-"
    return pm(*entry[metric], digits=2)


def table_rows(report: RunReport) -> list[list[str]]:
    rows = []
    for result in report.results:
        m = result.metrics
        rows.append(
            [
                result.surface,
                f"{result.rows}x{result.cols}",
                pm(m.ucm_mean, m.ucm_std),
                pm(m.scm_mean_abs, m.scm_std),
                pm(m.cc_mean, m.cc_std),
                f"{m.hausdorff:.3f}",
                _reference_cell(TACTILE_REFERENCE, result.surface, "ucm"),
                _reference_cell(VISION_REFERENCE, result.surface, "ucm"),
            ]
        )
    if report.results:
        n = len(report.results)
        rows.append(
            [
                "average",
                "",
                f"{sum(r.metrics.ucm_mean for r in report.results) / n:.3f}",
                f"{sum(r.metrics.scm_mean_abs for r in report.results) / n:.3f}",
                f"{sum(r.metrics.cc_mean for r in report.results) / n:.3f}",
                f"{max(r.metrics.hausdorff for r in report.results):.3f}",
                f"{TACTILE_AVERAGE_UCM:.3f}",
                "",
            ]
        )
    return rows


HEADERS = ["Surface", "Grid", "uCM", "sCM", "CC", "Hausdorff", "tactile ref uCM", "vision ref uCM"]


def render_table(report: RunReport) -> str:
    """Fixed-width table of per-surface distances in mm (mean ± std)."""
    rows = [HEADERS] + table_rows(report)
    widths = [max(len(row[i]) for row in rows) for i in range(len(HEADERS))]

    def line(cells):
        return "  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()

    out = [
        f"Reconstruction error, normals: {report.normal_source}, "
        f"spacing {report.spacing:g} mm, density {report.density}",
        line(HEADERS),
        line(["-" * w for w in widths]),
    ]
    out += [line(row) for row in rows[1:]]
    out.append(f"tactile reference averages: uCM {TACTILE_AVERAGE_UCM:.3f} mm, CC {TACTILE_AVERAGE_CC:.3f} mm")
    out.append(f"config {report.config_hash[:12]}")
    return "\n".join(out)


class ReportPdfRenderer:
    def __init__(self, report: RunReport):
        self.report = report
        self.page_width, self.page_height = landscape(A4)
        self.margin = 15 * mm
        self.font_regular = "Helvetica"
        self.font_bold = "Helvetica-Bold"

    def _draw_title(self, c: canvas.Canvas, y: float) -> float:
        c.setFont(self.font_bold, 16)
        c.drawString(self.margin, y, "Tactile surface reconstruction")
        c.setFont(self.font_regular, 10)
        r = self.report
        subtitle = (
            f"normals: {r.normal_source}   spacing: {r.spacing:g} mm   "
            f"density: {r.density}   config: {r.config_hash[:12]}"
        )
        c.drawString(self.margin, y - 6 * mm, subtitle)
        return y - 16 * mm

    def _draw_table(self, c: canvas.Canvas, y: float) -> float:
        columns = [28, 18, 38, 38, 38, 26, 34, 34]
        row_height = 7 * mm
        usable = self.page_width - 2 * self.margin
        scale = usable / (sum(columns) * mm)
        widths = [w * mm * scale for w in columns]

        c.setFillColor(HexColor("#16213e"))
        c.rect(self.margin, y - row_height + 2 * mm, usable, row_height, fill=1, stroke=0)
        c.setFillColor(HexColor("#ffffff"))
        c.setFont(self.font_bold, 9)
        x = self.margin + 2 * mm
        for header, w in zip(HEADERS, widths):
            c.drawString(x, y - 3 * mm, header)
            x += w

        c.setFillColor(HexColor("#000000"))
        c.setFont(self.font_regular, 9)
        for row in table_rows(self.report):
            y -= row_height
            x = self.margin + 2 * mm
            for cell, w in zip(row, widths):
                c.drawString(x, y - 3 * mm, cell)
                x += w
        return y - row_height

    def render(self, output_path: Union[str, Path]) -> Path:
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        c = canvas.Canvas(str(output_path), pagesize=(self.page_width, self.page_height), invariant=1)
        c.setTitle("Tactile surface reconstruction report")
        y = self.page_height - self.margin
        y = self._draw_title(c, y)
        self._draw_table(c, y)
        c.showPage()
        c.save()
        return output_path


def write_pdf(report: RunReport, path: Union[str, Path]) -> Path:
    return ReportPdfRenderer(report).render(path)
