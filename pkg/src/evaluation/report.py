# src/evaluation/report.py
"""Evaluation report rendering: tab-separated text and an optional reportlab PDF."""
import os
from io import BytesIO
from typing import List, Optional, Sequence, Tuple

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER, TA_LEFT
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Image as RLImage
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from src.data.dataset import POLICY_CLASSES
from src.evaluation.metrics import EvalReport
from src.utils.logging_utils import get_logger

LOG = get_logger("report")

# (caption, png path) triples per inference panel row
Panel = Sequence[Tuple[str, str]]


def write_text_report(report: EvalReport, path: str, header: Sequence[str] = ()) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for line in header:
            f.write(f"# {line}\n")
        for line in report.to_lines():
            f.write(line + "\n")
    return path


def append_to_metrics_log(report: EvalReport, path: str, tag: str) -> str:
    """Echo the report into a run's metrics.tsv as '#'-prefixed lines after the epoch table."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(f"# eval\t{tag}\n")
        for line in report.to_lines():
            f.write(f"# {line}\n")
    LOG.info("appended %s evaluation to %s", tag, path)
    return path


class ReportRenderer:
    """Builds the evaluation PDF: metric table, per-class accuracy, optional inference panels."""

    def __init__(self):
        self.styles = getSampleStyleSheet()
        self.styles.add(ParagraphStyle(name="HeaderCenter", parent=self.styles["Title"], alignment=TA_CENTER, fontSize=18, leading=22, textColor=colors.darkblue))
        self.styles.add(ParagraphStyle(name="SubInfo", parent=self.styles["Normal"], alignment=TA_CENTER, fontSize=9))
        self.styles.add(ParagraphStyle(name="SectionTitle", parent=self.styles["Heading2"], alignment=TA_LEFT, fontSize=13, leading=16, textColor=colors.darkblue))
        self.styles.add(ParagraphStyle(name="Small", parent=self.styles["Normal"], alignment=TA_LEFT, fontSize=9, leading=11))

    def _table(self, rows: List[List[str]], widths=(2.6, 3.4)) -> Table:
        table = Table(rows, colWidths=[w * inch for w in widths], hAlign="LEFT")
        table.setStyle(TableStyle([
            ("GRID", (0, 0), (-1, -1), 0.4, colors.grey),
            ("BACKGROUND", (0, 0), (0, -1), colors.lightgrey),
            ("VALIGN", (0, 0), (-1, -1), "MIDDLE"),
            ("LEFTPADDING", (0, 0), (-1, -1), 8),
            ("RIGHTPADDING", (0, 0), (-1, -1), 8),
        ]))
        return table

    def build_story(self, report: EvalReport, checkpoint: str = "", panels: Optional[Sequence[Panel]] = None):
        story = []
        story.append(Paragraph("DesignerGAN Evaluation Report", self.styles["HeaderCenter"]))
        story.append(Spacer(1, 6 / 72 * inch))
        story.append(Paragraph(
            f"checkpoint: {os.path.basename(checkpoint) or '-'} | split: {report.split} | "
            f"generated: {report.generated_source} | feature_source={report.feature_source}",
            self.styles["SubInfo"]))
        story.append(Spacer(1, 12 / 72 * inch))

        story.append(Paragraph("<b>METRICS</b>", self.styles["SectionTitle"]))
        rows = [
            ["Samples", str(report.n_samples)],
            ["FID", f"{report.fid:.4f}"],
            ["ROI-FID (|x-y| vs |x-y_hat|)", f"{report.roi_fid:.4f}"],
            ["Policy probability MSE", f"{report.policy_mse:.6f}"],
            ["Classifier cross-entropy", f"{report.ce:.4f}"],
            ["Classifier accuracy", f"{100 * report.accuracy:.1f}%"],
        ]
        if report.attention_roi_hit_rate is not None:
            rows.append(["Attention inside ROI", f"{100 * report.attention_roi_hit_rate:.1f}% of samples"])
        story.append(self._table(rows))
        story.append(Spacer(1, 12 / 72 * inch))

        if report.per_class_accuracy:
            story.append(Paragraph("<b>PER-CLASS ACCURACY</b>", self.styles["SectionTitle"]))
            story.append(self._table([[f"{cid}. {POLICY_CLASSES.get(cid, '?')}", f"{100 * acc:.1f}%"]
                                      for cid, acc in sorted(report.per_class_accuracy.items())]))
            story.append(Spacer(1, 12 / 72 * inch))

        for panel in panels or []:
            cells = [RLImage(p, width=1.7 * inch, height=1.7 * inch) for _, p in panel if os.path.exists(p)]
            if not cells:
                continue
            captions = [Paragraph(c, self.styles["Small"]) for c, p in panel if os.path.exists(p)]
            story.append(Table([cells, captions], hAlign="LEFT"))
            story.append(Spacer(1, 8 / 72 * inch))

        story.append(Paragraph(
            "Features come from the trained policy classifier's pooled final block, not Inception-v3; "
            "values are not comparable to published FID numbers.", self.styles["Small"]))
        return story

    def render_to_file(self, report: EvalReport, pdf_path: str, checkpoint: str = "",
                       panels: Optional[Sequence[Panel]] = None) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(pdf_path)), exist_ok=True)
        doc = SimpleDocTemplate(pdf_path, pagesize=A4, rightMargin=72, leftMargin=72, topMargin=72, bottomMargin=36)
        doc.build(self.build_story(report, checkpoint, panels))
        LOG.info("wrote evaluation PDF %s", pdf_path)
        return pdf_path

    def render_to_bytes(self, report: EvalReport, checkpoint: str = "", panels: Optional[Sequence[Panel]] = None) -> bytes:
        buf = BytesIO()
        doc = SimpleDocTemplate(buf, pagesize=A4, rightMargin=72, leftMargin=72, topMargin=72, bottomMargin=36)
        doc.build(self.build_story(report, checkpoint, panels))
        return buf.getvalue()
