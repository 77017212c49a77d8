import io
import os
import json
import math
import logging
import numpy as np
from fpdf import FPDF

# Configure logging
logger = logging.getLogger(__name__)

# --- JSON ---

def to_jsonable(obj):
    """Numpy scalars and arrays to plain Python; infinities as "+inf"/"-inf", NaN as None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "+inf" if value > 0 else "-inf"
        return value
    return obj


def dumps(data) -> str:
    return json.dumps(to_jsonable(data), indent=4, sort_keys=True)


def _atomic_write(path: str, payload: bytes):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def write_json(path: str, data) -> str:
    _atomic_write(path, (dumps(data) + "\n").encode("utf-8"))
    return path

# --- CSV ---

def write_csv(path: str, rows, header) -> str:
    """Numeric table with a comma-separated header line."""
    buffer = io.StringIO()
    np.savetxt(buffer, np.atleast_2d(np.asarray(rows, dtype=float)), delimiter=",",
               header=",".join(header), comments="", fmt="%.12g")
    _atomic_write(path, buffer.getvalue().encode("utf-8"))
    return path

# --- Bound table ---

def format_value(value) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    return f"{value:.6g}"


def bound_rows(report: dict):
    """(name, claimed, measured, pass) rows of a run report."""
    return [(b["name"], format_value(b["claimed"]), format_value(b["measured"]), "pass" if b["passed"] else "FAIL")
            for b in report.get("bounds", [])]

# --- PDF Export ---

def verdict_lines(report: dict):
    verdict = report.get("verdict") or {}
    if not verdict:
        return []
    lines = [f"Hypotheses hold: {format_value(verdict.get('holds'))}"]
    for cond in verdict.get("violated_conditions", []):
        label = cond.get("label", "?") if isinstance(cond, dict) else cond
        lines.append(f"  violated: {label}")
    return lines


def create_pdf(report: dict):
    """
    Run summary: scenario, regime, times, terminal errors and the bound table.
    Core Helvetica only covers Latin-1, so other symbols are replaced.
    """
    pdf = FPDF(format='A4')
    pdf.set_margins(25, 25, 25)  # 25mm margins
    pdf.add_page()

    def line(text, size=10, style=""):
        pdf.set_font("Helvetica", style=style, size=size)
        safe = str(text).encode('latin-1', 'replace').decode('latin-1')
        pdf.multi_cell(0, 6, safe, new_x="LMARGIN", new_y="NEXT")

    line(f"Run report: {report.get('scenario', 'unnamed')}", size=14, style="B")
    line(f"Command: {report.get('command', '-')}   Flux: {report.get('flux', '-')}   Regime: {report.get('regime', '-')}")
    for text in verdict_lines(report):
        line(text)
    times = report.get("times") or {}
    if times:
        line("Times: " + ", ".join(f"{k} = {format_value(v)}" for k, v in sorted(times.items())))
    terminal = report.get("terminal") or {}
    if terminal:
        line("Terminal errors: " + ", ".join(f"{k} = {format_value(v)}" for k, v in sorted(terminal.items())))

    rows = bound_rows(report)
    if rows:
        pdf.ln(4)
        line("Bounds (claimed vs measured)", size=12, style="B")
        widths = (60, 35, 35, 20)
        pdf.set_font("Helvetica", style="B", size=9)
        for w, head in zip(widths, ("bound", "claimed", "measured", "check")):
            pdf.cell(w, 6, head, border=1)
        pdf.ln()
        pdf.set_font("Helvetica", size=9)
        for row in rows:
            for w, cell in zip(widths, row):
                pdf.cell(w, 6, cell.encode('latin-1', 'replace').decode('latin-1'), border=1)
            pdf.ln()

    buffer = io.BytesIO()
    buffer.write(pdf.output())
    buffer.seek(0)
    return buffer

# --- LaTeX Export ---

def latex_escape(s):
    chars = {
        '&': r'\&', '%': r'\%', '$': r'\$', '#': r'\#', '_': r'\_',
        '{': r'\{', '}': r'\}', '~': r'\textasciitilde{}', '^': r'\textasciicircum{}',
        '\\': r'\textbackslash{}'
    }
    return "".join(chars.get(c, c) for c in str(s))


def create_latex(report: dict):
    """Standalone article with the claimed-vs-measured bound table."""
    body = "\n".join(
        " & ".join(latex_escape(c) for c in row) + r" \\"
        for row in bound_rows(report)
    )
    title = latex_escape(f"Bounds for {report.get('scenario', 'unnamed')} ({report.get('command', '-')})")
    template = r"""
\documentclass[11pt,a4paper]{article}
\usepackage[utf8]{inputenc}
\usepackage[T1]{fontenc}
\usepackage{geometry}
\usepackage{booktabs}
\geometry{a4paper, left=25mm, top=25mm}

\begin{document}
\section*{%s}
\begin{tabular}{lrrl}
\toprule
bound & claimed & measured & check \\
\midrule
%s
\bottomrule
\end{tabular}
\end{document}
"""
    latex_code = template % (title, body)

    buffer = io.BytesIO()
    buffer.write(latex_code.encode('utf-8'))
    buffer.seek(0)
    return buffer, latex_code
