"""Rate-distortion sweeps over a recording."""
from __future__ import annotations

import io

from . import pipeline
from .pipeline import Config, analyze_block, default_block_length, encode_recording, mean_prd
from .recording import Recording, electrodes_for

SOURCE_BITS = 16
COLUMNS = ("target_bps", "achieved_bps", "cr", "mean_prd", "dct_blocks", "arx_blocks", "bytes")


def rd_sweep(rec: Recording, rates, cfg: Config | None = None, N=None):
    """Encode ``rec`` at every rate in order; one result row per rate.

    The rate-independent part of every block (fit, moments, residual,
    clustering) is computed once and shared by all sweep points.
    """
    cfg = Config(electrodes_for(rec)) if cfg is None else cfg
    N = default_block_length(rec.fs) if N is None else N
    analyses = [analyze_block(b, cfg) for b in pipeline.split_blocks(rec.samples, N)]
    rows = []
    for rate in rates:
        res = encode_recording(rec.samples, rec.fs, cfg, float(rate), N, analyses)
        bps = 8 * len(res.data) / rec.samples.size
        rows.append({
            "target_bps": float(rate),
            "achieved_bps": bps,
            "cr": SOURCE_BITS / bps,
            "mean_prd": mean_prd(rec.samples, res.reconstruction, N),
            "dct_blocks": res.modes.count(pipeline.DCT),
            "arx_blocks": res.modes.count(pipeline.ARX),
            "bytes": len(res.data),
        })
    return rows


def _cell(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def format_table(rows):
    out = io.StringIO()
    out.write("\t".join(COLUMNS) + "\n")
    for r in rows:
        out.write("\t".join(_cell(r[c]) for c in COLUMNS) + "\n")
    return out.getvalue()


def format_plot_data(rows):
    """Two-column (bps, PRD) series, sorted by achieved rate, for plotting tools."""
    out = io.StringIO()
    out.write("# achieved_bps\tmean_prd\n")
    for r in sorted(rows, key=lambda r: r["achieved_bps"]):
        out.write(f"{r['achieved_bps']:.6f}\t{r['mean_prd']:.6f}\n")
    return out.getvalue()
