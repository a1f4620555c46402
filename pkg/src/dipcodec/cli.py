"""Command-line entry point: encode, decode, sweep and synth."""
from __future__ import annotations

import argparse
import sys

from . import harness, pipeline
from .geometry import HeadModel, read_electrode_csv
from .recording import Recording, read_recording, to_int16, write_recording, electrodes_for
from .synth import KINDS, synth_corpus

HEADS = {"four_shell": HeadModel.four_shell, "single_sphere": HeadModel.single_sphere}


def _rates(text):
    try:
        rates = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}") from None
    if not rates or any(r <= 0 for r in rates):
        raise argparse.ArgumentTypeError("rates must be positive")
    return rates


def _add_codec_args(p):
    p.add_argument("--in", dest="src", required=True, help="CSV or EDF recording")
    p.add_argument("--fs", type=float, help="sampling rate in Hz (CSV input)")
    p.add_argument("--block", type=int, help="block length N (default from fs)")
    p.add_argument("--grid", type=int, default=181, help="target grid size")
    p.add_argument("--tau", type=float, default=10.0, help="smoothness threshold")
    p.add_argument("--dipoles", type=int, default=1)
    p.add_argument("--mean-bits", type=int, default=16)
    p.add_argument("--head", choices=sorted(HEADS), default="four_shell")
    p.add_argument("--electrodes", help="label,x,y,z CSV of electrode positions")
    p.add_argument("--seed", type=int, default=0, help="clustering seed")


def _config(args, rec: Recording):
    if args.electrodes:
        arr = read_electrode_csv(args.electrodes, radius=HEADS[args.head]().scalp_radius)
        order = {lab: i for i, lab in enumerate(arr.labels)}
        missing = [l for l in rec.labels if l not in order]
        if missing:
            raise ValueError(f"electrode file lacks {missing}")
        electrodes = type(arr)(arr.positions[[order[l] for l in rec.labels]], rec.labels)
    else:
        electrodes = electrodes_for(rec)
    return pipeline.Config(electrodes, HEADS[args.head](), args.grid, args.dipoles, args.tau,
                           args.mean_bits, seed=args.seed)


def cmd_encode(args):
    rec = read_recording(args.src, args.fs)
    cfg = _config(args, rec)
    res = pipeline.encode_recording(rec.samples, rec.fs, cfg, args.rate, args.block)
    with open(args.out, "wb") as fh:
        fh.write(res.data)
    bps = 8 * len(res.data) / rec.samples.size
    n_dct = res.modes.count(pipeline.DCT)
    print(f"{len(res.data)} bytes, {bps:.4f} bps, CR {16 / bps:.3f}, "
          f"{n_dct} DCT / {len(res.modes) - n_dct} ARX blocks")


def cmd_decode(args):
    with open(args.src, "rb") as fh:
        data = fh.read()
    samples, fs, labels, _ = pipeline.decode_recording(data)
    montage = "bipolar" if all("-" in l for l in labels) else "referential"
    write_recording(Recording(to_int16(samples), fs, labels, montage), args.out)


def cmd_sweep(args):
    rec = read_recording(args.src, args.fs)
    rows = harness.rd_sweep(rec, args.rates, _config(args, rec), args.block)
    table = harness.format_table(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    if args.plot_data:
        with open(args.plot_data, "w") as fh:
            fh.write(harness.format_plot_data(rows))


def cmd_synth(args):
    rec = synth_corpus(args.kind, args.channels, args.block, args.fs, args.seed, args.blocks)
    write_recording(rec, args.out)


def build_parser():
    ap = argparse.ArgumentParser(prog="dipcodec", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress a recording")
    _add_codec_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=float, help="total bits per sample (default: full depth)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decompress to CSV or EDF")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep", help="PRD versus rate table")
    _add_codec_args(p)
    p.add_argument("--rates", type=_rates, default=_rates("0.5,1,1.5,2,2.5,3"))
    p.add_argument("--out", help="TSV table path (default stdout)")
    p.add_argument("--plot-data", help="two-column bps/PRD file")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=31)
    p.add_argument("--fs", type=float, default=1000.0)
    p.add_argument("--block", type=int, default=1024)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"dipcodec: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
