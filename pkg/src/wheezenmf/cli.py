"""Command-line front end: ``wheezenmf {detect,denoise,mix,corpus,sweep,bench}``.

Exit codes: 0 success, 1 usage/configuration, 2 I/O or format, 3 numerical.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataset, evaluation
from .dataset import MixtureSpec, load_two_channel, load_wav, mix_at_snr, save_wav
from .exceptions import ConfigurationError, InvalidInputError, NumericalError, WavFormatError
from .pipeline import PipelineConfig, analyze, denoise

logger = logging.getLogger("wheezenmf")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common():
    # SUPPRESS keeps unset options out of the namespace, so they can appear
    # either before or after the subcommand
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="key=value configuration file")
    p.add_argument("--seed", type=int, help="seed for every random draw")
    p.add_argument("--threads", type=int, help="threads for the pipeline")
    p.add_argument("--out-dir", type=Path, help="directory for output files")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any configuration key")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("-v", "--verbose", action="count", help="more logging")
    return p


def _inputs(p):
    p.add_argument("--internal", type=Path, help="internal (stethoscope) channel WAV")
    p.add_argument("--external", type=Path, help="external (ambient) channel WAV")
    p.add_argument("--stereo", type=Path, help="two-channel WAV: channel 0 internal, channel 1 external")


def build_parser():
    common = _common()
    parser = _Parser(prog="wheezenmf", description="Two-channel NMF denoising and wheeze detection.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("detect", parents=[common], help="detect wheezing in one recording")
    _inputs(p)

    p = sub.add_parser("denoise", parents=[common], help="split the internal channel into source and noise")
    _inputs(p)
    p.add_argument("--out-source", type=Path, help="default: OUT_DIR/source.wav")
    p.add_argument("--out-noise", type=Path, help="default: OUT_DIR/noise.wav")

    p = sub.add_parser("mix", parents=[common], help="mix a respiratory source with noise at a given SNR")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--noise", type=Path, required=True)
    p.add_argument("--snr", type=float, default=0.0, help="target SNR in dB")
    p.add_argument("--label", choices=dataset.LABELS, default="normal")

    p = sub.add_parser("corpus", parents=[common], help="write a synthetic corpus and manifest")
    p.add_argument("--n-wheeze", type=int, default=20)
    p.add_argument("--n-normal", type=int, default=20)
    p.add_argument("--duration", type=float, default=4.0, help="seconds per item")

    p = sub.add_parser("sweep", parents=[common], help="detection metrics over an SNR grid")
    p.add_argument("--manifest", type=Path, help="corpus manifest; a synthetic corpus is built when omitted")
    p.add_argument("--snr", type=_float_list, default=list(evaluation.DEFAULT_SNR_GRID),
                   help="comma-separated SNRs in dB")
    p.add_argument("--n-wheeze", type=int, default=20)
    p.add_argument("--n-normal", type=int, default=20)

    p = sub.add_parser("bench", parents=[common], help="per-stage timings versus thread count")
    p.add_argument("--durations", type=_float_list, default=[60.0], help="comma-separated seconds")
    p.add_argument("--thread-counts", type=_int_list, default=[1, 2, 4])
    p.add_argument("--repeats", type=int, default=5)
    return parser


def _config(args):
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in ("seed", "threads", "out_dir"):
        if hasattr(args, key):
            overrides[key] = str(getattr(args, key))
    if hasattr(args, "config"):
        return PipelineConfig.load(args.config, **overrides)
    return PipelineConfig.from_flat(overrides)


def _read_pair(args):
    if args.stereo is not None:
        if args.internal is not None or args.external is not None:
            raise UsageError("--stereo cannot be combined with --internal/--external")
        return load_two_channel(args.stereo)
    if args.internal is None or args.external is None:
        raise UsageError("need --internal and --external, or --stereo")
    return load_wav(args.internal), load_wav(args.external)


def _out_dir(config):
    path = Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_detect(args, config):
    internal, external = _read_pair(args)
    result = analyze(internal, external, config)
    out = _out_dir(config) / "detection.json"
    out.write_text(result.detection.to_json(indent=2))
    print(json.dumps({"omega": result.detection.label, "profile_gini": result.detection.profile_gini,
                      "result": str(out)}))
    return EXIT_OK


def cmd_denoise(args, config):
    internal, external = _read_pair(args)
    source, noise, _ = denoise(internal, external, config)
    out_dir = _out_dir(config)
    src_path = args.out_source or out_dir / "source.wav"
    noise_path = args.out_noise or out_dir / "noise.wav"
    save_wav(source, src_path)
    save_wav(noise, noise_path)
    print(json.dumps({"source": str(src_path), "noise": str(noise_path)}))
    return EXIT_OK


def cmd_mix(args, config):
    rec = mix_at_snr(MixtureSpec(load_wav(args.source), load_wav(args.noise), args.snr, label=args.label))
    logger.info("noise gain %.6g", rec.noise_gain)
    out_dir = _out_dir(config)
    save_wav(rec.internal, out_dir / "internal.wav")
    save_wav(rec.external, out_dir / "external.wav")
    print(json.dumps({"gain": rec.noise_gain, "achieved_snr_db": rec.achieved_snr_db(),
                      "internal": str(out_dir / "internal.wav"), "external": str(out_dir / "external.wav")}))
    return EXIT_OK


def _synth_items(args, config):
    return dataset.synth_corpus(args.n_wheeze, args.n_normal, getattr(args, "duration", 4.0),
                                seed=config.factorization.seed)


def cmd_corpus(args, config):
    manifest = dataset.write_corpus(_synth_items(args, config), _out_dir(config))
    print(json.dumps({"manifest": str(manifest)}))
    return EXIT_OK


def cmd_sweep(args, config):
    corpus = args.manifest if args.manifest is not None else _synth_items(args, config)
    records = evaluation.run_snr_sweep(corpus, config, args.snr)
    out_dir = _out_dir(config)
    evaluation.write_csv(records, out_dir / "sweep.csv")
    evaluation.write_json(records, out_dir / "sweep.json")
    for r in evaluation.sweep_means(records).values():
        print(",".join(str(v) for v in r.row()))
    return EXIT_OK


def cmd_bench(args, config):
    records = evaluation.run_scaling_benchmark(args.durations, args.thread_counts, config,
                                               repeats=args.repeats, seed=config.factorization.seed)
    out_dir = _out_dir(config)
    evaluation.write_csv(records, out_dir / "bench.csv")
    evaluation.write_json(records, out_dir / "bench.json")
    return EXIT_OK


COMMANDS = {
    "detect": cmd_detect,
    "denoise": cmd_denoise,
    "mix": cmd_mix,
    "corpus": cmd_corpus,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        if getattr(args, "print_config", False):
            sys.stdout.write(config.dumps())
            return EXIT_OK
        if args.command is None:
            raise UsageError("a command is required (or --print-config)")
        return COMMANDS[args.command](args, config)
    except (UsageError, ConfigurationError) as exc:
        print(f"wheezenmf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"wheezenmf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, WavFormatError, InvalidInputError) as exc:
        print(f"wheezenmf: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
