"""Command-line front end: a thin client over the harness.

Every subcommand maps onto one harness operation. Exit codes: 0 on
success, 1 for configuration problems, 2 when per-run failures were
recorded during an otherwise completed experiment.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .denoiser import save_mlp_denoiser
from .errors import DualinvError, ParameterError
from .inversion import reconstruct
from .metrics import noise_gap, psnr, recon_error
from .schedule import make_linear_schedule

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _config_from_args(args) -> harness.ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ParameterError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    return harness.load_config(args.config, overrides)


def _setup(config: harness.ExperimentConfig):
    schedule = make_linear_schedule(config.T, config.beta_start,
                                    config.beta_end)
    oracle = harness.make_mixture(config.dataset, schedule)
    return schedule, oracle


def cmd_synth(args) -> int:
    config = _config_from_args(args)
    schedule, oracle = _setup(config)
    instances = harness.synth_dataset(config.dataset, schedule, oracle,
                                      config.seed)
    payload = [{
        "index": inst.index,
        "label": inst.c.label,
        "z_T_star": inst.z_T_star.flat.tolist(),
        "z_0": inst.z_0.flat.tolist(),
    } for inst in instances]
    text = json.dumps(payload)
    if args.dataset_out:
        with open(args.dataset_out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {len(instances)} instances to {args.dataset_out}")
    else:
        print(text)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config_from_args(args)
    schedule, oracle = _setup(config)
    predictor = harness.train_predictor(config, schedule, oracle)
    save_mlp_denoiser(predictor, args.model_out)
    print(f"trained predictor saved to {args.model_out}")
    return EXIT_OK


def _single_run(args):
    config = _config_from_args(args)
    schedule, oracle = _setup(config)
    predictor = harness.resolve_denoiser(config, schedule, oracle)
    spec = config.dataset
    if not 0 <= args.instance < spec.instances:
        raise ParameterError(f"instance must be in [0, {spec.instances})")
    instance = harness.synth_dataset(spec, schedule, oracle,
                                     config.seed)[args.instance]
    z_T, report = harness.run_method(args.method, instance, schedule,
                                     predictor, config)
    return config, schedule, oracle, instance, z_T, report


def cmd_invert(args) -> int:
    _, _, _, instance, z_T, report = _single_run(args)
    text = report.to_json()
    if args.report_out:
        with open(args.report_out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    gap = noise_gap(z_T, instance.z_T_star)
    print(f"method={args.method} instance={args.instance} d_noi={gap:.6g} "
          f"iterations={report.total_iterations()}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    config, schedule, oracle, instance, z_T, _ = _single_run(args)
    z_hat = reconstruct(z_T, schedule, oracle, instance.c,
                        config.inversion.cfg_scale)
    print(f"method={args.method} instance={args.instance} "
          f"d_rec={recon_error(instance.z_0, z_hat):.6g} "
          f"psnr={psnr(instance.z_0, z_hat):.4f}")
    return EXIT_OK


def cmd_edit(args) -> int:
    config = _config_from_args(args)
    fraction = harness.run_edit_demo(trials=args.trials, seed=config.seed,
                                     config=config.inversion)
    print(f"edit demo: target-side landings {fraction:.0%} of {args.trials} trials")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _config_from_args(args)
    _, summary, errors = harness.run_experiment(config)
    for method, entry in summary["methods"].items():
        print(f"{method}: median d_noi={entry['d_noi']['median']:.6g} "
              f"median d_rec={entry['d_rec']['median']:.6g}")
    print(f"results under {config.output_dir} "
          f"(config {summary['config_hash']}, {len(errors)} errors)")
    return EXIT_RUNTIME if errors else EXIT_OK


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    table = harness.run_sweep(config)
    failures = 0
    for row in table:
        print(f"{config.sweep_param}={row['value']:g}: "
              f"median d_rec={row['median_d_rec']:.6g} "
              f"median d_noi={row['median_d_noi']:.6g}")
        failures += row["errors"]
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_plot(args) -> int:
    written = harness.emit_plots(args.results_dir)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    path = os.path.join(args.results_dir, "summary.json")
    with open(path, "r", encoding="utf-8") as fh:
        print(fh.read().rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualinv",
        description="Desk-scale diffusion-inversion experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="synthesize a dataset")
    common(p)
    p.add_argument("--dataset-out", help="write instances to this JSON file")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train the network predictor")
    common(p)
    p.add_argument("model_out", help="path for the saved model JSON")
    p.set_defaults(fn=cmd_train)

    for name, fn in (("invert", cmd_invert), ("reconstruct", cmd_reconstruct)):
        p = sub.add_parser(name, help=f"{name} one instance with one method")
        common(p)
        p.add_argument("--method", default="dci", choices=harness.METHODS)
        p.add_argument("--instance", type=int, default=0)
        if name == "invert":
            p.add_argument("--report-out", help="write the full report JSON")
        p.set_defaults(fn=fn)

    p = sub.add_parser("edit", help="run the condition-swap editing demo")
    common(p)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(fn=cmd_edit)

    p = sub.add_parser("run", help="run the full experiment")
    common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="run an ablation sweep")
    common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("plot", help="emit plots from persisted results")
    p.add_argument("results_dir")
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("report", help="print a persisted summary")
    p.add_argument("results_dir")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParameterError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DualinvError as exc:
        print(f"run-time failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
