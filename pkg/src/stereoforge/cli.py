"""Command-line interface: synth / train / convert / eval.

Exit codes: 0 success, 1 usage error (bad flags or config), 2 runtime
failure (missing files, malformed data, training aborts). Every failure
prints a one-line diagnostic to stderr. Given the same --seed and
inputs, every subcommand writes byte-identical artifacts.
"""

from __future__ import annotations

import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import configio
from .data import load_stereo_dir, parse_scene_spec, synth_dataset
from .evaluation import METHODS, compare
from .formats import anaglyph, side_by_side
from .imgio import bilinear_resize, read_image, write_image
from .network import build_network, synthesize_batches, upscale_full_res
from .training import load_checkpoint, network_from_checkpoint
from .training import train as run_training

_IMAGE_EXTS = (".png", ".ppm")


@click.group(name="stereoforge")
def cli():
    """2D-to-3D stereo view synthesis toolkit."""


def _read_config(path, sets):
    kv = {}
    if path is not None:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as fh:
            kv = configio.parse_kv(fh.read())
    try:
        return configio.apply_overrides(kv, sets)
    except ValueError as e:
        raise click.UsageError(str(e))


def _configs(kv):
    try:
        ncfg = configio.network_config_from(kv)
        tcfg = configio.train_config_from(kv)
        extras = configio.data_options_from(kv)
    except ValueError as e:
        raise click.UsageError(str(e))
    return ncfg, tcfg, extras


def _load_network(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    net, _vel = network_from_checkpoint(ckpt)
    return net


@cli.command()
@click.option("--spec", "spec_path", required=True, help="Scene spec file (key=value).")
@click.option("--out", "out_dir", required=True, help="Output dataset directory.")
@click.option("--count", default=8, show_default=True, help="Number of pairs.")
@click.option("--seed", default=None, type=int, help="Dataset seed (defaults to the spec's).")
def synth(spec_path, out_dir, count, seed):
    """Generate a synthetic stereo dataset with ground-truth disparity."""
    if count < 1:
        raise click.UsageError("--count must be >= 1")
    if not os.path.isfile(spec_path):
        raise FileNotFoundError(f"spec file not found: {spec_path}")
    with open(spec_path) as fh:
        try:
            scene = parse_scene_spec(fh.read())
        except ValueError as e:
            raise click.UsageError(f"bad scene spec: {e}")
    synth_dataset(scene, count, seed=scene.seed if seed is None else seed,
                  out_dir=out_dir)
    click.echo(f"wrote {count} pairs to {out_dir}")


@cli.command()
@click.option("--data", "data_dir", required=True, help="Training dataset directory.")
@click.option("--val", "val_dir", default=None, help="Validation dataset directory.")
@click.option("--config", "config_path", default=None, help="key=value config file.")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
              help="Override one config value (repeatable).")
@click.option("--out", "out_path", required=True, help="Checkpoint output path.")
@click.option("--seed", default=None, type=int, help="Override train.seed and network.seed.")
@click.option("--resume", "resume_path", default=None,
              help="Checkpoint to continue from.")
def train(data_dir, val_dir, config_path, sets, out_path, seed, resume_path):
    """Train a synthesizer; writes checkpoints and a CSV metric log."""
    kv = _read_config(config_path, list(sets))
    ncfg, tcfg, extras = _configs(kv)
    if seed is not None:
        ncfg = ncfg.with_options(seed=seed)
        tcfg = tcfg.with_options(seed=seed)
    dataset = load_stereo_dir(data_dir)
    val = load_stereo_dir(val_dir) if val_dir else None

    start = None
    if resume_path is not None:
        start = load_checkpoint(resume_path)
        net, _ = network_from_checkpoint(start)
        if net.config != ncfg:
            net_cfg_note = " (config taken from the checkpoint)"
            ncfg = net.config
        else:
            net_cfg_note = ""
        click.echo(f"resuming at iteration {start.iteration}{net_cfg_note}")
        net = build_network(ncfg)
    else:
        net = build_network(ncfg)

    parent = os.path.dirname(out_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    log_path = os.path.splitext(out_path)[0] + ".metrics.csv"
    ckpt, rows = run_training(net, dataset, tcfg, val_dataset=val,
                              checkpoint_path=out_path, log_path=log_path,
                              start_checkpoint=start, **extras)
    last = rows[-1] if rows else None
    if last is not None:
        click.echo(f"finished at iteration {ckpt.iteration}: "
                   f"train_loss={last[2]:.6f}")
    else:
        click.echo(f"finished at iteration {ckpt.iteration}")
    click.echo(f"checkpoint: {out_path}")
    click.echo(f"metrics: {log_path}")


def _input_images(path):
    if os.path.isdir(path):
        names = [n for n in sorted(os.listdir(path))
                 if os.path.splitext(n)[1].lower() in _IMAGE_EXTS]
        if not names:
            raise ValueError(f"no images found in {path}")
        return [os.path.join(path, n) for n in names]
    if not os.path.isfile(path):
        raise FileNotFoundError(f"input not found: {path}")
    return [path]


@cli.command()
@click.option("--input", "input_path", required=True,
              help="Left image or directory of left images.")
@click.option("--checkpoint", "ckpt_path", required=True, help="Trained checkpoint.")
@click.option("--format", "fmt", type=click.Choice(["anaglyph", "sbs", "pair"]),
              default="anaglyph", show_default=True)
@click.option("--out", "out_dir", required=True, help="Output directory.")
@click.option("--full-res", "full_res", default=1, show_default=True,
              help="Synthesize at k times the trained resolution.")
@click.option("--half-width", is_flag=True, help="Half-width side-by-side output.")
def convert(input_path, ckpt_path, fmt, out_dir, full_res, half_width):
    """Synthesize right views and write stereo-format images."""
    if full_res < 1:
        raise click.UsageError("--full-res must be >= 1")
    net = _load_network(ckpt_path)
    h, w = net.config.input_hw
    os.makedirs(out_dir, exist_ok=True)
    for path in _input_images(input_path):
        stem = os.path.splitext(os.path.basename(path))[0]
        left_full = read_image(path)
        lowres = bilinear_resize(left_full, (h, w))
        if full_res > 1:
            k = full_res
            hires = bilinear_resize(left_full, (k * h, k * w))
            _, vols = synthesize_batches(net, [lowres])
            if vols[0] is None:
                raise ValueError("--full-res needs a selection-head checkpoint")
            left_out = hires
            right_out = np.clip(upscale_full_res(vols[0], hires, k), 0.0, 1.0)
        else:
            outs, _ = synthesize_batches(net, [lowres])
            right = np.clip(outs[0], 0.0, 1.0)
            left_out = left_full
            right_out = bilinear_resize(right, left_full.shape[:2])
        if fmt == "anaglyph":
            write_image(os.path.join(out_dir, f"{stem}_anaglyph.png"),
                        anaglyph(left_out, right_out))
        elif fmt == "sbs":
            write_image(os.path.join(out_dir, f"{stem}_sbs.png"),
                        side_by_side(left_out, right_out, half_width=half_width))
        else:
            write_image(os.path.join(out_dir, f"{stem}_left.png"), left_out)
            write_image(os.path.join(out_dir, f"{stem}_right.png"), right_out)
    click.echo(f"wrote {fmt} output to {out_dir}")


@cli.command(name="eval")
@click.option("--data", "data_dir", required=True, help="Evaluation dataset directory.")
@click.option("--checkpoint", "ckpt_path", default=None, help="Trained checkpoint.")
@click.option("--regression-checkpoint", "reg_path", default=None,
              help="Checkpoint for the direct-regression ablation.")
@click.option("--methods", default="learned,global_disparity", show_default=True,
              help=f"Comma list from: {','.join(METHODS)}.")
@click.option("--report", "report_path", default=None, help="Write per-frame CSV here.")
def eval_cmd(data_dir, ckpt_path, reg_path, methods, report_path):
    """Compare synthesis methods on a dataset; prints a summary table."""
    wanted = [m.strip() for m in methods.split(",") if m.strip()]
    if not wanted:
        raise click.UsageError("--methods must name at least one method")
    for m in wanted:
        if m not in METHODS:
            raise click.UsageError(
                f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    dataset = load_stereo_dir(data_dir)
    net = _load_network(ckpt_path) if ckpt_path else None
    reg = _load_network(reg_path) if reg_path else None
    report = compare(dataset, wanted, net=net, regression_net=reg)
    if report_path is not None:
        with open(report_path, "w") as fh:
            fh.write(report.to_csv())
    click.echo(report.table())


def main(argv=None):
    """Run the CLI; returns the process exit code instead of raising."""
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.NoArgsIsHelpError as e:
        click.echo(e.format_message())
        return 0
    except click.UsageError as e:
        hint = e.format_message()
        click.echo(f"usage error: {hint}", err=True)
        return 1
    except click.ClickException as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return 2
    except (KeyboardInterrupt, BrokenPipeError):
        return 2
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        return 2


def entry():
    sys.exit(main())
