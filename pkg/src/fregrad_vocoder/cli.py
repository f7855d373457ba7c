#!/usr/bin/env python3
"""
Command-line interface for the FreGrad vocoder

Commands for training, sampling, evaluating generated audio, inspecting
the noise schedule and reporting model size and speed.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import dataclasses
import functools
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np
from colorama import Fore, Style

from . import __version__
from .checkpoint import check_compatible, load_checkpoint
from .config import RunConfig, dump_config, load_config
from .container import read_matrix
from .dataset import AudioDataset
from .diffusion import sample
from .dsp import MelSpectrogram, Waveform, mel_spectrogram, read_wav, write_wav
from .errors import ConfigError, FreGradError
from .metrics import evaluate_pair, measure_rtf, write_metrics_csv
from .model import FreGrad
from .schedule import write_schedule_csv
from .trainer import LossCsvWriter, Trainer, apply_numerics

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _fail(message: str, code: int) -> None:
    click.echo(f"{Fore.RED}Error:{Style.RESET_ALL} {message}", err=True)
    sys.exit(code)


def report_errors(func):
    """Turn package errors into a red Error: line and the matching exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as e:
            _fail(str(e), 2)
        except (FreGradError, OSError, ValueError) as e:
            _fail(str(e), 1)

    return wrapper


def _with_overrides(config: RunConfig, seed=None, steps=None) -> RunConfig:
    training = config.training
    if seed is not None:
        training = dataclasses.replace(training, seed=seed)
    if steps is not None:
        training = dataclasses.replace(training, max_steps=steps)
    return dataclasses.replace(config, training=training)


def _load_mel(path: Path, config: RunConfig) -> MelSpectrogram:
    """A mel from a WAV file (computed) or an FGR1 matrix ([N, 80] or [80, N])."""
    data = config.data
    if path.suffix.lower() == ".wav":
        waveform = read_wav(path)
        if waveform.sample_rate != data.sample_rate:
            raise ConfigError(
                f"{path}: sample rate {waveform.sample_rate} Hz does not match "
                f"data.sample_rate {data.sample_rate} Hz"
            )
        return mel_spectrogram(
            waveform, data.sample_rate, data.n_fft, data.hop_length, data.n_mels, data.fmin, data.fmax
        )
    frames = read_matrix(path)
    if frames.shape[1] != data.n_mels and frames.shape[0] == data.n_mels:
        frames = frames.T
    if frames.shape[1] != data.n_mels:
        raise ConfigError(f"{path}: mel matrix has shape {frames.shape}, expected [N, {data.n_mels}]")
    return MelSpectrogram(frames, data.hop_length, data.sample_rate)


# Set up the main CLI group
@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging")
@click.version_option(version=__version__)
def cli(verbose):
    """
    FreGrad - a wavelet-domain diffusion vocoder.

    Train on a directory of 16-bit mono WAV files, synthesize audio from
    mel-spectrograms, and score generated audio against references.
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True
    )


# Train command
@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="YAML or JSON run config")
@click.option("--seed", type=int, help="Override training.seed")
@click.option("--out", "out_dir", type=click.Path(), default="runs/fregrad", show_default=True)
@click.option("--steps", type=int, help="Override training.max_steps")
@click.option("--ckpt", type=click.Path(exists=True), help="Checkpoint to resume from")
@report_errors
def train(config_path, seed, out_dir, steps, ckpt):
    """
    Train a model, writing checkpoints and a per-step loss CSV to --out.

    Resuming with --ckpt continues bit-exactly where the checkpoint left off.
    Without --config, a resumed run takes the config stored in the checkpoint.
    """
    checkpoint = load_checkpoint(ckpt) if ckpt else None
    if config_path is None and checkpoint is not None:
        base = checkpoint.config
    else:
        base = load_config(config_path)
    config = _with_overrides(base, seed, steps)
    dataset = AudioDataset(config.data)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if checkpoint is not None:
        trainer = Trainer.from_checkpoint(checkpoint, config, dataset, out)
    else:
        trainer = Trainer(config, dataset, out)
    dump_config(config, out / "config.yaml")
    trainer.add_event_listener(LossCsvWriter(out / "loss.csv"))

    summary = trainer.run()
    click.echo(f"Trained steps {summary.start_step}..{summary.end_step}")
    if summary.losses:
        click.echo(f"L_final: {summary.first_loss:.6f} -> {summary.last_loss:.6f}")
    click.echo(f"Checkpoint: {summary.last_checkpoint}")


# Sample command
@cli.command("sample")
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--ckpt", type=click.Path(exists=True), required=True, help="Trained checkpoint")
@click.option("--config", "config_path", type=click.Path(), help="Run config to check against the checkpoint")
@click.option("--out", "out_dir", type=click.Path(), default="samples", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, help="Number of reverse steps (schedule rebuilt from config bounds)")
@click.option("--trace-dir", type=click.Path(), help="Dump every intermediate x_t as FGR1 matrices")
@report_errors
def sample_command(inputs, ckpt, config_path, out_dir, seed, steps, trace_dir):
    """
    Synthesize a WAV for each input (.wav or an FGR1 mel matrix).

    Prints the real-time factor of every file.
    """
    checkpoint = load_checkpoint(ckpt)
    config = checkpoint.config
    if config_path:
        requested = load_config(config_path)
        check_compatible(checkpoint.config, requested)
        config = requested
    apply_numerics(config)
    model = FreGrad(config.model, np.random.default_rng(0), config.ablations.freq_dconv)
    model.load_state_dict(checkpoint.params)
    schedule = config.build_schedule(steps)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in inputs:
        path = Path(name)
        mel = _load_mel(path, config)
        trace = Path(trace_dir) / path.stem if trace_dir else None
        start = time.perf_counter()
        waveform = sample(
            model,
            mel,
            schedule,
            np.random.default_rng(seed),
            separate_prior=config.ablations.separate_prior,
            sigma_min=config.data.sigma_min,
            trace_dir=trace,
        )
        elapsed = time.perf_counter() - start
        target = out / f"{path.stem}.wav"
        write_wav(target, waveform)
        click.echo(f"{target}: {len(waveform)} samples, RTF {elapsed / waveform.duration:.3f}")


# Evaluate command
@cli.command()
@click.argument("ref_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("gen_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_file", type=click.Path(), help="CSV path (default: stdout)")
@report_errors
def evaluate(ref_dir, gen_dir, out_file):
    """
    Score generated WAVs against references with the same file names.

    CSV columns: file, mae, mr_stft, mcd13, rmse_f0, rtf, then a mean row.
    rmse_f0 is blank where no frame is voiced in both files.
    """
    refs = {p.name: p for p in sorted(Path(ref_dir).glob("*.wav"))}
    gens = {p.name: p for p in sorted(Path(gen_dir).glob("*.wav"))}
    unmatched = sorted(set(refs) ^ set(gens))
    if unmatched:
        raise FreGradError("Unmatched files: " + ", ".join(unmatched))
    if not refs:
        raise FreGradError(f"No .wav files in {ref_dir}")

    rows = []
    for name in sorted(refs):
        rows.append((name, evaluate_pair(read_wav(refs[name]), read_wav(gens[name]))))
        logger.debug(f"Scored {name}")
    if out_file:
        with open(out_file, "w", newline="", encoding="utf-8") as f:
            write_metrics_csv(rows, f)
        click.echo(f"Metrics for {len(rows)} files saved to {out_file}")
    else:
        click.echo(write_metrics_csv(rows), nl=False)


# Schedule inspection command
@cli.command("schedule-inspect")
@click.option("--config", "config_path", type=click.Path(), help="YAML or JSON run config")
@click.option("--steps", type=int, help="Override schedule.T")
@click.option("--tau", type=float, help="Override schedule.tau")
@click.option("--beta-start", type=float, help="Override schedule.beta_start")
@click.option("--beta-end", type=float, help="Override schedule.beta_end")
@click.option("--out", "out_file", type=click.Path(), help="CSV path (default: stdout)")
@report_errors
def schedule_inspect(config_path, steps, tau, beta_start, beta_end, out_file):
    """
    Print the per-step noise schedule and the terminal SNR before and after rescaling.
    """
    config = load_config(config_path)
    overrides = {
        k: v
        for k, v in (("T", steps), ("tau", tau), ("beta_start", beta_start), ("beta_end", beta_end))
        if v is not None
    }
    try:
        schedule = dataclasses.replace(config.schedule, **overrides).build(config.ablations.zero_snr)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    if out_file:
        with open(out_file, "w", newline="", encoding="utf-8") as f:
            write_schedule_csv(schedule, f)
        click.echo(f"Schedule ({schedule.T} steps) saved to {out_file}")
    else:
        click.echo(write_schedule_csv(schedule), nl=False)

    before, after = schedule.terminal_snr()
    click.echo(f"Terminal SNR before rescale: {before:.6e}", err=not out_file)
    click.echo(f"Terminal SNR after rescale:  {after:.6e}", err=not out_file)


# Info command
@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="YAML or JSON run config")
@click.option("--rtf", is_flag=True, help="Also time sampling of one second of audio")
@click.option("--seed", type=int, default=0, show_default=True)
@report_errors
def info(config_path, rtf, seed):
    """
    Show the parameter count per component and the ablation flags.
    """
    config = load_config(config_path)
    apply_numerics(config)
    rng = np.random.default_rng(seed)
    model = FreGrad(config.model, rng, config.ablations.freq_dconv)

    click.echo(f"Parameters: {model.num_parameters():,}")
    for component, count in model.parameter_counts().items():
        click.echo(f"  {component:<22}{count:>12,}")
    click.echo("Ablations:")
    for flag, enabled in dataclasses.asdict(config.ablations).items():
        state = f"{Fore.GREEN}on{Style.RESET_ALL}" if enabled else f"{Fore.YELLOW}off{Style.RESET_ALL}"
        click.echo(f"  {flag:<22}{state}")

    if rtf:
        data = config.data
        frames = max(1, round(data.sample_rate / data.hop_length))
        mel = MelSpectrogram(
            rng.standard_normal((frames, data.n_mels)) - 4.0, data.hop_length, data.sample_rate
        )
        schedule = config.build_schedule()
        duration = frames * data.hop_length / data.sample_rate
        report = measure_rtf(
            lambda: sample(model, mel, schedule, np.random.default_rng(seed)), duration
        )
        click.echo(str(report))


def main():
    """Entry point for the CLI."""
    cli()


if __name__ == "__main__":
    main()
