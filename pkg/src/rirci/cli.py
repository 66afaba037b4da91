"""Command-line interface.

Dataset synthesis, training and evaluation run in-process; ``remove`` can
either run locally from a checkpoint or act as a thin client against a
running service (``--server``).
"""

from __future__ import annotations

import base64
import json
import sys

import click

from . import synthesis
from .config import load_config
from .evaluate import evaluate as run_evaluate
from .infer import remove_watermark
from .selftest import run_selftest


@click.group()
def main():
    """Visible watermark removal toolkit."""


@main.command()
@click.option("--backgrounds", required=True, type=click.Path(exists=True))
@click.option("--watermarks", required=True, type=click.Path(exists=True))
@click.option("--count", required=True, type=int)
@click.option("--opacity-low", default=0.5, show_default=True)
@click.option("--opacity-high", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--canvas", default=256, show_default=True)
@click.option("--split", default="train", show_default=True)
def synthesize(backgrounds, watermarks, count, opacity_low, opacity_high,
               seed, out, canvas, split):
    """Generate a synthetic watermarked dataset plus manifest."""
    cfg = synthesis.SynthesisConfig(
        canvas=(canvas, canvas), opacity_range=(opacity_low, opacity_high),
        count=count, seed=seed, split=split)
    manifest = synthesis.generate_dataset(backgrounds, watermarks, cfg, out)
    click.echo(json.dumps({"out": out, "counts": manifest.counts,
                           "seed": manifest.rng_seed}))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--manifest", type=click.Path())
@click.option("--out-dir", type=click.Path())
@click.option("--epochs", type=int)
@click.option("--batch-size", type=int)
@click.option("--learning-rate", "--lr", type=float)
@click.option("--seed", type=int)
@click.option("--variant", type=click.IntRange(0, 4))
@click.option("--max-steps", type=int)
@click.option("--two-phase", is_flag=True, default=None)
def train(config_path, **overrides):
    """Train the two-stage model from a dataset manifest."""
    from .train import train as run_train
    cfg = load_config(config_path, overrides=overrides)
    record, best = run_train(cfg)
    last = record.steps[-1] if record.steps else {}
    click.echo(json.dumps({"best_checkpoint": str(best),
                           "steps": len(record.steps),
                           "final_loss": last.get("L")}))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True)
@click.option("--buckets", is_flag=True, help="add the opacity-bucketed PSNR table")
@click.option("--oracle", "oracle_mode", is_flag=True,
              help="score ground truth against itself (sanity mode)")
@click.option("--out", "out_dir", type=click.Path(), default=None)
def evaluate(checkpoint, manifest, split, buckets, oracle_mode, out_dir):
    """Evaluate a checkpoint on a manifest split."""
    report, _ = run_evaluate(checkpoint, manifest, split=split, out_dir=out_dir,
                             buckets=buckets, oracle_mode=oracle_mode)
    click.echo(json.dumps(report.to_dict(), indent=2))


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--dump-intermediates", is_flag=True)
@click.option("--server", default=None, help="URL of a running rirci service; "
              "the command then acts as a thin HTTP client")
def remove(checkpoint, input_path, output_path, dump_intermediates, server):
    """Remove the watermark from one image."""
    if server is not None:
        import httpx
        payload = {
            "image_b64": base64.b64encode(open(input_path, "rb").read()).decode(),
            "dump_intermediates": dump_intermediates,
        }
        resp = httpx.post(f"{server.rstrip('/')}/remove", json=payload,
                          timeout=300.0)
        resp.raise_for_status()
        body = resp.json()
        with open(output_path, "wb") as fh:
            fh.write(base64.b64decode(body["image_b64"]))
        if dump_intermediates and body.get("intermediates_b64"):
            root = output_path.rsplit(".", 1)[0]
            for name, b64 in body["intermediates_b64"].items():
                with open(f"{root}_{name}.png", "wb") as fh:
                    fh.write(base64.b64decode(b64))
        return
    if checkpoint is None:
        raise click.UsageError("--checkpoint is required without --server")
    remove_watermark(checkpoint, input_path, output_path,
                     dump_intermediates=dump_intermediates)
    click.echo(output_path)


@main.command()
@click.option("--seed", default=0, show_default=True)
def selftest(seed):
    """Run the built-in oracle and property checks."""
    sys.exit(0 if run_selftest(seed) else 1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
def serve(host, port, checkpoint):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(checkpoint), host=host, port=port)


if __name__ == "__main__":
    main()
