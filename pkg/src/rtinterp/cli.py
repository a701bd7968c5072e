"""Command-line front end: ``rti generate | train | eval | reconstruct | serve``.

Exit codes: 0 success, 2 invalid input, 3 file or IO error, 4 numerical failure.
"""
from __future__ import annotations

import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .batchref import batch_interpolate
from .core import NumericalError, RtiError, SplineConfig, ValidationError
from .datagen import load_dataset, save_dataset, build_dataset
from .policy import MyopicParams, params_to_dict
from .runner import StreamingReconstructor, load_policy
from .train import TrainConfig, evaluate, improvement, train as run_training

EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 2, 3, 4
SUMMARY_COLUMNS = ("policy", "loss_mean", "loss_std", "improvement_pct", "improvement_err")


def _versions() -> dict:
    return {"rtinterp": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out_dir: Path, command: str, config: dict, artifacts: list, started: float, **extra) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seeds": {k: v for k, v in config.items() if "seed" in k},
        "artifacts": sorted(artifacts),
        "versions": _versions(),
        "wall_time": round(time.perf_counter() - started, 6),
    }
    manifest.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


class RtiGroup(click.Group):
    """Maps package exceptions onto the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.ClickException, click.exceptions.Abort):
            raise
        except NumericalError as exc:
            self._fail(exc, EXIT_NUMERICAL)
        except ArithmeticError as exc:
            self._fail(exc, EXIT_NUMERICAL)
        except (RtiError, ValueError, KeyError) as exc:
            self._fail(exc, EXIT_VALIDATION)
        except OSError as exc:
            self._fail(exc, EXIT_IO)

    @staticmethod
    def _fail(exc, code):
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(code)


@click.group(cls=RtiGroup)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Real-time consistent interpolation of interval time series."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command()
@click.option("--source", type=click.Choice(["s1", "s2"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--eps", type=float, default=0.1, show_default=True, help="Quantizer half-step (s1).")
@click.option("--comp-dev", type=float, default=0.1, show_default=True, help="Compression deviation (s2).")
def generate(source, seed, out_dir, eps, comp_dev):
    """Generate a synthetic train/val/test dataset."""
    started = time.perf_counter()
    split = build_dataset(source, seed, eps=eps, comp_dev=comp_dev)
    desc = save_dataset(split, out_dir)
    config = {"source": source, "seed": seed, "eps": eps, "comp_dev": comp_dev}
    write_manifest(out_dir, "generate", config, list(desc["files"].values()), started, dataset=desc)
    click.echo(f"wrote {out_dir}")


@main.command()
@click.option("--data", "data_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--policy", "kind", type=click.Choice(["myopic", "parametrized", "rnn"]), required=True)
@click.option("--d", "order", type=int, default=3, show_default=True)
@click.option("--phi", type=int, default=1, show_default=True)
@click.option("--epochs", type=int, default=None, help="Default: 200 parametrized, 400 rnn.")
@click.option("--lr", type=float, default=None, help="Default: 0.05 parametrized, 0.005 rnn.")
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def train(data_dir, kind, order, phi, epochs, lr, batch_size, seed, out_dir):
    """Train a policy and write its best checkpoint and a per-epoch report."""
    started = time.perf_counter()
    cfg = SplineConfig(order, phi)
    tcfg = TrainConfig(kind, cfg, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
    split = load_dataset(data_dir)
    progress = (lambda r: click.echo(f"epoch {r.epoch} train {r.train_mean:.4f} val {r.val_mean:.4f}", err=True))
    params, report = run_training(split.train, split.val, tcfg, progress=progress)
    out_dir.mkdir(parents=True, exist_ok=True)
    st = {"mean": split.stats.mean, "std": split.stats.std}
    doc = params_to_dict(cfg, params, standardization=st, best_epoch=report.best_epoch,
                         best_val=report.best_val)
    with open(out_dir / "checkpoint.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    report.write_csv(out_dir / "report.csv")
    config = {"data": str(data_dir), "policy": kind, "d": order, "phi": phi, "epochs": tcfg.n_epochs,
              "lr": tcfg.base_lr, "batch_size": batch_size, "seed": seed}
    write_manifest(out_dir, "train", config, ["checkpoint.json", "report.csv"], started,
                   best_epoch=report.best_epoch)
    click.echo(f"best epoch {report.best_epoch} validation loss {report.best_val:.6f}")


@main.command("eval")
@click.option("--data", "data_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--checkpoint", "checkpoints", type=click.Path(dir_okay=False, path_type=Path),
              multiple=True, required=True, help="Repeat to compare several policies.")
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test"]), default="test", show_default=True)
@click.option("--with-batch", is_flag=True, help="Add a row for the batch baseline.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def eval_cmd(data_dir, checkpoints, split_name, with_batch, out_dir):
    """Evaluate checkpoints against the myopic benchmark and the batch baseline."""
    started = time.perf_counter()
    split = load_dataset(data_dir)
    seqs, ids = split.part(split_name), split.ids(split_name)
    policies = [(Path(p).stem, *load_policy(p)[:2]) for p in checkpoints]
    cfg0 = policies[0][1]
    if any(p[1] != cfg0 for p in policies):
        raise ValidationError("all checkpoints must share the same spline configuration")
    myopic = evaluate(seqs, cfg0, MyopicParams())
    batch_losses = np.array([batch_interpolate(s).loss for s in seqs])
    batch_mean = float(np.mean(batch_losses))
    batch_std = float(np.std(batch_losses, ddof=1)) if len(seqs) > 1 else 0.0

    rows, per_seq = [], [("myopic", myopic.losses)]
    for name, cfg, params in policies:
        res = myopic if params.kind == "myopic" else evaluate(seqs, cfg, params)
        label = params.kind if len(policies) == 1 else f"{params.kind}:{name}"
        pct, err = improvement(res.mean, myopic.mean, batch_mean, res.std, myopic.std, batch_std)
        rows.append((label, res.mean, res.std, pct, err))
        if params.kind != "myopic":
            per_seq.append((label, res.losses))
    if not any(p[2].kind == "myopic" for p in policies):
        rows.insert(0, ("myopic", myopic.mean, myopic.std, 0.0, 0.0))
    if with_batch:
        rows.append(("batch", batch_mean, batch_std, 100.0, None))
        per_seq.append(("batch", batch_losses))

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for label, mean, std, pct, err in rows:
            w.writerow((label, _fmt(mean), _fmt(std), _fmt(pct), _fmt(err)))
    with open(out_dir / "per_sequence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("policy", "seq_id", "loss"))
        for label, losses in per_seq:
            for sid, loss in zip(ids or range(len(seqs)), losses):
                w.writerow((label, sid, _fmt(loss)))
    config = {"data": str(data_dir), "checkpoints": [str(p) for p in checkpoints], "split": split_name,
              "with_batch": with_batch}
    write_manifest(out_dir, "eval", config, ["summary.csv", "per_sequence.csv"], started)
    for label, mean, std, pct, err in rows:
        tail = "" if err is None else f"  improvement {pct:.1f}% +- {err:.1f}%"
        click.echo(f"{label:<16} {mean:.4f} +- {std:.4f}{tail}")


def _read_intervals(path: Path, seq_id):
    """Yield ``(x, y, eps)`` rows lazily; dataset files are filtered by ``seq_id``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"x", "y", "eps"} <= cols:
            raise ValidationError(f"{path}: expected columns x, y, eps")
        has_id = "seq_id" in cols
        first_id = None
        for row in reader:
            if has_id:
                sid = row["seq_id"]
                if seq_id is not None:
                    if sid != str(seq_id):
                        continue
                elif first_id is None:
                    first_id = sid
                elif sid != first_id:
                    break
            yield float(row["x"]), float(row["y"]), float(row["eps"])


@main.command()
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--input", "input_path", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="CSV with columns x,y,eps (a dataset file is accepted; see --seq-id).")
@click.option("--samples-per-section", "k", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--seq-id", default=None, help="Sequence to take from a dataset file (default: the first).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
def reconstruct(checkpoint, input_path, k, seq_id, out_path):
    """Stream intervals through a policy and write dense samples of the spline.

    Each section contributes K samples ending at its right knot, so K=1
    emits the knots only. A companion ``*_sections.csv`` holds the section
    coefficients in the local basis of each section's left knot.
    """
    started = time.perf_counter()
    cfg, params, stats = load_policy(checkpoint)
    rec = StreamingReconstructor(cfg, params, stats)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    sections_path = out_path.with_name(out_path.stem + "_sections.csv")
    deriv_cols = [f"df{j}" for j in range(1, cfg.phi + 1)]
    frac = np.arange(1, k + 1) / k
    with open(out_path, "w", newline="") as fo, open(sections_path, "w", newline="") as fs:
        wo = csv.writer(fo, lineterminator="\n")
        ws = csv.writer(fs, lineterminator="\n")
        wo.writerow(["x", "f", *deriv_cols])
        ws.writerow(["section", "x_start", "x_end", *[f"a{i}" for i in range(cfg.n_coeffs)]])
        for x, y, eps in _read_intervals(input_path, seq_id):
            sec = rec.push(x, y, eps)
            if sec is None:
                continue
            u = sec.x_end - sec.x_start
            xs = sec.x_start + frac * u
            xs[-1] = sec.x_end
            if sec.index == 0:
                xs = np.concatenate([[sec.x_start], xs])
            vals = sec.derivatives(xs, cfg.phi, cfg.d)
            for xv, row in zip(xs, vals):
                wo.writerow([repr(float(xv)), *map(_fmt, row)])
            ws.writerow([sec.index, repr(sec.x_start), repr(sec.x_end), *map(_fmt, sec.coeffs)])
    if rec.n_sections == 0:
        raise ValidationError("need at least two intervals to reconstruct a section")
    config = {"checkpoint": str(checkpoint), "input": str(input_path), "samples_per_section": k,
              "seq_id": seq_id}
    write_manifest(out_path.parent, "reconstruct", config, [out_path.name, sections_path.name], started,
                   n_sections=rec.n_sections)
    click.echo(f"wrote {rec.n_sections} sections to {out_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP streaming service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":  # pragma: no cover
    main()
