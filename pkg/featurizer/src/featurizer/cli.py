"""``featurize`` command-line entry point."""

from __future__ import annotations

import logging
import sys

import click

from .export import ExportError, load_manifest, run_export


@click.command("featurize")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Input manifest (JSON).")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output dataset root.")
@click.option("--jobs", default=1, show_default=True,
              help="Parallel file-export workers.")
def featurize(manifest_path, out_dir, jobs):
    """Export manifest sources into the TensorPack dataset layout."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    job = load_manifest(manifest_path)
    job.jobs = jobs
    written = run_export(job, out_dir)
    click.echo(f"wrote {len(written)} files under {out_dir}")


def main(argv=None) -> int:
    try:
        featurize.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except (ExportError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
