from pathlib import Path

from tactile_recon.models import NoiseSpec, PipelineConfig, SurfaceDescriptor
from tactile_recon.pipeline import cmd_pipeline
from tactile_recon.surfaces import BUILTIN_SURFACES


def main():
    # Change the noise levels or the normal source here to reproduce other rows
    output_dir = Path("runs") / "builtin_surfaces"
    config = PipelineConfig(
        surfaces=[SurfaceDescriptor(kind="builtin", name=name) for name in sorted(BUILTIN_SURFACES)],
        spacing=20.0,
        noise=NoiseSpec(),
        normal_source="oracle",
        density=20,
        output_dir=output_dir,
    )

    print(f"Starting five-surface run into {output_dir}")
    cmd_pipeline(config, pdf=output_dir / "report.pdf")


if __name__ == "__main__":
    main()
