"""Build a mesh for every registry function and write one SVG per function.

    python demos/mesh_gallery.py [N] [outdir]
"""
import sys
from pathlib import Path

from anisomesh.export import mesh_svg
from anisomesh.functions import REGISTRY, get_function
from anisomesh.mesher import BuildParams, build


def main(N=1024, outdir="gallery"):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(REGISTRY):
        tri = build(get_function(name), BuildParams(N))
        (out / f"{name}.svg").write_text(mesh_svg(tri.mesh))
        s = tri.summary()
        print(f"{name:22s} m={s['m']:2d} triangles={s['triangles']:5d} "
              f"cells={s['cells_by_group']} conformity={s['conformity']}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 1024, args[1] if len(args) > 1 else "gallery")
