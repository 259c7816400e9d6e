"""Build glue for the Python bindings: compiles the Rust extension crate
with cargo and ships the shared object as the top-level `steam_eval_py`
module. Use `pip install -e . --no-build-isolation` (setuptools only, no
extra build backends required)."""

import shutil
import subprocess
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = Path(__file__).resolve().parent


class CargoBuildExt(build_ext):
    def build_extension(self, ext):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "steam-eval-py"],
            check=True,
            cwd=ROOT,
        )
        release = ROOT / "target" / "release"
        for name in ("libsteam_eval_py.so", "libsteam_eval_py.dylib", "steam_eval_py.dll"):
            built = release / name
            if built.exists():
                break
        else:
            raise FileNotFoundError("cargo did not produce the steam_eval_py library")
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, dest)


setup(
    packages=[],
    ext_modules=[Extension("steam_eval_py", sources=[])],
    cmdclass={"build_ext": CargoBuildExt},
)
