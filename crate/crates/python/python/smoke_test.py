"""Build the extension module and exercise it from Python.

    python3 crates/python/python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def build(target: Path) -> None:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "reading-entropy-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libreading_entropy_py.so"
    shutil.copy(lib, target / "reading_entropy_py.so")


def main() -> int:
    work = Path(tempfile.mkdtemp())
    build(work)
    sys.path.insert(0, str(work))
    import reading_entropy_py as re

    assert abs(re.renyi_entropy([0.5, 0.25, 0.25], 1.0) - 1.5) < 1e-12
    assert abs(re.renyi_entropy([0.5, 0.5], math.inf) - 1.0) < 1e-12
    assert abs(re.preprocessing_effort_total([0.2, 0.3, 0.5], 2.5) - 1.0) < 1e-12
    assert re.permutation_test([1.0, 1.0, 1.0]) == 0.25
    _, rejected = re.bh_adjust([0.01, 0.02, 0.03, 0.04])
    assert rejected == [True] * 4
    try:
        re.renyi_entropy([0.5, 0.6], 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("unnormalized distribution accepted")

    paths = re.generate_synthetic(str(work / "data"), seed=1, words=2000)
    words = re.word_information(paths["fulldist"], alphas=[0.5, 1.0])
    print(f"{len(words)} words, first: {words[0]}")

    config = work / "data" / "config.json"
    config.write_text(
        '{"datasets": [{"name": "syn", "corpus": "corpus.tsv", "format": "eye-tracking",'
        ' "distributions": {"fulldist": "dists.rtd"}, "frequencies": "freq.tsv"}],'
        ' "alphas": [0.5, 1], "experiments": ["exp1", "exp3-add"], "permutations": 2000,'
        ' "output_dir": "out"}'
    )
    for row in re.run_experiment(str(config), "exp1"):
        print(f"{row['label']:>14}  dllh x100 {100 * row['delta_llh']:8.3f}  p {row['p_value']:.4f}  {row['significance']}")
    written = re.run_pipeline(str(config))
    print("wrote", ", ".join(Path(p).name for p in written))
    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
