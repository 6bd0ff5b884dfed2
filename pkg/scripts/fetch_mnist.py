"""Download the four classic MNIST IDX files used by the digits benchmarks.

Grabs the gzipped archives from a public mirror, checks their MD5 digests,
and unpacks them into ``data/mnist/`` (or ``--dest``).  The digit tests in
``tests/test_acceptance.py`` look for the unpacked files there, or wherever
``PULSE_MNIST_DIR`` points.

Usage::

    python3 scripts/fetch_mnist.py [--dest DIR] [--base-url URL] [--force]
"""

import argparse
import gzip
import hashlib
import sys
import urllib.request
from pathlib import Path

DEFAULT_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"

# (file name, MD5 of the gzipped archive)
ARCHIVES = (
    ("train-images-idx3-ubyte", "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
    ("train-labels-idx1-ubyte", "d53e105ee54ea40749a09fcbcd1e9432"),
    ("t10k-images-idx3-ubyte", "9fb629c4189551a2d022fa330f9573f3"),
    ("t10k-labels-idx1-ubyte", "ec29112dd5afa0611ce80d1b7f02629c"),
)


def fetch_one(base_url, name, md5, dest_dir, force):
    target = dest_dir / name
    if target.exists() and not force:
        print(f"  {name}: already present, skipping (use --force to refetch)")
        return
    url = base_url + name + ".gz"
    print(f"  {name}: downloading {url}")
    with urllib.request.urlopen(url) as response:
        blob = response.read()
    digest = hashlib.md5(blob).hexdigest()
    if digest != md5:
        raise SystemExit(f"{name}.gz: MD5 mismatch (got {digest}, want {md5})")
    target.write_bytes(gzip.decompress(blob))
    print(f"  {name}: {target.stat().st_size} bytes written")


def verify(dest_dir):
    try:
        from pulse import load_idx
    except ImportError:
        print("pulse is not installed; skipping the load check")
        return
    for img, lab in (ARCHIVES[0][0], ARCHIVES[1][0]), (ARCHIVES[2][0], ARCHIVES[3][0]):
        ds = load_idx(dest_dir / img, dest_dir / lab)
        print(f"  {img}: {ds.n} images x {ds.dim} pixels, labels 0-9 ok")


def main(argv=None):
    repo_root = Path(__file__).resolve().parents[1]
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dest", default=str(repo_root / "data" / "mnist"),
                        help="directory for the unpacked IDX files")
    parser.add_argument("--base-url", default=DEFAULT_BASE_URL,
                        help="mirror serving the .gz archives")
    parser.add_argument("--force", action="store_true",
                        help="refetch files that already exist")
    args = parser.parse_args(argv)

    dest_dir = Path(args.dest)
    dest_dir.mkdir(parents=True, exist_ok=True)
    print(f"fetching into {dest_dir}")
    for name, md5 in ARCHIVES:
        fetch_one(args.base_url, name, md5, dest_dir, args.force)
    verify(dest_dir)
    print("done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
