"""Regenerate the counts recorded in a manifest and compare the binary hash.

Usage:
  python scripts/verify_manifest.py out/simulate/manifest.json
"""

import sys
from pathlib import Path

from loguru import logger

from fibertwin.errors import TwinError
from fibertwin.utils.manifest import load_manifest, verify_binary


def main(argv: list[str]) -> int:
    if len(argv) != 1:
        logger.error("usage: verify_manifest.py MANIFEST")
        return 2
    path = Path(argv[0])
    try:
        manifest = load_manifest(path)
        matches = verify_binary(manifest)
    except (OSError, TwinError) as e:
        logger.error(f"{path}: {e}")
        return 1
    logger.info(f"{path}: {'reproduced bit for bit' if matches else 'MISMATCH'}")
    return 0 if matches else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
