import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "backend"))

from app.cli.runner import run  # noqa: E402


def main() -> int:
    return run()


if __name__ == "__main__":
    sys.exit(main())
