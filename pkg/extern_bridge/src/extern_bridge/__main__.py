"""Run the mock adapter on stdio: `python -m extern_bridge`."""

import sys

from .mock import MockAdapter
from .protocol import serve


def main(argv=None) -> int:
    return serve(MockAdapter())


if __name__ == "__main__":
    sys.exit(main())
