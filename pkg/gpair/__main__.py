# -*- coding: utf-8 -*-

import sys

from gpair.cli import cli_main

if __name__ == "__main__":
    sys.exit(cli_main())
