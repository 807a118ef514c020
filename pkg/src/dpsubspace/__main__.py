import sys

from dpsubspace.cli import main

sys.exit(main())
