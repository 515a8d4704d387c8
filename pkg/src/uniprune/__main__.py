import sys

from uniprune.cli import main

sys.exit(main())
