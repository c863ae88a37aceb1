import sys

from coinflip.harness.cli import main

sys.exit(main())
