import sys

from q3r.harness.cli import main

sys.exit(main())
