import sys

from boxcal.cli import main

sys.exit(main())
