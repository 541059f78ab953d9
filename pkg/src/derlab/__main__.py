import sys

from derlab.cli import main

sys.exit(main())
