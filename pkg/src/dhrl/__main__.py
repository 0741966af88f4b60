import sys

from dhrl.cli import main

sys.exit(main())
