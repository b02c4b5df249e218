import sys

from mlinter.cli import main

sys.exit(main())
