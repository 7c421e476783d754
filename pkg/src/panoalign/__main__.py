import sys

from panoalign.cli import main

sys.exit(main())
