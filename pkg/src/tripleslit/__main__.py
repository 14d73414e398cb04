import sys

from tripleslit.cli import main

sys.exit(main())
