import sys

from mechsim.cli import main

sys.exit(main())
