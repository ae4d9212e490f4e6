"""Allow `python .` from the repository root"""

import sys

from main import main

sys.exit(main())
