import sys

from fracpinn.cli import main

sys.exit(main())
