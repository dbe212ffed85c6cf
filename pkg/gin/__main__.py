import sys

from gin.cli import main

sys.exit(main())
