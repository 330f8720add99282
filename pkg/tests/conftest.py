import sys
from pathlib import Path

# lets config files name "support:mock100_responder" as a script responder
sys.path.insert(0, str(Path(__file__).parent))
