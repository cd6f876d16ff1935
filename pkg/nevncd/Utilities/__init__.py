import nevncd.Utilities.Tools
import nevncd.Utilities.TextIO
from nevncd.Utilities.BatchThread import BatchThread, BatchSequence
