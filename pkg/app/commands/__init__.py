from . import evaluate, generate, gradcheck, heatmap, train

COMMANDS = (generate, train, evaluate, gradcheck, heatmap)

__all__ = ["COMMANDS"]
