from .optim import OptimizerKind
from .training import DivergenceError, PreconditionError, TrainingConfig, TrainingTrace, train_toy
from .task import ToyTask, generate_toy_task
