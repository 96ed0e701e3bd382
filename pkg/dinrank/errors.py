class ShapeError(ValueError):
    pass


class DegenerateRowError(ValueError):
    pass


class UninitializedStatisticsError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class RankingParseError(ValueError):

    def __init__(self, path, line, reason):
        self.path= path
        self.line= line
        super().__init__(f'{path}:{line}: {reason}')


class BudgetExceededError(ValueError):

    def __init__(self, count, budget, what='groups'):
        self.count= count
        self.budget= budget
        super().__init__(f'exact enumeration needs {count} {what}, budget is {budget}')


class DivergenceError(ArithmeticError):

    def __init__(self, step, last_loss):
        self.step= step
        self.last_loss= last_loss
        super().__init__(f'loss became non-finite at step {step}, last finite loss {last_loss}')


class CheckpointError(ValueError):
    pass


class DataError(ValueError):
    pass
