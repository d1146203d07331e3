class ForestPruneError(Exception):
    """Базовая ошибка forestprune."""


class ConfigurationError(ForestPruneError, ValueError):
    """Недопустимые параметры или конфигурация."""


class IngestionError(ForestPruneError, ValueError):
    """Ошибка чтения входных данных. Хранит строку и столбец проблемной ячейки."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaMismatchError(ForestPruneError, ValueError):
    """Ширина данных не совпадает с ожидаемой лесом."""


class MergeBudgetExceeded(ForestPruneError):
    """Объединённое дерево превышает допустимое число листьев."""
