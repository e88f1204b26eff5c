from .logger_config import get_logger, setup_logger, log_operation

__all__ = ["get_logger", "setup_logger", "log_operation"]
