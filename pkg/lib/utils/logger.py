import sys
from pathlib import Path
from datetime import datetime
from loguru import logger

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"

class LoggerManager:
    def __init__(self, log_path: str, level: str = "INFO"):
        self.log_path = Path(log_path)
        self.log_path.mkdir(parents=True, exist_ok=True)
        self.level = level
        self.log_file = None
        self._handler_ids = []
        self._configure_logger()

    def _configure_logger(self):
        """配置日志记录器"""
        # 移除默认的处理器
        logger.remove()

        self._handler_ids.append(logger.add(sys.stderr, format=CONSOLE_FORMAT, level=self.level))

        # 文件处理器记录全部调试信息
        self.log_file = self.log_path / f"run_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        self._handler_ids.append(logger.add(
            str(self.log_file),
            format=FILE_FORMAT,
            level="DEBUG",
            rotation="500 MB",
            retention="10 days"
        ))

    def close(self):
        """移除本管理器添加的处理器并恢复默认控制台输出"""
        for handler_id in self._handler_ids:
            logger.remove(handler_id)
        self._handler_ids = []
        logger.add(sys.stderr, level="INFO")

    @staticmethod
    def get_logger():
        """获取logger实例"""
        return logger
