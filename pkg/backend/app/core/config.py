# app/core/config.py

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # --- General App Settings ---
    PROJECT_NAME: str = "MatchSeg"

    # --- Logging Settings ---
    LOG_LEVEL: str = "INFO"  # DEBUG, INFO, WARNING, ERROR, CRITICAL
    LOG_DIR: str = "logs"  # 日志文件目录
    LOG_JSON_FORMAT: bool = False  # 是否使用JSON格式输出日志到文件
    LOG_FILE_ENABLED: bool = False  # 是否启用文件日志
    LOG_CONSOLE_ENABLED: bool = True  # 是否启用控制台日志（输出到stderr）

    # --- Evaluation ---
    # 评估时并行处理查询的线程数，只影响速度，不影响报告内容和顺序
    EVAL_WORKERS: int = 1

    model_config = SettingsConfigDict(
        env_prefix="MATCHSEG_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# 创建一个全局可用的配置实例
settings = Settings()

# --- 文件格式魔数与版本 ---
TENSOR_MAGIC = b"MSEG"
TENSOR_VERSION = 1
EMBEDDING_MAGIC = b"MEMB"
EMBEDDING_VERSION = 1
WEIGHTS_MAGIC = b"MWTS"
WEIGHTS_VERSION = 1

# --- 数据集目录布局 ---
MANIFEST_FILENAME = "manifest.tsv"
IMAGES_DIRNAME = "images"
MASKS_DIRNAME = "masks"
TENSOR_SUFFIX = ".mseg"
