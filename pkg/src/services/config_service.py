"""
配置管理
Engine limits and defaults, overridable through PCFG_* environment variables or a local .env
"""

import os

from dotenv import load_dotenv

# 載入環境變數
load_dotenv()


class EngineConfig:
    """數值引擎配置"""

    LOG_LEVEL = os.getenv('PCFG_LOG_LEVEL', 'WARNING')

    # per-lhs probability sums
    SUM_TOLERANCE = float(os.getenv('PCFG_SUM_TOLERANCE', '1e-9'))

    MAX_FIXED_POINT_ITERATIONS = int(os.getenv('PCFG_MAX_FIXED_POINT_ITERATIONS', '1000000'))
    MAX_CYCLE_STEPS = int(os.getenv('PCFG_MAX_CYCLE_STEPS', '1000000'))

    # cost guards
    EXACT_MAX_K = int(os.getenv('PCFG_EXACT_MAX_K', '30'))
    STRING_ENUMERATION_LIMIT = int(os.getenv('PCFG_STRING_ENUMERATION_LIMIT', '10000000'))
    PARTITION_LIMIT = int(os.getenv('PCFG_PARTITION_LIMIT', '100000000'))
    TREE_ENUMERATION_LIMIT = int(os.getenv('PCFG_TREE_ENUMERATION_LIMIT', '10000'))

    # approximation
    FULL_SUM_FRACTION = float(os.getenv('PCFG_FULL_SUM_FRACTION', '0.5'))
    MBAR_SAFETY = float(os.getenv('PCFG_MBAR_SAFETY', '2.0'))

    # sampling
    SAMPLE_BATCH = int(os.getenv('PCFG_SAMPLE_BATCH', '65536'))
    CONSISTENCY_CHUNK = int(os.getenv('PCFG_CONSISTENCY_CHUNK', '100000'))

    @classmethod
    def as_dict(cls) -> dict:
        """取得所有配置"""
        return {
            name: getattr(cls, name)
            for name in dir(cls)
            if name.isupper()
        }
