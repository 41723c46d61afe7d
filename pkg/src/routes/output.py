"""
輸出工具
JSON on standard output, one-line JSON errors on standard error
"""

import sys

import orjson

JSON_OPTIONS = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def emit_json(data) -> None:
    """寫出 JSON 至標準輸出"""
    sys.stdout.write(orjson.dumps(data, option=JSON_OPTIONS).decode('utf-8') + '\n')
    sys.stdout.flush()


def emit_error(error: str, detail) -> None:
    """寫出錯誤至標準錯誤"""
    payload = {'error': error, 'detail': str(detail)}
    sys.stderr.write(orjson.dumps(payload).decode('utf-8') + '\n')
    sys.stderr.flush()
