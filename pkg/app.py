import ast
import configparser
import logging
import math
import operator
import os
from typing import Any, Dict, Optional

from models import ConfigError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_OPERATORS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos,
}
_CONSTANTS = {'pi': math.pi}


def configure_logging(level: Optional[str] = None):
    """Configure root logging once; level from CAVITATION_LOG_LEVEL by default"""
    level = (level or os.environ.get("CAVITATION_LOG_LEVEL", "INFO")).upper()
    if not hasattr(logging, level):
        raise ConfigError(f"Unknown log level '{level}'")
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, level))


def parse_number(text: str) -> float:
    """Evaluate a numeric config value such as '2*pi/3' without eval()"""
    try:
        tree = ast.parse(str(text).strip(), mode='eval')
    except SyntaxError as e:
        raise ConfigError(f"Cannot parse numeric value '{text}': {e}")

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _CONSTANTS:
            return _CONSTANTS[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPERATORS:
            return _OPERATORS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPERATORS:
            return _OPERATORS[type(node.op)](walk(node.operand))
        raise ConfigError(f"Unsupported expression in numeric value '{text}'")

    return walk(tree)


def parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigError(f"Cannot parse boolean value '{text}'")


def read_config_file(path: str) -> Dict[str, Dict[str, str]]:
    """Read an INI run configuration into plain section dictionaries"""
    if not os.path.isfile(path):
        raise ConfigError(f"Configuration file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"Invalid configuration file {path}: {e}")
    known = {'problem', 'solver', 'adaptive', 'output'}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"Unknown configuration sections in {path}: {sorted(unknown)}")
    return {section: dict(parser[section]) for section in parser.sections()}


def environment_overrides() -> Dict[str, Dict[str, Any]]:
    overrides: Dict[str, Dict[str, Any]] = {}
    if os.environ.get("CAVITATION_OUTPUT_DIR"):
        overrides.setdefault('output', {})['directory'] = os.environ["CAVITATION_OUTPUT_DIR"]
    return overrides
