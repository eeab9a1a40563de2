"""
YAML configuration of a lab run.

A config file is a mapping of sections (problem, model, study, kernel, run)
to flat mappings of scalars, short lists and, for model parameters, short
mappings. Every key has a documented default; unknown keys are errors.
"""

import copy
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from .errors import ConfigError
from .greens import KernelConfig
from .models import ModelFactory
from .solver import RecordPolicy, SolverConfig

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "CHLAB_OUTPUT_DIR"

# section -> key -> (default, type)
SCHEMA: Dict[str, Dict[str, Tuple[Any, str]]] = {
    "problem": {
        "n": (64, "int"),
        "m": (512, "int"),
        "T": (0.1, "float"),
        "x": (math.pi / 2, "float"),
        "record": ("terminal_only", "str"),
    },
    "model": {
        "drift": ("scaled_sine", "str"),
        "drift_params": ({"a": 1.0}, "mapping"),
        "diffusion": ("shifted_sine", "str"),
        "diffusion_params": ({"b": 1.0, "a": 0.5}, "mapping"),
        "initial": ("sine_mode", "str"),
        "initial_params": ({"j": 1, "a": 1.0}, "mapping"),
    },
    "study": {
        "seed": (0, "int"),
        "samples": (400, "int"),
        "p": (2.0, "float"),
        "space_levels": ([4, 8, 16, 32], "int_list"),
        "space_reference": (64, "int"),
        "localize_R": (None, "optional_float"),
        "time_levels": ([4, 8, 16, 32, 64], "int_list"),
        "time_reference": (4096, "int"),
        "time_n": (32, "int"),
        "holder_n": (64, "int"),
        "holder_m": (4096, "int"),
        "holder_T": (0.25, "float"),
        "holder_time_gaps": ([16, 32, 64, 128, 256, 512, 1024], "int_list"),
        "holder_space_gaps": ([4, 8, 16], "int_list"),
        "density_levels": ([4, 8, 16], "int_list"),
        "density_reference": (64, "int"),
        "density_samples": (5000, "int"),
        "density_m": (64, "int"),
        "malliavin_levels": ([4, 8, 16], "int_list"),
        "malliavin_reference": (32, "int"),
        "malliavin_samples": (200, "int"),
        "malliavin_m": (64, "int"),
        "rho": (0.5, "float"),
        "nondegeneracy_samples": (500, "int"),
        "moment_samples": (0, "int"),
    },
    "kernel": {
        "ns": ([8, 16, 32], "int_list"),
        "T": (0.5, "float"),
        "xs": ([math.pi / 4, math.pi / 2, 3 * math.pi / 4], "float_list"),
        "tail_tol": (1e-12, "float"),
        "J_max": (4096, "int"),
        "time_nodes": (256, "int"),
        "grading": (2.0, "float"),
        "space_nodes": (2048, "int"),
    },
    "run": {
        "threads": (1, "int"),
        "output_dir": ("results", "str"),
        "log_level": ("INFO", "str"),
        "dump_noise": (False, "bool"),
    },
}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    section: {key: default for key, (default, _) in keys.items()}
    for section, keys in SCHEMA.items()
}

_factory = ModelFactory()


@dataclass(frozen=True)
class LabConfig:
    """
    Effective configuration: every section with every key filled.

    Use :func:`parse_config` or :meth:`defaults` to build one.
    """

    problem: Dict[str, Any]
    model: Dict[str, Any]
    study: Dict[str, Any]
    kernel: Dict[str, Any]
    run: Dict[str, Any]

    @classmethod
    def defaults(cls) -> "LabConfig":
        return cls(**copy.deepcopy(DEFAULTS))

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {section: copy.deepcopy(getattr(self, section)) for section in SCHEMA}

    def with_overrides(self, seed: Optional[int] = None, samples: Optional[int] = None,
                       threads: Optional[int] = None) -> "LabConfig":
        """
        Copy with the command-line overrides applied.

        ``samples`` replaces every Monte-Carlo sample count.
        """
        data = self.to_dict()
        if seed is not None:
            data["study"]["seed"] = int(seed)
        if samples is not None:
            for key in ("samples", "density_samples", "malliavin_samples", "nondegeneracy_samples"):
                data["study"][key] = int(samples)
        if threads is not None:
            data["run"]["threads"] = int(threads)
        return LabConfig(**data)

    def solver_config(self, n: Optional[int] = None, m: Optional[int] = None,
                      T: Optional[float] = None) -> SolverConfig:
        """
        SolverConfig of the problem and model sections, with optional level overrides.

        Raises:
            ValueError: If a model name or parameter is not valid
        """
        model = self.model
        return SolverConfig(
            n=self.problem["n"] if n is None else n,
            m=self.problem["m"] if m is None else m,
            T=self.problem["T"] if T is None else T,
            drift=_factory.create_drift(model["drift"], **model["drift_params"]),
            diffusion=_factory.create_diffusion(model["diffusion"], **model["diffusion_params"]),
            initial=_factory.create_initial(model["initial"], **model["initial_params"]),
            record_policy=RecordPolicy.parse(self.problem["record"]),
        )

    def kernel_config(self) -> KernelConfig:
        k = self.kernel
        return KernelConfig(k["tail_tol"], k["J_max"], k["time_nodes"], k["grading"], k["space_nodes"])


def _key_lines(root: Optional[yaml.Node]) -> Dict[Tuple[str, Optional[str]], int]:
    lines = {}
    if not isinstance(root, yaml.MappingNode):
        return lines
    for section_node, body in root.value:
        section = section_node.value
        lines[(section, None)] = section_node.start_mark.line + 1
        if isinstance(body, yaml.MappingNode):
            for key_node, _ in body.value:
                lines[(section, key_node.value)] = key_node.start_mark.line + 1
    return lines


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(value, kind: str, where: str, line: Optional[int]):
    def fail():
        raise ConfigError(f"{where} must be {kind.replace('_', ' ')}, got {value!r}",
                          key=where, expected=kind, line=line)

    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail()
        return value
    if kind in ("float", "optional_float"):
        if value is None and kind == "optional_float":
            return None
        if isinstance(value, str):
            # YAML 1.1 reads 1e-12 (no dot) as a string
            try:
                return float(value)
            except ValueError:
                fail()
        if not _is_number(value):
            fail()
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            fail()
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            fail()
        return value
    if kind in ("int_list", "float_list"):
        if not isinstance(value, list) or not value:
            fail()
        element = "int" if kind == "int_list" else "float"
        return [_coerce(item, element, where, line) for item in value]
    if kind == "mapping":
        if not isinstance(value, dict) or not all(isinstance(k, str) for k in value):
            fail()
        return dict(value)
    raise AssertionError(f"unknown schema type {kind}")


def parse_text(text: str, source: str = "<config>") -> LabConfig:
    """
    Parse config text into a LabConfig with defaults filled in.

    Raises:
        ConfigError: On YAML syntax errors, unknown sections or keys, and wrong types
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"{source}: invalid YAML: {getattr(e, 'problem', e)}",
                          line=mark.line + 1 if mark else None) from e
    lines = _key_lines(root)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections", expected="mapping", line=1)

    effective = copy.deepcopy(DEFAULTS)
    for section, body in data.items():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section {section!r} (expected one of {', '.join(SCHEMA)})",
                              key=str(section), expected="section", line=lines.get((section, None)))
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: section {section!r} must be a mapping", key=section,
                              expected="mapping", line=lines.get((section, None)))
        for key, value in body.items():
            where = f"{section}.{key}"
            line = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {where!r}", key=where,
                                  expected=", ".join(SCHEMA[section]), line=line)
            effective[section][key] = _coerce(value, SCHEMA[section][key][1], where, line)
    logger.debug(f"parsed config from {source}")
    return LabConfig(**effective)


def parse_config(path: Union[str, Path]) -> LabConfig:
    """
    Read and validate a YAML config file.

    Args:
        path (str or Path): Config file

    Returns:
        LabConfig: Effective configuration

    Raises:
        ConfigError: If the file is missing or violates the schema
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(path.read_text(encoding="utf-8"), source=str(path))


def emit_config(cfg: LabConfig) -> str:
    """The effective config as YAML with sorted keys; parse_text of it gives cfg back."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def output_dir(cfg: LabConfig) -> Path:
    """Output directory: $CHLAB_OUTPUT_DIR if set, else run.output_dir."""
    return Path(os.environ.get(OUTPUT_DIR_ENV) or cfg.run["output_dir"])
