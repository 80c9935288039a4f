"""Reading and writing study config files."""

import logging
import re
from functools import cache, partial
from pathlib import Path
from typing import Any, TypeVar, override

import attrs
import cattrs
import tomlkit
from cattrs.preconf.tomlkit import make_converter
from packaging.version import InvalidVersion, Version
from tomlkit.items import Comment, Table, Trivia, Whitespace

from .bias import BiasOrder
from .config import Config, ConfigValWithMetadata, unstructure_config

logger = logging.getLogger(__name__)

_VERSION_DIRECTIVE = re.compile(r"^#:version\s+(?P<version>\S+)\s*$")


def _structure_bias_order(value: str | int, _: type[BiasOrder]) -> BiasOrder:
    return BiasOrder(value) if isinstance(value, int) else BiasOrder.parse(value)


@cache
def get_converter() -> cattrs.Converter:
    converter = make_converter()
    converter.register_unstructure_hook(BiasOrder, str)
    converter.register_structure_hook(BiasOrder, _structure_bias_order)
    converter.register_unstructure_hook(Path, str)
    converter.register_structure_hook(Path, lambda value, _: Path(value))
    converter.register_unstructure_hook_func(
        check_func=attrs.has, func=partial(unstructure_config, converter)
    )
    return converter


def _toml_item(val: Any) -> Any:  # noqa: ANN401
    if isinstance(val, list | tuple):
        array = tomlkit.array()
        for item in val:
            array.append(item)
        return array
    if isinstance(val, str):
        return tomlkit.string(val)
    return tomlkit.item(val)


def convert_to_toml(
    data_dict: dict[str, Any | ConfigValWithMetadata],
    container: tomlkit.TOMLDocument | Table,
) -> None:
    """
    Write unstructured config data into `container`. Help text goes in a
    comment above its value and unset values are written as commented keys.
    Tables don't get help comments and empty tables are left out.
    """
    for key, raw_val in data_dict.items():
        help_text = None
        val = raw_val
        if isinstance(raw_val, ConfigValWithMetadata):
            val = raw_val.value
            help_text = raw_val.metadata.help

        if isinstance(val, dict):
            if val:
                table = tomlkit.table()
                convert_to_toml(val, table)
                container.add(key, table)
            continue

        if help_text:
            container.add(tomlkit.comment(help_text))
        if val is None:
            container.add(tomlkit.comment(f"{key} = "))
        else:
            container.add(key, _toml_item(val))


def get_toml_doc_config_version(document: tomlkit.TOMLDocument) -> Version | None:
    """
    The version from a `#:version` directive. The directive must be in the
    leading comment block, before any keys or tables.
    """
    for _key, val in document.body:
        if isinstance(val, Whitespace):
            continue
        if not isinstance(val, Comment):
            break
        if match := _VERSION_DIRECTIVE.match(val.as_string().strip()):
            try:
                return Version(match["version"])
            except InvalidVersion:
                logger.debug("Skipping malformed version directive %r", match["version"])
    return None


@attrs.frozen(kw_only=True)
class ConfigFileError(Exception):
    msg: str = "Config file error"
    config_class: type[Config]
    config_file_path: Path
    details: tuple[str, ...] = ()

    @override
    def __str__(self) -> str:
        message = f"{self.msg}: {self.config_file_path}"
        if self.details:
            message += "".join(f"\n  {detail}" for detail in self.details)
        return message


@attrs.frozen(kw_only=True)
class ConfigFileParseError(ConfigFileError):
    msg: str = "Error parsing config file"


@attrs.frozen(kw_only=True)
class WrongConfigVersionError(ConfigFileError):
    msg: str = "Config file has wrong config version"
    config_file_version: Version


ConfigTypeVar = TypeVar("ConfigTypeVar", bound=Config)


def _parse_document(
    config_class: type[Config], config_file_path: Path
) -> tomlkit.TOMLDocument:
    try:
        return tomlkit.parse(config_file_path.read_text(encoding="UTF-8"))
    except tomlkit.exceptions.ParseError as e:
        raise ConfigFileParseError(
            msg="Invalid TOML",
            config_class=config_class,
            config_file_path=config_file_path,
            details=(str(e),),
        ) from e


def _check_version(
    document: tomlkit.TOMLDocument, config_class: type[Config], config_file_path: Path
) -> None:
    file_version = get_toml_doc_config_version(document)
    expected = config_class.get_config_version()
    if file_version is None:
        raise ConfigFileParseError(
            msg="Config has no version specified",
            config_class=config_class,
            config_file_path=config_file_path,
            details=(f"Expected '#:version {expected}' before any values",),
        )
    if file_version != expected:
        raise WrongConfigVersionError(
            msg=f"Config version {file_version} is too "
            f"{'low' if file_version < expected else 'high'}, expected {expected}",
            config_class=config_class,
            config_file_path=config_file_path,
            config_file_version=file_version,
        )


def read_config_file(
    *, config_class: type[ConfigTypeVar], config_file_path: Path
) -> ConfigTypeVar:
    """
    Read and parse config file into a `config_class` object. Keys the class
    doesn't know are ignored.

    Raises:
        FileNotFoundError: Config file not found
        ConfigFileParseError: Error parsing config file. Validation failures
            list the offending keys in `details`.
        WrongConfigVersionError: Config file has wrong config version
    """
    document = _parse_document(config_class, config_file_path)
    _check_version(document, config_class, config_file_path)

    try:
        config = get_converter().structure(document.unwrap(), config_class)
    except (
        cattrs.BaseValidationError,
        cattrs.StructureHandlerNotFoundError,
        cattrs.ForbiddenExtraKeysError,
    ) as e:
        raise ConfigFileParseError(
            msg="Invalid config values",
            config_class=config_class,
            config_file_path=config_file_path,
            details=tuple(cattrs.transform_error(e)),
        ) from e
    logger.debug("Read %s from %s", config_class.__name__, config_file_path)
    return config


def update_config_file(config: Config, config_file_path: Path) -> None:
    """
    Replace contents of config file with `config`. Parent directories are
    created as needed.
    """
    doc = tomlkit.document()
    if description := config.get_config_file_description().strip():
        for line in description.splitlines():
            doc.add(tomlkit.comment(line))
    doc.add(
        Comment(Trivia(comment=f"#:version {config.get_config_version()}", trail="\n"))
    )
    doc.add(tomlkit.nl())

    convert_to_toml(get_converter().unstructure(config), doc)
    config_file_path.parent.mkdir(parents=True, exist_ok=True)
    config_file_path.write_text(doc.as_string(), encoding="UTF-8")
    logger.info("Wrote %s to %s", type(config).__name__, config_file_path)
