"""Product-line models: feature model, configurations, file index and portfolio manifest.

All four are stored as small YAML documents::

    # feature model
    root:
      name: WACline
      children:
        - name: Commenting
          kind: optional            # mandatory | optional | alternative | or
          attributes:
            - {name: feedback.DoubleClickEnactment, value: "count(action=DoubleClickEnactment)"}

    # configuration
    variant: V1
    selected: [Commenting, Highlighting]
    deselected: [Emailing]

    # file index
    files:
      - {file: Commenting.js, path: src/commenting/Commenting.js}

    # portfolio manifest
    variants:
      V1: {config: ../configs/V1.yaml, derived_at: "2026-01-01T00:00:00.000Z"}

Children of one parent sharing the ``alternative`` (or ``or``) kind form a
single group; a group needs at least two members.
"""

from __future__ import annotations

import os
import posixpath
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping

import yaml
from filelock import FileLock

from .errors import ModelError
from .expr import ALL, FeatureExpression, eval_selection

KINDS = ("mandatory", "optional", "alternative", "or")


@dataclass(frozen=True)
class Attribute:
    name: str
    value: str


@dataclass(frozen=True)
class FeatureNode:
    name: str
    kind: str = "mandatory"
    children: tuple["FeatureNode", ...] = ()
    attributes: tuple[Attribute, ...] = ()

    def attribute(self, name: str) -> Attribute | None:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        return None


@dataclass(frozen=True)
class FeatureModel:
    root: FeatureNode

    def walk(self) -> Iterator[tuple[FeatureNode, FeatureNode | None]]:
        """Yield ``(feature, parent)`` pairs in pre-order."""
        stack: list[tuple[FeatureNode, FeatureNode | None]] = [(self.root, None)]
        while stack:
            node, parent = stack.pop()
            yield node, parent
            stack.extend((child, node) for child in reversed(node.children))

    @property
    def feature_names(self) -> list[str]:
        return [node.name for node, _ in self.walk()]

    def feature(self, name: str) -> FeatureNode:
        for node, _ in self.walk():
            if node.name == name:
                return node
        raise KeyError(name)

    def with_attribute_values(self, values: Mapping[tuple[str, str], str]) -> "FeatureModel":
        """Copy of the model where ``(feature, attribute) -> value`` overrides apply."""

        def rebuild(node: FeatureNode) -> FeatureNode:
            attrs = tuple(
                replace(a, value=values[(node.name, a.name)]) if (node.name, a.name) in values else a
                for a in node.attributes
            )
            return replace(node, attributes=attrs, children=tuple(rebuild(c) for c in node.children))

        return FeatureModel(rebuild(self.root))


@dataclass(frozen=True)
class ConfigurationModel:
    variant: str
    selection: Mapping[str, bool]

    @property
    def selected(self) -> list[str]:
        return [name for name, on in self.selection.items() if on]


@dataclass(frozen=True)
class FileEntry:
    file: str
    path: str


@dataclass(frozen=True)
class FileIndex:
    entries: tuple[FileEntry, ...]

    def lookup(self, file: str, path: str) -> FileEntry | None:
        wanted = _norm(path)
        for entry in self.entries:
            if entry.file == file and _norm(entry.path) == wanted:
                return entry
        return None

    @property
    def paths(self) -> list[str]:
        return sorted({_norm(e.path) for e in self.entries})


@dataclass(frozen=True)
class PortfolioEntry:
    variant: str
    config_path: Path
    derived_at: str
    configuration: ConfigurationModel


@dataclass
class PortfolioManifest:
    variants: dict[str, PortfolioEntry] = field(default_factory=dict)
    feature_model: FeatureModel | None = None

    def __len__(self) -> int:
        return len(self.variants)


def _norm(path: str) -> str:
    return posixpath.normpath(Path(path).as_posix())


def _read_yaml(path: Path | str) -> object:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read: {exc.strerror}", str(path)) from exc
    return _parse_yaml(text, str(path))


def _parse_yaml(text: str, location: str) -> object:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{location}:{mark.line + 1}:{mark.column + 1}" if mark else location
        raise ModelError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", where) from exc


# -- feature model ---------------------------------------------------------


def _build_feature(data: object, where: str, seen: set[str], is_root: bool) -> FeatureNode:
    if not isinstance(data, dict):
        raise ModelError("feature must be a mapping", where)
    unknown = set(data) - {"name", "kind", "children", "attributes"}
    if unknown:
        raise ModelError(f"unknown keys {sorted(unknown)}", where)
    name = data.get("name")
    if not isinstance(name, str) or not name:
        raise ModelError("feature needs a non-empty 'name'", where)
    where = f"{where}({name})"
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
        raise ModelError(f"feature name {name!r} is not an identifier usable in expressions", where)
    if name == ALL:
        raise ModelError(f"{ALL!r} is reserved for the whole-portfolio context", where)
    if name in seen:
        raise ModelError(f"duplicate feature name {name!r}", where)
    seen.add(name)
    kind = data.get("kind", "mandatory")
    if kind not in KINDS:
        raise ModelError(f"kind must be one of {', '.join(KINDS)}, got {kind!r}", where)
    if is_root and kind != "mandatory":
        raise ModelError("root feature must be mandatory", where)

    attrs: list[Attribute] = []
    attr_names: set[str] = set()
    for i, raw in enumerate(data.get("attributes") or []):
        awhere = f"{where}.attributes[{i}]"
        if not isinstance(raw, dict) or set(raw) - {"name", "value"} or "name" not in raw:
            raise ModelError("attribute must be a mapping with 'name' and 'value'", awhere)
        aname = str(raw["name"])
        if aname in attr_names:
            raise ModelError(f"duplicate attribute {aname!r}", awhere)
        attr_names.add(aname)
        value = raw.get("value")
        attrs.append(Attribute(aname, "" if value is None else str(value)))

    raw_children = data.get("children") or []
    if not isinstance(raw_children, list):
        raise ModelError("'children' must be a list", where)
    children = tuple(
        _build_feature(c, f"{where}.children[{i}]", seen, False) for i, c in enumerate(raw_children)
    )
    for group_kind in ("alternative", "or"):
        members = [c.name for c in children if c.kind == group_kind]
        if len(members) == 1:
            raise ModelError(f"{group_kind} group needs at least two members, found only {members[0]!r}", where)
    return FeatureNode(name, kind, children, tuple(attrs))


def feature_model_from_dict(data: object, location: str = "<feature model>") -> FeatureModel:
    if not isinstance(data, dict) or "root" not in data:
        raise ModelError("document must be a mapping with a 'root' feature", location)
    return FeatureModel(_build_feature(data["root"], f"{location}:root", set(), True))


def load_feature_model(path: Path | str) -> FeatureModel:
    """Load and structurally validate a feature model document."""
    return feature_model_from_dict(_read_yaml(path), str(path))


def _feature_to_dict(node: FeatureNode, is_root: bool = False) -> dict:
    out: dict = {"name": node.name}
    if not is_root:
        out["kind"] = node.kind
    if node.attributes:
        out["attributes"] = [{"name": a.name, "value": a.value} for a in node.attributes]
    if node.children:
        out["children"] = [_feature_to_dict(c) for c in node.children]
    return out


def feature_model_to_dict(fm: FeatureModel) -> dict:
    return {"root": _feature_to_dict(fm.root, is_root=True)}


def dump_feature_model(fm: FeatureModel) -> str:
    return yaml.safe_dump(feature_model_to_dict(fm), sort_keys=False, allow_unicode=True, width=1000)


# -- configurations ----------------------------------------------------------


def make_configuration(
    variant: str,
    selected: list[str] | tuple[str, ...] | set[str],
    deselected: list[str] | tuple[str, ...] | set[str],
    fm: FeatureModel,
    location: str = "<configuration>",
) -> ConfigurationModel:
    """Complete and validate a partial selection into a total configuration.

    The root is always selected. Unlisted mandatory children of a selected
    parent are selected; every other unlisted feature is deselected.
    """
    if not isinstance(variant, str) or not variant:
        raise ModelError("'variant' must be a non-empty name", location)
    known = set(fm.feature_names)
    for name in list(selected) + list(deselected):
        if name not in known:
            raise ModelError(f"unknown feature {name!r}", location)
    both = set(selected) & set(deselected)
    if both:
        raise ModelError(f"feature {sorted(both)[0]!r} is both selected and deselected", location)
    if fm.root.name in deselected:
        raise ModelError(f"root feature {fm.root.name!r} cannot be deselected", location)

    explicit_on = set(selected)
    explicit_off = set(deselected)
    selection: dict[str, bool] = {}
    for node, parent in fm.walk():
        if parent is None:
            selection[node.name] = True
            continue
        parent_on = selection[parent.name]
        if node.name in explicit_on:
            if not parent_on:
                raise ModelError(f"feature {node.name!r} is selected but its parent {parent.name!r} is not", location)
            selection[node.name] = True
        elif node.kind == "mandatory" and parent_on:
            if node.name in explicit_off:
                raise ModelError(f"mandatory feature {node.name!r} deselected under selected parent", location)
            selection[node.name] = True
        else:
            selection[node.name] = False

    for node, _ in fm.walk():
        if not selection[node.name]:
            continue
        alts = [c.name for c in node.children if c.kind == "alternative"]
        if alts:
            chosen = [a for a in alts if selection[a]]
            if len(chosen) != 1:
                raise ModelError(
                    f"alternative group under {node.name!r} needs exactly one member selected, got {chosen or 'none'}",
                    location,
                )
        ors = [c.name for c in node.children if c.kind == "or"]
        if ors and not any(selection[o] for o in ors):
            raise ModelError(f"or group under {node.name!r} needs at least one member selected", location)
    return ConfigurationModel(variant, selection)


def configuration_from_dict(data: object, fm: FeatureModel, location: str = "<configuration>") -> ConfigurationModel:
    if not isinstance(data, dict):
        raise ModelError("configuration must be a mapping", location)
    unknown = set(data) - {"variant", "selected", "deselected"}
    if unknown:
        raise ModelError(f"unknown keys {sorted(unknown)}", location)
    selected = data.get("selected") or []
    deselected = data.get("deselected") or []
    if not isinstance(selected, list) or not isinstance(deselected, list):
        raise ModelError("'selected' and 'deselected' must be lists of feature names", location)
    return make_configuration(
        data.get("variant"), [str(s) for s in selected], [str(s) for s in deselected], fm, location
    )


def load_configuration(path: Path | str, fm: FeatureModel) -> ConfigurationModel:
    return configuration_from_dict(_read_yaml(path), fm, str(path))


def dump_configuration(cfg: ConfigurationModel) -> str:
    data = {
        "variant": cfg.variant,
        "selected": [n for n, on in cfg.selection.items() if on],
        "deselected": [n for n, on in cfg.selection.items() if not on],
    }
    return yaml.safe_dump(data, sort_keys=False)


# -- file index --------------------------------------------------------------


def file_index_from_dict(data: object, platform_root: Path | str | None, location: str = "<file index>") -> FileIndex:
    raw = data.get("files") if isinstance(data, dict) else data
    if not isinstance(raw, list):
        raise ModelError("file index must be a list of {file, path} entries (or a mapping with 'files')", location)
    entries: list[FileEntry] = []
    seen: set[tuple[str, str]] = set()
    for i, item in enumerate(raw):
        where = f"{location}:files[{i}]"
        if not isinstance(item, dict) or set(item) != {"file", "path"}:
            raise ModelError("entry must have exactly the keys 'file' and 'path'", where)
        entry = FileEntry(str(item["file"]), _norm(str(item["path"])))
        key = (entry.file, entry.path)
        if key in seen:
            raise ModelError(f"duplicate entry {key}", where)
        seen.add(key)
        if Path(entry.path).is_absolute() or ".." in Path(entry.path).parts:
            raise ModelError(f"path {entry.path!r} must be relative to the platform root", where)
        if platform_root is not None and not (Path(platform_root) / entry.path).is_file():
            raise ModelError(f"indexed file {entry.path!r} does not exist under {platform_root}", where)
        entries.append(entry)
    return FileIndex(tuple(entries))


def load_file_index(path: Path | str, platform_root: Path | str | None) -> FileIndex:
    return file_index_from_dict(_read_yaml(path), platform_root, str(path))


# -- portfolio ---------------------------------------------------------------


def load_portfolio(path: Path | str, fm: FeatureModel) -> PortfolioManifest:
    """Load a portfolio manifest; a missing file is an empty portfolio."""
    path = Path(path)
    if not path.exists():
        return PortfolioManifest({}, fm)
    data = _read_yaml(path) or {}
    raw = data.get("variants") if isinstance(data, dict) else None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ModelError("'variants' must map variant names to entries", str(path))
    variants: dict[str, PortfolioEntry] = {}
    for name, item in raw.items():
        where = f"{path}:variants.{name}"
        if not isinstance(item, dict) or "config" not in item:
            raise ModelError("entry needs a 'config' path", where)
        cfg_path = Path(item["config"])
        if not cfg_path.is_absolute():
            cfg_path = path.parent / cfg_path
        cfg = load_configuration(cfg_path, fm)
        if cfg.variant != name:
            raise ModelError(f"configuration {cfg_path} declares variant {cfg.variant!r}", where)
        variants[str(name)] = PortfolioEntry(str(name), cfg_path, str(item.get("derived_at", "")), cfg)
    return PortfolioManifest(variants, fm)


def portfolio_from_configurations(configs: list[ConfigurationModel], fm: FeatureModel | None = None) -> PortfolioManifest:
    """In-memory portfolio, mostly useful for tests and simulations."""
    variants = {}
    for cfg in configs:
        if cfg.variant in variants:
            raise ModelError(f"duplicate variant {cfg.variant!r}")
        variants[cfg.variant] = PortfolioEntry(cfg.variant, Path(f"{cfg.variant}.yaml"), "", cfg)
    return PortfolioManifest(variants, fm)


def register_variant(portfolio_path: Path | str, variant: str, config_path: Path | str, derived_at: str) -> None:
    """Record ``variant`` in the manifest; last writer wins under a file lock."""
    portfolio_path = Path(portfolio_path)
    portfolio_path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(portfolio_path) + ".lock"):
        data = {}
        if portfolio_path.exists():
            data = _read_yaml(portfolio_path) or {}
        variants = dict(data.get("variants") or {})
        config_path = Path(config_path).resolve()
        base = portfolio_path.parent.resolve()
        # relative only when the configuration lives next to (or below) the manifest
        ref = config_path.relative_to(base) if base in config_path.parents else config_path
        variants[variant] = {"config": ref.as_posix(), "derived_at": derived_at}
        data["variants"] = {k: variants[k] for k in sorted(variants)}
        tmp = portfolio_path.with_name(portfolio_path.name + ".tmp")
        tmp.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
        os.replace(tmp, portfolio_path)


def resolve_context(expr: FeatureExpression | None, portfolio: PortfolioManifest) -> set[str]:
    """Variants whose configuration satisfies ``expr`` (``None`` = every variant)."""
    if expr is None:
        return set(portfolio.variants)
    return {
        name for name, entry in portfolio.variants.items() if eval_selection(expr, entry.configuration.selection)
    }
