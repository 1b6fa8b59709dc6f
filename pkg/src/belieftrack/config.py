"""Plain-text key=value configuration files.

One format serves graph descriptions and training settings: one `key = value`
pair per line, `#` starts a comment, blank lines ignored. Values stay strings;
callers convert. Unknown keys are the caller's concern so that graph and
training sections can share a file.
"""


class ConfigError(Exception):
    pass


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def load_kv(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_kv(f.read())


def as_list(value: str) -> list:
    return [part.strip() for part in value.split(",") if part.strip()]
