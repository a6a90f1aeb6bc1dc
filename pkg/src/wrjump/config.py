"""Experiment configuration: sectioned key=value text, strictly validated.

The format is INI-like and diff-friendly: `[section]` headers and
`key = value` lines, `#`/`;` comments.  Unknown sections or keys are hard
errors reported with their line number; parse -> serialize -> parse is the
identity on the resolved values.
"""

import math
from dataclasses import dataclass, field

from .geometry import Domain
from .kernels import JumpKernel, KernelSet, RepulsionKernel


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "domain": {"dimension": int, "side": float, "flat_weights": bool},
    "kernel.a0": {"family": str, "mass": float, "scale": float},
    "kernel.a1": {"family": str, "mass": float, "scale": float},
    "kernel.phi0": {"family": str, "height": float, "scale": float},
    "kernel.phi1": {"family": str, "height": float, "scale": float},
    "initial": {"law": str, "kappa0": float, "kappa1": float, "path": str},
    "dynamics": {"sigma": float, "t_end": float},
    "hierarchy": {"max_order": int, "grid_n": int, "upsilon_depth": int,
                  "closure": str, "theta0": str, "series_cap": int},
    "run": {"paths": int, "seed": int},
    "report": {"checks": str},
}

_REQUIRED = ("domain", "kernel.a0", "kernel.a1", "kernel.phi0", "kernel.phi1",
             "initial", "dynamics", "run")

_DEFAULTS = {
    "domain": {"dimension": 1, "side": 10.0, "flat_weights": False},
    "initial": {"law": "poisson", "kappa0": 0.5, "kappa1": 0.5, "path": ""},
    "dynamics": {"sigma": 0.0, "t_end": 1.0},
    "hierarchy": {"max_order": 2, "grid_n": 64, "upsilon_depth": 3,
                  "closure": "poisson-product", "theta0": "auto",
                  "series_cap": 100},
    "run": {"paths": 1000, "seed": 1},
    "report": {"checks": "chi,moments,expmoment"},
}

ALLOWED_CHECKS = ("chi", "moments", "expmoment", "martingale", "chentsov",
                  "sigma", "type")


def _coerce(raw, typ, where):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}")


@dataclass
class ExperimentConfig:
    """Fully resolved experiment definition."""

    sections: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text, source="<string>"):
        sections = {}
        current = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            where = f"{source}:{lineno}"
            if not stripped or stripped.startswith(("#", ";")):
                continue
            if stripped.startswith("["):
                if not stripped.endswith("]"):
                    raise ConfigError(f"{where}: malformed section header")
                name = stripped[1:-1].strip()
                if name not in _SCHEMA:
                    raise ConfigError(f"{where}: unknown section [{name}]")
                current = name
                sections.setdefault(name, {})
                continue
            if current is None:
                raise ConfigError(f"{where}: key outside any section")
            if "=" not in stripped:
                raise ConfigError(f"{where}: expected key = value")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in _SCHEMA[current]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{current}]")
            sections[current][key] = _coerce(raw, _SCHEMA[current][key], where)
        for name in _REQUIRED:
            if name not in sections:
                raise ConfigError(f"{source}: missing required section [{name}]")
        merged = {}
        for name in _SCHEMA:
            merged[name] = dict(_DEFAULTS.get(name, {}))
            merged[name].update(sections.get(name, {}))
        cfg = cls(merged)
        cfg.validate(source)
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.parse(fh.read(), source=str(path))

    def validate(self, source="<config>"):
        dom = self.sections["domain"]
        if dom["dimension"] < 1 or dom["side"] <= 0:
            raise ConfigError(f"{source}: invalid domain block")
        for name in ("kernel.a0", "kernel.a1"):
            fam = self.sections[name]["family"]
            if fam not in ("gaussian", "exponential", "top-hat"):
                raise ConfigError(f"{source}: bad jump kernel family {fam!r}")
        for name in ("kernel.phi0", "kernel.phi1"):
            sec = self.sections[name]
            if sec["family"] not in ("gaussian", "exponential", "hard-core", "zero"):
                raise ConfigError(f"{source}: bad repulsion family {sec['family']!r}")
            if sec["family"] == "hard-core" and 2.0 * sec["scale"] >= dom["side"]:
                raise ConfigError(f"{source}: hard-core radius must satisfy 2r < side")
        if self.sections["initial"]["law"] not in ("poisson", "file"):
            raise ConfigError(f"{source}: initial law must be poisson or file")
        if not 0.0 <= self.sections["dynamics"]["sigma"] <= 1.0:
            raise ConfigError(f"{source}: sigma must lie in [0, 1]")
        hier = self.sections["hierarchy"]
        if hier["closure"] not in ("poisson-product", "ruelle-cap"):
            raise ConfigError(f"{source}: unknown closure rule")
        if hier["theta0"] != "auto":
            try:
                float(hier["theta0"])
            except ValueError:
                raise ConfigError(f"{source}: theta0 must be 'auto' or a number")
        for check in self.checks():
            if check not in ALLOWED_CHECKS:
                raise ConfigError(f"{source}: unknown check {check!r}")

    def to_string(self):
        lines = []
        for name in _SCHEMA:
            lines.append(f"[{name}]")
            for key in _SCHEMA[name]:
                if key in self.sections.get(name, {}):
                    val = self.sections[name][key]
                    if isinstance(val, bool):
                        val = "true" if val else "false"
                    elif isinstance(val, float):
                        val = repr(val)
                    lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)

    # -- builders -----------------------------------------------------------
    def domain(self):
        d = self.sections["domain"]
        return Domain(d["dimension"], d["side"], d["flat_weights"])

    def kernels(self):
        dom = self.domain()

        def jump(name, idx):
            sec = self.sections[name]
            return JumpKernel(sec["family"], sec["mass"], sec["scale"], idx)

        def rep(name, idx):
            sec = self.sections[name]
            return RepulsionKernel(sec["family"], sec.get("height", 0.0),
                                   sec["scale"], idx)

        return KernelSet(dom, jump("kernel.a0", 0), jump("kernel.a1", 1),
                         rep("kernel.phi0", 0), rep("kernel.phi1", 1))

    def checks(self):
        raw = self.sections.get("report", {}).get("checks", "")
        return [c.strip() for c in raw.split(",") if c.strip()]

    def theta0(self):
        raw = self.sections["hierarchy"]["theta0"]
        if raw == "auto":
            kappa = max(self.sections["initial"]["kappa0"],
                        self.sections["initial"]["kappa1"])
            return math.log(kappa) if kappa > 0 else 0.0
        return float(raw)

    def hierarchy_params(self):
        from .hierarchy import HierarchyParams
        hier = self.sections["hierarchy"]
        return HierarchyParams(
            max_order=hier["max_order"], grid_n=hier["grid_n"],
            upsilon_depth=hier["upsilon_depth"], closure=hier["closure"],
            theta0=self.theta0(), series_cap=hier["series_cap"])
