"""Run configuration: parsing, validation, canonical form, hashing.

A run is described by one YAML document.  Exactly one of ``cost.b`` /
``cost.platform`` selects the iteration cost, and exactly one of
``target.delta`` / ``target.emse_db`` selects the accuracy target.  The
canonical form makes every default explicit and serializes with sorted
keys so a configuration hashes and round-trips stably.
"""

import hashlib

import yaml

from .errors import ConfigError
from .priors import Prior
from .ratedist import make_family
from .state_evolution import SystemConfig, fixed_point
from .tradeoff import PlatformCost

__all__ = ["RunConfig", "canonical_yaml"]

_DP_DEFAULTS = {"dsigma_db": 0.01, "dr": 0.05, "r_max": 16.0, "t_max": 60}
_RD_DEFAULTS = {
    "kind": "blahut_arimoto",
    "reconstruction": "centroid",
    "enforce_bin_limit": True,
    "anchors_per_decade": 6,
    "n_alphabet": 601,
}


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


class RunConfig:
    """Validated, canonicalized run description."""

    def __init__(self, raw):
        if not isinstance(raw, dict):
            raise ConfigError("configuration document must be a mapping")
        self.raw = raw
        prior_spec = raw.get("prior")
        _require(isinstance(prior_spec, dict), "missing 'prior' mapping")
        kind = prior_spec.get("kind")
        try:
            if kind == "bernoulli_gaussian":
                self.prior = Prior.bernoulli_gaussian(float(prior_spec["rho"]))
            elif kind == "gaussian_mixture":
                self.prior = Prior.gaussian_mixture(
                    [float(w) for w in prior_spec["weights"]],
                    [float(m) for m in prior_spec["means"]],
                    [float(v) for v in prior_spec["variances"]],
                )
            else:
                raise ConfigError(f"unknown prior kind {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid prior: {exc}") from exc
        try:
            self.kappa = float(raw["kappa"])
            self.sigma_z2 = float(raw["sigma_z2"])
            self.nodes = int(raw.get("nodes", 100))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid system parameters: {exc}") from exc
        try:
            self.system = SystemConfig(prior=self.prior, kappa=self.kappa,
                                       sigma_z2=self.sigma_z2, nodes=self.nodes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

        rd = dict(_RD_DEFAULTS)
        rd.update(raw.get("rd_model") or {})
        _require(rd["kind"] in ("ecsq", "blahut_arimoto", "gaussian_highrate"),
                 f"unknown rd_model kind {rd['kind']!r}")
        self.rd_model = rd

        dp = dict(_DP_DEFAULTS)
        dp.update(raw.get("dp") or {})
        _require(dp["dr"] > 0 and dp["dsigma_db"] > 0 and dp["r_max"] > 0
                 and dp["t_max"] >= 1, "invalid dp resolutions")
        self.dp = dp

        target = raw.get("target") or {}
        keys = [k for k in ("delta", "emse_db") if k in target]
        _require(len(keys) == 1, "target must give exactly one of delta / emse_db")
        self.target_form = keys[0]
        self.target_value = float(target[keys[0]])
        _require(self.target_value > 0, "target must be positive")

        cost = raw.get("cost") or {}
        has_b = "b" in cost
        has_platform = "platform" in cost
        _require(has_b != has_platform,
                 "cost must give exactly one of b / platform")
        if has_b:
            self.platform = None
            self.b = float(cost["b"])
            _require(self.b >= 0, "b must be nonnegative")
        else:
            p = cost["platform"]
            _require(isinstance(p, dict) and "kind" in p,
                     "platform must be a mapping with a 'kind'")
            self.platform = PlatformCost(
                platform=p["kind"], n=int(p.get("n", 0)), m=int(p.get("m", 0)),
                p=int(p.get("p", self.nodes)),
                b_custom=float(p.get("b", float("nan"))),
            )
            try:
                self.b = self.platform.b
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc

        self.seed = int(raw.get("seed", 0))
        self.out_dir = str(raw.get("out_dir", "out"))

    @classmethod
    def from_yaml(cls, text):
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse YAML: {exc}") from exc
        return cls(raw)

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def delta(self):
        """Absolute excess-MSE target (dB targets resolve via the MMSE)."""
        if self.target_form == "delta":
            return self.target_value
        fp = fixed_point(self.system)
        return fp.mmse * (10.0 ** (self.target_value / 10.0) - 1.0)

    def family(self):
        """Rate-distortion family over the reachable sigma2 range."""
        fp = fixed_point(self.system)
        kind = self.rd_model["kind"]
        kwargs = {}
        if kind == "ecsq":
            kwargs = {
                "reconstruction": self.rd_model["reconstruction"],
                "enforce_bin_limit": bool(self.rd_model["enforce_bin_limit"]),
            }
        elif kind == "blahut_arimoto":
            kwargs = {
                "anchors_per_decade": int(self.rd_model["anchors_per_decade"]),
                "n_alphabet": int(self.rd_model["n_alphabet"]),
            }
        return make_family(kind, self.prior, self.nodes, fp.sigma_inf2,
                           self.system.initial_sigma2, **kwargs)

    def canonical(self):
        """Nested dict with every default made explicit."""
        cost = ({"b": self.b} if self.platform is None else
                {"platform": {"kind": self.platform.platform,
                              "n": self.platform.n, "m": self.platform.m,
                              "p": self.platform.p}})
        return {
            "prior": self.prior.describe(),
            "kappa": self.kappa,
            "sigma_z2": self.sigma_z2,
            "nodes": self.nodes,
            "rd_model": dict(self.rd_model),
            "dp": dict(self.dp),
            "target": {self.target_form: self.target_value},
            "cost": cost,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    def canonical_yaml(self):
        return canonical_yaml(self.canonical())

    def config_hash(self):
        return hashlib.sha256(self.canonical_yaml().encode("utf-8")).hexdigest()[:16]


def canonical_yaml(doc):
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)
