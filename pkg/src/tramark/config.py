"""Experiment configuration and the flat ``key = value`` file format."""
from dataclasses import asdict, dataclass, fields, replace

# the tiny MLP needs a larger watermark step than deep convolutional backbones
DESK_ETA_W = 2e-2
BACKBONE_ETA_W = 1e-4


class ConfigError(ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    # federation
    n: int = 10
    T: int = 40
    alpha: float = 0.5
    tau_l: int = 5
    eta_l: float = 0.01
    batch_size: int = 32
    sampling_fraction: float = 1.0
    # watermarking
    tau_w: int = 5
    eta_w: float = DESK_ETA_W
    k: float = 0.01
    wm_size: int = 100
    wm_source: str = "noise_pattern"
    wm_jitter: float = 0.1
    wm_levels: int = 0
    ood_images: str = ""
    ood_labels: str = ""
    waffle_iters: int = 0  # 0 means tau_w * n
    sigma: float = 0.01
    nu: float = 0.9
    # main task
    classes: int = 10
    input_dim: int = 784
    hidden: str = "128"
    per_class: int = 200
    test_per_class: int = 100
    noise_std: float = 0.25
    margin: int = 4
    partition: str = "iid"
    gamma: float = 0.5
    seed: int = 0
    threads: int = 0  # 0 means TRAMARK_THREADS or 1

    def __post_init__(self):
        self.validate()

    @property
    def warmup_rounds(self):
        return int(round(self.alpha * self.T))

    @property
    def layer_sizes(self):
        hidden = [int(h) for h in str(self.hidden).replace(",", " ").split() if h]
        return (self.input_dim, *hidden, self.classes)

    @property
    def effective_waffle_iters(self):
        return self.waffle_iters or self.tau_w * self.n

    def validate(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}", key)

        need(self.n >= 2, "n", "need at least 2 clients")
        need(self.T >= 1, "T", "need at least one round")
        need(0 <= self.alpha < 1, "alpha", "must lie in [0, 1)")
        need(self.warmup_rounds < self.T, "alpha", "warmup leaves no watermarking round")
        need(self.tau_l >= 0, "tau_l", "must be non-negative")
        need(self.tau_w >= 0, "tau_w", "must be non-negative")
        need(self.eta_l >= 0, "eta_l", "must be non-negative")
        need(self.eta_w >= 0, "eta_w", "must be non-negative")
        need(0 < self.k < 1, "k", "must lie in (0, 1)")
        need(self.wm_size >= 1, "wm_size", "must be positive")
        need(self.wm_source in ("noise_pattern", "ood_idx_dataset"), "wm_source",
             "must be noise_pattern or ood_idx_dataset")
        need(0 < self.nu <= 1, "nu", "must lie in (0, 1]")
        need(self.sigma >= 0, "sigma", "must be non-negative")
        need(self.batch_size >= 1, "batch_size", "must be positive")
        need(0 < self.sampling_fraction <= 1, "sampling_fraction", "must lie in (0, 1]")
        need(self.classes >= 2, "classes", "need at least 2 classes")
        need(self.partition in ("iid", "dirichlet"), "partition", "must be iid or dirichlet")
        need(self.gamma > 0, "gamma", "must be positive")
        need(self.noise_std >= 0, "noise_std", "must be non-negative")
        need(self.margin >= 0, "margin", "must be non-negative")
        try:
            self.layer_sizes
        except ValueError:
            raise ConfigError("hidden: expected comma separated integers", "hidden")

    def with_(self, **changes):
        return replace(self, **changes)

    def backbone_preset(self):
        return replace(self, eta_w=BACKBONE_ETA_W)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(key, raw):
    kind = _FIELDS[key].type
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}", key)
    return raw


def parse_config(text, base=None):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", line)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}", key)
        values[key] = _coerce(key, raw)
    return replace(base or ExperimentConfig(), **values)


def load_config(path):
    with open(path) as f:
        return parse_config(f.read())


def format_config(config):
    return "".join(f"{k} = {v}\n" for k, v in asdict(config).items())
