import hashlib
import json
import math


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class Config:
    batch_size = 25
    epochs = 200
    lr = 0.001  # constant learning rate, no schedule
    dropout = 0.5
    w_max = 1.0  # consistency weight ceiling before labeled-fraction scaling
    t_ramp = 80  # epochs until the ramp reaches w_max
    scale_w_max_by_labeled_fraction = True
    labeled_ratio = 0.1
    seed = 42
    max_len = 64  # L, tokens per sentence image
    embed_dim = 100  # D
    num_classes = 2  # C
    shared_filters = (128, 128, 128, 256, 256, 256)  # trunk convolutions
    path_filters = (512, 256, 128)  # convolutions of each path
    beta1 = 0.9
    beta2 = 0.999
    epsilon = 1e-8
    eval_every = 0  # 0 disables the held-out hook
    verbose = 1
    log_directory = 'logs'


class TrainConfig(Config):
    fields = ('batch_size', 'epochs', 'lr', 'dropout', 'w_max', 't_ramp', 'scale_w_max_by_labeled_fraction',
              'labeled_ratio', 'seed', 'max_len', 'embed_dim', 'num_classes', 'shared_filters', 'path_filters',
              'beta1', 'beta2', 'epsilon', 'eval_every', 'verbose', 'log_directory')

    def __init__(self, **overrides):
        for key, value in overrides.items():
            if key not in self.fields:
                raise ConfigError(key, "unknown configuration field")
            setattr(self, key, value)

    def validate(self):
        for name in ('batch_size', 'epochs', 't_ramp', 'max_len', 'embed_dim', 'num_classes'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        if self.max_len < 8:
            raise ConfigError('max_len', "must be at least 8 for three pooling stages")
        if self.embed_dim < 8:
            raise ConfigError('embed_dim', "must be at least 8 for three pooling stages")
        if self.num_classes < 2:
            raise ConfigError('num_classes', "must be at least 2")
        for name, count in (('shared_filters', 6), ('path_filters', 3)):
            plan = getattr(self, name)
            if (not isinstance(plan, (list, tuple)) or len(plan) != count
                    or any(not isinstance(width, int) or isinstance(width, bool) or width < 1 for width in plan)):
                raise ConfigError(name, f"must list {count} positive filter counts, got {plan!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError('seed', f"must be a non-negative integer, got {self.seed!r}")
        for name in ('dropout', 'labeled_ratio', 'lr', 'w_max', 'beta1', 'beta2', 'epsilon'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError(name, f"must be a finite number, got {value!r}")
        if not 0 <= self.dropout < 1:
            raise ConfigError('dropout', f"must lie in [0, 1), got {self.dropout}")
        if not 0 < self.labeled_ratio <= 1:
            raise ConfigError('labeled_ratio', f"must lie in (0, 1], got {self.labeled_ratio}")
        if self.lr <= 0:
            raise ConfigError('lr', f"must be positive, got {self.lr}")
        if self.w_max < 0:
            raise ConfigError('w_max', f"must be non-negative, got {self.w_max}")
        if not 0 <= self.beta1 < 1:
            raise ConfigError('beta1', f"must lie in [0, 1), got {self.beta1}")
        if not 0 <= self.beta2 < 1:
            raise ConfigError('beta2', f"must lie in [0, 1), got {self.beta2}")
        if self.epsilon <= 0:
            raise ConfigError('epsilon', f"must be positive, got {self.epsilon}")
        if not isinstance(self.eval_every, int) or self.eval_every < 0:
            raise ConfigError('eval_every', f"must be a non-negative integer, got {self.eval_every!r}")
        return self

    def effective_w_max(self, labeled_fraction):
        if self.scale_w_max_by_labeled_fraction:
            return self.w_max * labeled_fraction
        return self.w_max

    def to_dict(self):
        return {name: getattr(self, name) for name in self.fields}

    def fingerprint(self):
        # reporting fields do not change results
        values = {k: v for k, v in self.to_dict().items() if k not in ('verbose', 'log_directory', 'eval_every')}
        canonical = json.dumps(values, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


class RunConfig(TrainConfig):
    commands = ('train', 'evaluate', 'loeo', 'predict', 'gradcheck', 'sweep', 'convert', 'stats', 'fixture')
    path_fields = ('corpus', 'embeddings', 'checkpoint', 'out', 'pheme_root')
    fields = TrainConfig.fields + ('command',) + path_fields

    command = 'train'
    corpus = None
    embeddings = None
    checkpoint = None
    out = None
    pheme_root = None

    # inputs each command reads; outputs are created on demand
    required_inputs = {
        'train': ('corpus', 'embeddings'),
        'evaluate': ('corpus', 'embeddings', 'checkpoint'),
        'loeo': ('corpus', 'embeddings'),
        'sweep': ('corpus', 'embeddings'),
        'predict': ('corpus', 'embeddings', 'checkpoint'),
        'stats': ('corpus',),
        'convert': ('pheme_root',),
        'gradcheck': (),
        'fixture': (),
    }

    def validate(self):
        if self.command not in self.commands:
            raise ConfigError('command', f"must be one of {', '.join(self.commands)}")
        return super().validate()

    def validate_paths(self, exists):
        for name in self.required_inputs[self.command]:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(name, f"is required for '{self.command}'")
            if not exists(value):
                raise ConfigError(name, f"path does not exist: {value}")
        return self

    def train_config(self):
        return TrainConfig(**{name: getattr(self, name) for name in TrainConfig.fields})

    def fingerprint(self):
        # paths and command do not change results
        return self.train_config().fingerprint()


def load_config_file(path):
    with open(path, 'r', encoding='utf-8') as handle:
        try:
            values = json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigError('config', f"{path} is not valid JSON: {e}") from e
    if not isinstance(values, dict):
        raise ConfigError('config', f"{path} must hold a JSON object")
    return {key.replace('-', '_'): value for key, value in values.items()}


def resolve_run_config(file_values, flag_values):
    merged = dict(file_values or {})
    merged.update({key: value for key, value in (flag_values or {}).items() if value is not None})
    return RunConfig(**merged).validate()
