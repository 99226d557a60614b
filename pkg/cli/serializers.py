"""
Serializers for SearnnHQ run configuration files

A run config is a JSON object with four sections (data, model, train, searnn)
plus output_dir and seed. Every field has a default taken from
settings.SEARNN_SETTINGS except the training corpus paths. Unknown keys are
rejected at every level so a typo never silently falls back to a default.
"""

from collections.abc import Mapping
from pathlib import Path
from typing import Dict, Iterator

from django.conf import settings
from rest_framework import serializers

from policies.policy import POLICY_CHOICES, PolicyError, parse_policy
from searnn.losses import LOSS_CHOICES
from trainer.engine import OBJECTIVES

DEFAULTS = settings.SEARNN_SETTINGS

SAMPLED = 'sampled'
FULL = 'full'
SAMPLING_CHOICES = (SAMPLED, FULL)

SECTIONS = ('data', 'model', 'train', 'searnn')


def flatten_errors(detail, prefix: str = '') -> Iterator[str]:
    """Yield "dotted.key.path: message" lines from nested DRF error details."""
    if isinstance(detail, Mapping):
        for key, value in detail.items():
            if key == 'non_field_errors':
                path = prefix or 'config'
            else:
                path = f"{prefix}.{key}" if prefix else str(key)
            yield from flatten_errors(value, path)
    elif isinstance(detail, (list, tuple)):
        for item in detail:
            yield from flatten_errors(item, prefix)
    else:
        yield f"{prefix or 'config'}: {detail}"


class StrictSerializer(serializers.Serializer):
    """Serializer that refuses keys it does not declare."""

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError(
                    {key: [f"Unknown configuration key; allowed: {', '.join(self.fields)}."] for key in unknown}
                )
        return super().to_internal_value(data)


class PolicyField(serializers.Field):
    """A roll-in/roll-out policy string ("reference", "learned", "mixed:<p>")."""

    default_error_messages = {
        'invalid': '"{input}" is not a valid policy; allowed values: {choices}.',
    }

    def to_internal_value(self, data):
        try:
            return parse_policy(data)
        except PolicyError:
            self.fail('invalid', input=data, choices=', '.join(POLICY_CHOICES))

    def to_representation(self, value):
        return str(value)


class DataConfigSerializer(StrictSerializer):
    """Corpus paths and vocabulary options."""

    train_src = serializers.CharField()
    train_tgt = serializers.CharField()
    dev_src = serializers.CharField(allow_null=True, default=None)
    dev_tgt = serializers.CharField(allow_null=True, default=None)
    test_src = serializers.CharField(allow_null=True, default=None)
    test_tgt = serializers.CharField(allow_null=True, default=None)
    src_vocab = serializers.CharField(allow_null=True, default=None)
    tgt_vocab = serializers.CharField(allow_null=True, default=None)
    vocab_size = serializers.IntegerField(min_value=4, default=DEFAULTS['VOCAB_SIZE'])
    min_freq = serializers.IntegerField(min_value=1, default=DEFAULTS['MIN_FREQ'])
    bucket_width = serializers.IntegerField(min_value=1, default=DEFAULTS['BUCKET_WIDTH'])

    PATH_FIELDS = ('train_src', 'train_tgt', 'dev_src', 'dev_tgt', 'test_src', 'test_tgt',
                   'src_vocab', 'tgt_vocab')

    def validate(self, attrs):
        errors = {}
        for name in self.PATH_FIELDS:
            path = attrs.get(name)
            if path is not None and not Path(path).is_file():
                errors[name] = [f"File not found: {path}"]
        for split in ('dev', 'test'):
            if (attrs.get(f"{split}_src") is None) != (attrs.get(f"{split}_tgt") is None):
                errors[f"{split}_tgt"] = [f"{split}_src and {split}_tgt must be given together."]
        if (attrs.get('src_vocab') is None) != (attrs.get('tgt_vocab') is None):
            errors['tgt_vocab'] = ["src_vocab and tgt_vocab must be given together."]
        if errors:
            raise serializers.ValidationError(errors)
        return attrs


class ModelConfigSerializer(StrictSerializer):
    embed = serializers.IntegerField(min_value=1, default=DEFAULTS['EMBED_SIZE'])
    hidden = serializers.IntegerField(min_value=1, default=DEFAULTS['HIDDEN_SIZE'])
    init_scale = serializers.FloatField(default=DEFAULTS['INIT_SCALE'])
    attention = serializers.BooleanField(default=False)

    def validate_attention(self, value):
        if value:
            raise serializers.ValidationError("Only the encoder-decoder without attention is implemented.")
        return value

    def validate_init_scale(self, value):
        if value <= 0:
            raise serializers.ValidationError("init_scale must be positive.")
        return value


class TrainConfigSerializer(StrictSerializer):
    objective = serializers.ChoiceField(choices=OBJECTIVES, default=OBJECTIVES[0])
    lr = serializers.FloatField(default=DEFAULTS['LEARNING_RATE'])
    max_steps = serializers.IntegerField(min_value=1, default=DEFAULTS['MAX_STEPS'])
    batch_size = serializers.IntegerField(min_value=1, default=DEFAULTS['BATCH_SIZE'])
    eval_every = serializers.IntegerField(min_value=1, default=DEFAULTS['EVAL_EVERY'])
    anneal_factor = serializers.FloatField(default=DEFAULTS['ANNEAL_FACTOR'])
    anneal_patience = serializers.IntegerField(min_value=1, default=DEFAULTS['ANNEAL_PATIENCE'])
    lr_floor = serializers.FloatField(min_value=0.0, default=DEFAULTS['LR_FLOOR'])
    clip_norm = serializers.FloatField(min_value=0.0, default=DEFAULTS['CLIP_NORM'])
    max_decode_len = serializers.IntegerField(min_value=1, default=DEFAULTS['MAX_DECODE_LEN'])
    train_eval_size = serializers.IntegerField(min_value=0, default=DEFAULTS['TRAIN_EVAL_SIZE'])
    threads = serializers.IntegerField(min_value=1, default=settings.SEARNN_THREADS)
    log_wall_clock = serializers.BooleanField(default=False)

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError("lr must be positive.")
        return value

    def validate_anneal_factor(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError("anneal_factor must lie strictly between 0 and 1.")
        return value


class SearnnConfigSerializer(StrictSerializer):
    rollin = PolicyField(default=lambda: parse_policy(DEFAULTS['ROLLIN']))
    rollout = PolicyField(default=lambda: parse_policy(f"mixed:{DEFAULTS['ROLLOUT_MIX_P']}"))
    loss = serializers.ChoiceField(choices=LOSS_CHOICES, default=DEFAULTS['LOSS'])
    alpha = serializers.FloatField(default=DEFAULTS['ALPHA'])
    sampling = serializers.ChoiceField(choices=SAMPLING_CHOICES, default=SAMPLED)
    top_k = serializers.IntegerField(min_value=0, default=DEFAULTS['TOP_K'])
    neighbors = serializers.IntegerField(min_value=0, default=DEFAULTS['NEIGHBORS'])
    max_rollout_len = serializers.IntegerField(min_value=1, default=DEFAULTS['MAX_ROLLOUT_LEN'])

    def validate_alpha(self, value):
        if value <= 0:
            raise serializers.ValidationError("alpha must be positive.")
        return value

    def validate(self, attrs):
        if attrs['sampling'] == SAMPLED and attrs['top_k'] + attrs['neighbors'] < 1:
            raise serializers.ValidationError({'neighbors': ["top_k + neighbors must be at least 1."]})
        return attrs


class RunConfigSerializer(StrictSerializer):
    """
    Whole run configuration.

    Missing sections are materialized from their defaults so that the
    serialized form (config.resolved.json) always lists every setting.
    """

    data = DataConfigSerializer()
    model = ModelConfigSerializer()
    train = TrainConfigSerializer()
    searnn = SearnnConfigSerializer()
    output_dir = serializers.CharField(default=settings.SEARNN_OUTPUT_DIR)
    seed = serializers.IntegerField(default=0)

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            data = {**{section: {} for section in SECTIONS[1:]}, **data}
        return super().to_internal_value(data)


def set_override(raw: Dict, dotted_key: str, value) -> Dict:
    """Assign `value` at `section.key` inside a raw (unvalidated) config dict."""
    parts = [part for part in dotted_key.split('.') if part]
    if not parts:
        raise serializers.ValidationError({'config': [f"Empty override key {dotted_key!r}."]})
    node = raw
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value
    return raw
