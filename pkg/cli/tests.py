import json
import tempfile
from io import StringIO
from pathlib import Path

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.db import connections
from django.test import SimpleTestCase
from rest_framework import serializers

from corpus.vocab import SPECIAL_TOKENS, Vocabulary
from seq2seq.model import ModelDims

from .checks import DIMS
from .runner import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, RESOLVED_CONFIG, resolve_run_config
from .serializers import flatten_errors


def run(*args, **kwargs):
    out = StringIO()
    call_command(*args, stdout=out, stderr=StringIO(), **kwargs)
    return out.getvalue()


class CommandTestCase(SimpleTestCase):
    """Fresh workspace with a small synthetic reversal corpus."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.corpus = self.root / 'corpus'
        run('make_synthetic', '--out', str(self.corpus), '--seed', '4', '--vocab-size', '6',
            '--min-len', '3', '--max-len', '5', '--sizes', '16', '4', '4')

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, name='run.json', output='run', **sections):
        raw = {
            'data': {
                'train_src': str(self.corpus / 'train.src'),
                'train_tgt': str(self.corpus / 'train.tgt'),
                'dev_src': str(self.corpus / 'dev.src'),
                'dev_tgt': str(self.corpus / 'dev.tgt'),
                'test_src': str(self.corpus / 'test.src'),
                'test_tgt': str(self.corpus / 'test.tgt'),
                'vocab_size': 100,
            },
            'model': {'embed': 4, 'hidden': 6, 'init_scale': 0.1},
            'train': {'max_steps': 2, 'batch_size': 4, 'eval_every': 2, 'max_decode_len': 8,
                      'train_eval_size': 5},
            'searnn': {'top_k': 2, 'neighbors': 2, 'max_rollout_len': 6},
            'output_dir': str(self.root / output),
            'seed': 3,
        }
        for section, values in sections.items():
            raw.setdefault(section, {}).update(values)
        path = self.root / name
        path.write_text(json.dumps(raw), encoding='utf-8')
        return path

    def train_run(self, output='run', objective='mle'):
        run('train', '--config', str(self.write_config(output=output)), '--objective', objective)
        return self.root / output


class MakeSyntheticCommandTests(CommandTestCase):

    def test_writes_every_split(self):
        for split, count in (('train', 16), ('dev', 4), ('test', 4)):
            src = (self.corpus / f"{split}.src").read_text(encoding='utf-8').splitlines()
            tgt = (self.corpus / f"{split}.tgt").read_text(encoding='utf-8').splitlines()
            self.assertEqual(len(src), count)
            self.assertEqual([line.split()[::-1] for line in src], [line.split() for line in tgt])


class PrepareCommandTests(CommandTestCase):

    def _lines(self, name, count):
        path = self.root / name
        path.write_text(''.join(f"w{i % 5} w{(i + 1) % 5}\n" for i in range(count)), encoding='utf-8')
        return str(path)

    def test_reports_pairs_and_writes_artifacts(self):
        out = run('prepare', '--src', self._lines('p.src', 10), '--tgt', self._lines('p.tgt', 10),
                  '--out', str(self.root / 'prepared'))
        self.assertIn('Pairs: 10', out)
        self.assertIn('length histogram', out)
        for name in ('src.vocab', 'tgt.vocab', 'corpus.cache'):
            self.assertTrue((self.root / 'prepared' / name).exists())

    def test_misaligned_files_write_nothing(self):
        with self.assertRaises(CommandError) as ctx:
            run('prepare', '--src', self._lines('p.src', 10), '--tgt', self._lines('p.tgt', 9),
                '--out', str(self.root / 'prepared'))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)
        self.assertIn('10', str(ctx.exception))
        self.assertFalse((self.root / 'prepared').exists())

    def test_rerun_is_byte_identical(self):
        src, tgt = str(self.corpus / 'train.src'), str(self.corpus / 'train.tgt')
        run('prepare', '--src', src, '--tgt', tgt, '--out', str(self.root / 'a'))
        run('prepare', '--src', src, '--tgt', tgt, '--out', str(self.root / 'b'))
        for name in ('src.vocab', 'tgt.vocab', 'corpus.cache'):
            self.assertEqual((self.root / 'a' / name).read_bytes(), (self.root / 'b' / name).read_bytes())


class TrainCommandTests(CommandTestCase):

    def test_mle_run_writes_resolved_config_and_metrics(self):
        run_dir = self.train_run(objective='mle')
        resolved = json.loads((run_dir / RESOLVED_CONFIG).read_text(encoding='utf-8'))
        self.assertEqual(resolved['train']['objective'], 'mle')
        self.assertEqual(resolved['searnn']['rollin'], 'reference')
        self.assertEqual(resolved['searnn']['rollout'], 'mixed:0.5')
        self.assertEqual(resolved['train']['threads'], 1)
        self.assertFalse(resolved['model']['attention'])
        for name in ('metrics.jsonl', 'best.srnn', 'last.srnn', 'src.vocab', 'tgt.vocab'):
            self.assertTrue((run_dir / name).exists(), name)

    def test_searnn_rerun_from_resolved_config_is_identical(self):
        first = self.train_run(output='first', objective='searnn')
        resolved = json.loads((first / RESOLVED_CONFIG).read_text(encoding='utf-8'))
        resolved['output_dir'] = str(self.root / 'second')
        path = self.root / 'again.json'
        path.write_text(json.dumps(resolved), encoding='utf-8')
        run('train', '--config', str(path))
        self.assertEqual(
            (first / 'metrics.jsonl').read_bytes(), (self.root / 'second' / 'metrics.jsonl').read_bytes(),
        )

    def test_threads_do_not_change_results(self):
        single = self.train_run(output='single', objective='searnn')
        run('train', '--config', str(self.write_config(output='threaded')), '--objective', 'searnn',
            '--threads', '3')
        self.assertEqual(
            (single / 'metrics.jsonl').read_bytes(), (self.root / 'threaded' / 'metrics.jsonl').read_bytes(),
        )

    def test_invalid_policy_lists_allowed_values(self):
        path = self.write_config(searnn={'rollin': 'oracle'})
        with self.assertRaises(CommandError) as ctx:
            run('train', '--config', str(path))
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)
        message = str(ctx.exception)
        self.assertIn('searnn.rollin', message)
        for allowed in ('reference', 'learned', 'mixed:<p>'):
            self.assertIn(allowed, message)

    def test_unknown_key_reports_dotted_path(self):
        path = self.write_config(train={'learning_rate': 0.1})
        with self.assertRaises(CommandError) as ctx:
            run('train', '--config', str(path))
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)
        self.assertIn('train.learning_rate', str(ctx.exception))

    def test_set_override(self):
        path = self.write_config()
        with self.assertRaises(CommandError) as ctx:
            run('train', '--config', str(path), '--set', 'searnn.alpha=-1')
        self.assertIn('searnn.alpha', str(ctx.exception))

    def test_missing_corpus_file(self):
        path = self.write_config(data={'dev_src': str(self.root / 'absent.src')})
        with self.assertRaises(CommandError) as ctx:
            run('train', '--config', str(path))
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)
        self.assertIn('data.dev_src', str(ctx.exception))


class EvaluateCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.run_dir = self.train_run()
        self.checkpoint = str(self.run_dir / 'best.srnn')

    def test_prints_bleu_and_appends_test_record(self):
        before = len((self.run_dir / 'metrics.jsonl').read_text(encoding='utf-8').splitlines())
        out = run('evaluate', '--checkpoint', self.checkpoint,
                  '--src', str(self.corpus / 'test.src'), '--tgt', str(self.corpus / 'test.tgt'))
        self.assertIn('BLEU: ', out)
        lines = (self.run_dir / 'metrics.jsonl').read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(lines), before + 1)
        self.assertEqual(json.loads(lines[-1])['split'], 'test')

    def test_empty_test_file(self):
        empty = self.root / 'empty.txt'
        empty.write_text('', encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            run('evaluate', '--checkpoint', self.checkpoint, '--src', str(empty), '--tgt', str(empty))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)

    def test_refuses_mismatched_vocabulary(self):
        other = self.root / 'other.vocab'
        Vocabulary(id_to_token=SPECIAL_TOKENS + ['zz']).save(other)
        with self.assertRaises(CommandError) as ctx:
            run('evaluate', '--checkpoint', self.checkpoint, '--src-vocab', str(other),
                '--src', str(self.corpus / 'test.src'), '--tgt', str(self.corpus / 'test.tgt'))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)
        self.assertIn('vocabulary', str(ctx.exception))


class TranslateCommandTests(CommandTestCase):

    def test_one_output_line_per_input_line(self):
        self.train_run()
        source = self.root / 'input.txt'
        source.write_text('w1 w2 w3\n\nw4 w0\n', encoding='utf-8')
        args = ('translate', '--checkpoint', str(self.root / 'run' / 'best.srnn'), '--input', str(source))
        first = run(*args)
        self.assertEqual(first, run(*args))
        lines = first.split('\n')
        self.assertEqual(len(lines), 4)
        self.assertEqual(lines[1], '')
        self.assertEqual(lines[3], '')


class GradcheckCommandTests(SimpleTestCase):

    def test_every_layer_passes_over_twenty_seeds(self):
        out = run('gradcheck', '--seeds', '20')
        self.assertIn('All 18 layers passed (20 seeds)', out)
        self.assertNotIn('FAIL', out)
        for name in DIMS['small'].model_dims().param_shapes():
            self.assertIn(f"    {name} ", out)

    def test_corrupted_rule_fails_with_numeric_exit(self):
        with self.assertRaises(CommandError) as ctx:
            run('gradcheck', '--seeds', '3', '--layer', 'tanh', '--layer', 'add', '--corrupt', 'tanh')
        self.assertEqual(ctx.exception.returncode, EXIT_NUMERIC)
        self.assertIn('tanh', str(ctx.exception))
        self.assertNotIn('add', str(ctx.exception))


class RolloutDebugCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.train_run()
        self.base = ('rollout_debug', '--checkpoint', str(self.root / 'run' / 'best.srnn'),
                     '--src', str(self.corpus / 'dev.src'), '--tgt', str(self.corpus / 'dev.tgt'),
                     '--pair', '1', '--step', '1')

    def test_reference_policies_mark_gold_with_zero_cost(self):
        out = run(*self.base, '--rollin', 'reference', '--rollout', 'reference')
        gold = next(line for line in out.splitlines() if line.startswith('Gold next token: ')).split(': ', 1)[1]
        self.assertIn(f"* {gold:<12} cost 0.0000", out)
        self.assertEqual(sum(1 for line in out.splitlines() if line.startswith('*')), 1)

    def test_candidate_count_is_capped_by_vocabulary(self):
        vocab = Vocabulary.load(self.root / 'run' / 'tgt.vocab')
        out = run(*self.base)
        self.assertIn(f"Candidates: {min(25, len(vocab))}", out)
        self.assertEqual(out, run(*self.base))

    def test_step_out_of_range(self):
        with self.assertRaises(CommandError) as ctx:
            run(*self.base[:-1], '99')
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)


class CompareCommandTests(CommandTestCase):

    def test_writes_comparison_report(self):
        path = self.write_config(output='cmp')
        out = run('compare', '--config', str(path), '--seeds', '1', '2')
        self.assertIn('Relative improvement', out)
        report = json.loads((self.root / 'cmp' / 'comparison.json').read_text(encoding='utf-8'))
        self.assertEqual(report['seeds'], [1, 2])
        self.assertEqual(set(report['objectives']), {'mle', 'searnn'})
        for objective in ('mle', 'searnn'):
            for seed in (1, 2):
                resolved = json.loads(
                    (self.root / 'cmp' / f"{objective}-seed{seed}" / RESOLVED_CONFIG).read_text(encoding='utf-8')
                )
                self.assertEqual(resolved['train']['objective'], objective)
                self.assertEqual(resolved['seed'], seed)


class ConfigResolutionTests(SimpleTestCase):

    def test_flatten_errors_builds_dotted_paths(self):
        detail = {'searnn': {'rollin': ['bad policy'], 'non_field_errors': ['clash']}, 'seed': ['not an int']}
        self.assertEqual(
            sorted(flatten_errors(detail)),
            ['searnn.rollin: bad policy', 'searnn: clash', 'seed: not an int'],
        )

    def test_missing_training_corpus(self):
        with self.assertRaises(serializers.ValidationError) as ctx:
            resolve_run_config({})
        self.assertTrue(any(line.startswith('data:') for line in flatten_errors(ctx.exception.detail)))

    def test_model_dims_follow_vocabularies(self):
        with tempfile.TemporaryDirectory() as tmp:
            src = Path(tmp) / 'a.src'
            src.write_text('x\n', encoding='utf-8')
            config = resolve_run_config({'data': {'train_src': str(src), 'train_tgt': str(src)}},
                                        ['model.hidden=7', 'searnn.sampling="full"'])
        vocab = Vocabulary(id_to_token=SPECIAL_TOKENS + ['x'])
        self.assertEqual(config.model_dims(vocab, vocab), ModelDims(5, 5, embed=64, hidden=7))
        self.assertTrue(config.searnn_config().sampling.full)


class ProjectSettingsTests(SimpleTestCase):

    def test_runs_without_database_or_contrib_apps(self):
        self.assertFalse([app for app in settings.INSTALLED_APPS if app.startswith('django.contrib')])
        self.assertEqual(connections['default'].settings_dict['ENGINE'], 'django.db.backends.dummy')
