from django.conf import settings
from django.core.management.base import BaseCommand

from cli.runner import command_errors, load_translation_assets
from corpus.batching import encode_pairs
from corpus.io import CorpusError, read_parallel
from policies.policy import parse_policy, roll_in
from searnn.costs import SearnnError, compute_cost_vector
from searnn.sampling import sample_candidates

DEFAULTS = settings.SEARNN_SETTINGS


class Command(BaseCommand):
    help = 'Dump the candidates, roll-out completions and costs of one decoder cell'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--src', required=True)
        parser.add_argument('--tgt', required=True)
        parser.add_argument('--pair', type=int, default=0, help='Index of the sentence pair')
        parser.add_argument('--step', type=int, default=0, help='Decoder cell t')
        parser.add_argument('--rollin', default=DEFAULTS['ROLLIN'])
        parser.add_argument('--rollout', default=f"mixed:{DEFAULTS['ROLLOUT_MIX_P']}")
        parser.add_argument('--top-k', type=int, default=DEFAULTS['TOP_K'])
        parser.add_argument('--neighbors', type=int, default=DEFAULTS['NEIGHBORS'])
        parser.add_argument('--full', action='store_true', help='Use the whole vocabulary as candidates')
        parser.add_argument('--max-rollout-len', type=int, default=DEFAULTS['MAX_ROLLOUT_LEN'])
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--src-vocab')
        parser.add_argument('--tgt-vocab')

    def handle(self, *args, **options):
        with command_errors():
            rollin = parse_policy(options['rollin'])
            rollout = parse_policy(options['rollout'])
            _, model, src_vocab, tgt_vocab = load_translation_assets(
                options['checkpoint'], options['src_vocab'], options['tgt_vocab'],
            )
            pairs = encode_pairs(read_parallel(options['src'], options['tgt']), src_vocab, tgt_vocab)
            if not 0 <= options['pair'] < len(pairs):
                raise CorpusError(f"Pair index {options['pair']} outside corpus of {len(pairs)} pairs")
            pair = pairs[options['pair']]

            trajectory = roll_in(model, pair.source, pair.target, rollin, options['seed'])
            t = options['step']
            if not 0 <= t < trajectory.num_steps:
                raise SearnnError(f"Step {t} outside the {trajectory.num_steps} cells of pair {options['pair']}")
            scores = trajectory.score_vectors[t]
            if options['full']:
                candidates = list(range(len(tgt_vocab)))
            else:
                candidates = sample_candidates(scores, pair.target, t, options['top_k'], options['neighbors'])
            cost_vector = compute_cost_vector(
                model, trajectory, t, candidates, rollout, options['max_rollout_len'], options['seed'],
            )

        def words(ids):
            return ' '.join(tgt_vocab.id_to_token[i] for i in ids)

        self.stdout.write(f"Pair {options['pair']}, cell t={t}, roll-in {rollin}, roll-out {rollout}")
        self.stdout.write(f"Reference: {words(pair.target)}")
        self.stdout.write(f"Roll-in prefix: {words(trajectory.chosen_tokens[:t + 1])}")
        self.stdout.write(f"Gold next token: {tgt_vocab.id_to_token[pair.target[t + 1]]}")
        self.stdout.write(f"Candidates: {len(cost_vector)}")
        best = cost_vector.best_candidate()
        for token, cost, completion in zip(cost_vector.candidates, cost_vector.costs, cost_vector.completions):
            marker = '*' if token == best else ' '
            self.stdout.write(
                f"{marker} {tgt_vocab.id_to_token[token]:<12} cost {cost:.4f}  completion: {words(completion)}"
            )
