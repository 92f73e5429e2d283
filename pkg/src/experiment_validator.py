import logging
from typing import Dict, List, Tuple

import numpy as np

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class ExperimentValidator:
    def __init__(self):
        # Keys every topology document must carry
        self.expected_keys = {
            'topology': ['aps', 'users', 'edges'],
            'summary': ['value', 'users', 'n_k', 'trials', 'bit_errors', 'bits_total',
                        'ber', 'frame_errors', 'fer', 'per_user'],
        }

        # Accounting tolerance for recomputed rates
        self.rate_tolerance = 1e-12

    def validate_topology(self, doc: Dict) -> Tuple[bool, Dict]:
        """
        Validate a topology document {"aps": B, "users": K, "edges": [[b, k], ...]}.
        """
        issues = {}

        missing = set(self.expected_keys['topology']) - set(doc)
        if missing:
            issues['missing_keys'] = sorted(missing)
            return False, issues

        aps, users, edges = doc['aps'], doc['users'], doc['edges']
        if not isinstance(aps, int) or aps < 1:
            issues['invalid_aps'] = aps
        if not isinstance(users, int) or users < 1:
            issues['invalid_users'] = users
        if issues:
            return False, issues

        # Endpoints must be integer indices
        malformed = {i for i, edge in enumerate(edges)
                     if not isinstance(edge, (list, tuple)) or len(edge) != 2
                     or not all(isinstance(end, int) and not isinstance(end, bool) for end in edge)}
        if malformed:
            issues['non_integer_edges'] = [edges[i] for i in sorted(malformed)]

        # Check edge endpoints
        out_of_range = {i for i, edge in enumerate(edges) if i not in malformed
                        and (not (0 <= edge[0] < aps) or not (0 <= edge[1] < users))}
        if out_of_range:
            issues['edges_out_of_range'] = [edges[i] for i in sorted(out_of_range)]

        pairs = [tuple(edge) for i, edge in enumerate(edges) if i not in malformed | out_of_range]
        duplicates = sorted({pair for pair in pairs if pairs.count(pair) > 1})
        if duplicates:
            issues['duplicate_edges'] = [list(pair) for pair in duplicates]

        # Every AP hears someone, every user reaches some AP
        idle_aps = sorted(set(range(aps)) - {b for b, _ in pairs})
        if idle_aps:
            issues['aps_without_users'] = idle_aps
        orphan_users = sorted(set(range(users)) - {k for _, k in pairs})
        if orphan_users:
            issues['users_without_aps'] = orphan_users

        return len(issues) == 0, issues

    def validate_summary(self, summary: Dict) -> Tuple[bool, Dict]:
        """
        Validate one sweep summary: BER/FER accounting and per-user sums.
        """
        issues = {}

        missing = set(self.expected_keys['summary']) - set(summary)
        if missing:
            issues['missing_keys'] = sorted(missing)
            return False, issues

        if summary['bits_total'] <= 0:
            issues['no_bits'] = summary['bits_total']
        else:
            expected_ber = summary['bit_errors'] / summary['bits_total']
            if abs(summary['ber'] - expected_ber) > self.rate_tolerance:
                issues['ber_mismatch'] = {'reported': summary['ber'], 'expected': expected_ber}
        if not 0.0 <= summary['ber'] <= 1.0:
            issues['ber_out_of_range'] = summary['ber']
        if summary['trials'] > 0:
            expected_fer = summary['frame_errors'] / summary['trials']
            if abs(summary['fer'] - expected_fer) > self.rate_tolerance:
                issues['fer_mismatch'] = {'reported': summary['fer'], 'expected': expected_fer}

        per_user: List[Dict] = summary['per_user']
        if per_user:
            user_bits = sum(entry['bits_total'] for entry in per_user)
            user_errors = sum(entry['bit_errors'] for entry in per_user)
            if user_bits != summary['bits_total']:
                issues['per_user_bits_mismatch'] = {'sum': user_bits, 'total': summary['bits_total']}
            if user_errors != summary['bit_errors']:
                issues['per_user_errors_mismatch'] = {'sum': user_errors, 'total': summary['bit_errors']}

        return len(issues) == 0, issues

    def validate_pmfs(self, pmfs: np.ndarray, tolerance: float = 1e-9) -> Tuple[bool, Dict]:
        """
        Check that every row of an L x q array is a probability mass function.
        """
        issues = {}
        if not np.all(np.isfinite(pmfs)):
            issues['non_finite_sections'] = np.nonzero(~np.isfinite(pmfs).all(axis=1))[0].tolist()
        if np.any(pmfs < 0):
            issues['negative_sections'] = np.nonzero((pmfs < 0).any(axis=1))[0].tolist()
        off = np.abs(pmfs.sum(axis=1) - 1.0) > tolerance
        if off.any():
            issues['unnormalized_sections'] = np.nonzero(off)[0].tolist()
        return len(issues) == 0, issues

    def run_all_validations(self, summaries: List[Dict]) -> Dict[str, Dict]:
        """
        Run summary validations on every sweep point.
        Returns validation results keyed by sweep point.
        """
        validation_results = {}

        for index, summary in enumerate(summaries):
            results = {}
            key = f"point_{index}"
            try:
                results['status'], results['issues'] = self.validate_summary(summary)
            except Exception as e:
                results['status'] = False
                results['issues'] = {'error': str(e)}
                logger.error(f"Error validating {key}: {str(e)}")

            if not results['status']:
                logger.warning(f"Validation issues for {key}: {results['issues']}")
            validation_results[key] = results

        return validation_results
