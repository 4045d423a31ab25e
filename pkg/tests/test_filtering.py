"""Unit and randomized property tests for the 2D validity filter chain."""

import numpy as np

from mocap_geom.core import IrMask, ReflectorId
from mocap_geom.filtering import (FilterParams, apply_filters, confidence_cut,
                                  dedupe_colocated, enforce_uniqueness,
                                  validate_region)
from mocap_geom.maps import ReflectorEstimate2D


def _est(idx, x, y, e_total, e_s=None):
    e_s = e_total if e_s is None else e_s
    return ReflectorEstimate2D(ReflectorId(idx), (float(x), float(y)),
                               e_s, 0.0, e_total, 0)


def _mask_with_component(pixels, shape=(40, 40)):
    bits = np.zeros(shape, dtype=bool)
    for u, v in pixels:
        bits[v, u] = True
    return IrMask(bits)


class TestValidateRegion:
    def test_five_pixel_component_accepted_at_bmin_five(self):
        mask = _mask_with_component([(10, 10), (11, 10), (12, 10), (10, 11), (11, 11)])
        assert validate_region(_est(1, 11, 10, 0.9), mask, b_min=5)

    def test_estimate_on_background_rejected(self):
        mask = _mask_with_component([(10, 10)])
        assert not validate_region(_est(1, 25, 25, 0.9), mask, b_min=1)

    def test_four_pixel_component_rejected_flood_fill_oracle(self):
        pixels = [(10, 10), (11, 10), (10, 11), (11, 11)]
        mask = _mask_with_component(pixels)
        # flood-fill oracle
        stack, seen = [(10, 10)], set()
        pixset = set(pixels)
        while stack:
            p = stack.pop()
            if p in seen or p not in pixset:
                continue
            seen.add(p)
            stack.extend((p[0] + du, p[1] + dv)
                         for du in (-1, 0, 1) for dv in (-1, 0, 1))
        assert len(seen) == 4
        assert not validate_region(_est(1, 10, 10, 0.9), mask, b_min=5)


class TestDedupeColocated:
    def test_close_pair_keeps_higher_confidence(self):
        ests = [_est(1, 10, 10, 0.9), _est(2, 11, 11, 0.5)]
        out = dedupe_colocated(ests, 3.0)
        assert len(out) == 1
        assert out[0].reflector.index == 1

    def test_distant_pair_both_survive(self):
        ests = [_est(1, 10, 10, 0.9), _est(2, 20, 10, 0.5)]
        assert len(dedupe_colocated(ests, 3.0)) == 2

    def test_chain_suppression_uses_removed_estimates(self):
        # A-B 2px, B-C 2px, A-C 4px: B removed by A, C removed by (removed) B.
        a = _est(1, 10, 10, 0.9)
        b = _est(2, 12, 10, 0.8)
        c = _est(3, 14, 10, 0.7)
        out = dedupe_colocated([c, a, b], 3.0)
        assert [e.reflector.index for e in out] == [1]
        # exhaustive pairwise oracle for the same greedy rule
        ranked = sorted([a, b, c], key=lambda e: -e.e_total)
        survivors = []
        for i, e in enumerate(ranked):
            if not any(np.hypot(o.position[0] - e.position[0],
                                o.position[1] - e.position[1]) < 3.0
                       for o in ranked[:i] if o.reflector != e.reflector):
                survivors.append(e)
        assert [e.reflector.index for e in survivors] == [1]

    def test_same_reflector_not_deduped(self):
        ests = [_est(4, 10, 10, 0.9), _est(4, 11, 10, 0.5)]
        assert len(dedupe_colocated(ests, 3.0)) == 2

    def test_zero_distance_passes_everything(self):
        ests = [_est(1, 10, 10, 0.9), _est(2, 10, 10, 0.5)]
        assert len(dedupe_colocated(ests, 0.0)) == 2


class TestEnforceUniqueness:
    def test_duplicate_keeps_highest(self):
        out = enforce_uniqueness([_est(13, 10, 10, 0.7), _est(13, 30, 30, 0.6)])
        assert len(out) == 1
        assert out[0].e_total == 0.7

    def test_unique_list_unchanged(self):
        ests = [_est(1, 5, 5, 0.5), _est(2, 9, 9, 0.6)]
        out = enforce_uniqueness(ests)
        assert {e.reflector.index for e in out} == {1, 2}

    def test_matches_sort_and_take_first_oracle(self):
        rng = np.random.default_rng(23)
        ests = []
        for idx in (3, 7):
            for _ in range(3):
                ests.append(_est(idx, rng.integers(0, 30), rng.integers(0, 30),
                                 float(rng.random())))
        out = enforce_uniqueness(ests)
        assert len(out) == 2
        for idx in (3, 7):
            expected = max((e for e in ests if e.reflector.index == idx),
                           key=lambda e: e.e_total)
            got = next(e for e in out if e.reflector.index == idx)
            assert got.e_total == expected.e_total


def _random_instance(rng, mask_all=False):
    shape = (48, 48)
    bits = np.zeros(shape, dtype=bool) if not mask_all else np.ones(shape, dtype=bool)
    ests = []
    n = rng.integers(1, 12)
    for _ in range(n):
        idx = int(rng.integers(1, 27))
        x = int(rng.integers(2, 45))
        y = int(rng.integers(2, 45))
        if not mask_all and rng.random() < 0.8:
            # paint a component of random size around the estimate
            size = int(rng.integers(1, 9))
            painted = 0
            for du in range(-2, 3):
                for dv in range(-2, 3):
                    if painted >= size:
                        break
                    bits[y + dv, x + du] = True
                    painted += 1
        ests.append(_est(idx, x, y, float(rng.random())))
    return ests, IrMask(bits)


class TestFilterChainProperties:
    def test_idempotent_and_subset_on_randomized_sets(self):
        rng = np.random.default_rng(101)
        params = FilterParams(b_min=5, colocate_dist=3.0, c_min=0.4)
        for _ in range(300):
            ests, mask = _random_instance(rng)
            once = apply_filters(ests, mask, params)
            twice = apply_filters(once, mask, params)
            assert once == twice
            assert len(once) <= len(ests)
            assert all(e in ests for e in once)

    def test_permissive_params_pass_everything_on_full_mask(self):
        rng = np.random.default_rng(55)
        params = FilterParams(b_min=1, colocate_dist=0.0, c_min=0.0)
        for _ in range(100):
            ests, mask = _random_instance(rng, mask_all=True)
            unique = enforce_uniqueness(ests)
            kept = apply_filters(ests, mask, params)
            # only uniqueness and the (vacuous at 0) confidence cut may drop
            assert len(kept) == len([e for e in unique if e.e_total > 0.0])

    def test_confidence_cut_is_strict(self):
        ests = [_est(1, 5, 5, 0.4), _est(2, 9, 9, 0.41)]
        out = confidence_cut(ests, 0.4)
        assert [e.reflector.index for e in out] == [2]
