#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rbm_lab::bounds::{max_error_bound, universal_hidden_units};
use rbm_lab::constructor::{append_component, build_mixture_rbm, AppendSpec};
use rbm_lab::distributions::{block_conditionals, random_distribution, random_mixture};
use rbm_lab::experiments::random_partial_partition;
use rbm_lab::projections::{kl, max_divergence, project, project_partition, ModelClass};
use rbm_lab::rbm::{
    log_likelihood, ml_gradient, random_init, random_init_with, train_ml, visible_distribution,
    RbmParams, TrainConfig,
};
use rbm_lab::statespace::{balanced_cubical_partition, enumerate_cubical_partitions};
use rbm_lab::{
    Distribution, Face, MixtureComponent, MixtureOfProducts, Partition, ProductDistribution,
};

fn face_strategy(max_n: usize) -> impl Strategy<Value = Face> {
    (1..=max_n).prop_flat_map(|n| {
        (Just(n), 0..1usize << n, 0..1usize << n)
            .prop_map(|(n, mask, vals)| Face::new(n, mask, vals & mask).unwrap())
    })
}

fn cubical_partition(n: usize, seed: u64) -> Partition {
    let all: Vec<Partition> = enumerate_cubical_partitions(n, 1 << n).unwrap().collect();
    all[(seed as usize) % all.len()].clone()
}

/// `true` if `block` is a face: its size is a power of two and it contains
/// every state that agrees with it on the coordinates it holds constant.
fn is_face_oracle(n: usize, block: &[usize]) -> bool {
    if !block.len().is_power_of_two() {
        return false;
    }
    let (mut ones, mut zeros) = (usize::MAX, usize::MAX);
    for &s in block {
        ones &= s;
        zeros &= !s;
    }
    let fixed = (ones | zeros) & ((1 << n) - 1);
    let free = ((1 << n) - 1) & !fixed;
    block.len() == 1 << free.count_ones()
}

fn set_partitions(items: &[usize]) -> Vec<Vec<Vec<usize>>> {
    match items.split_first() {
        None => vec![Vec::new()],
        Some((&first, rest)) => {
            let mut out = Vec::new();
            for p in set_partitions(rest) {
                for i in 0..p.len() {
                    let mut q = p.clone();
                    q[i].push(first);
                    out.push(q);
                }
                let mut q = p.clone();
                q.push(vec![first]);
                out.push(q);
            }
            out
        }
    }
}

fn canonical(blocks: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut b: Vec<Vec<usize>> = blocks
        .iter()
        .map(|x| {
            let mut x = x.clone();
            x.sort_unstable();
            x
        })
        .collect();
    b.sort();
    b
}

#[test]
fn enumeration_matches_brute_force() {
    for n in 1..=3usize {
        let states: Vec<usize> = (0..1 << n).collect();
        let oracle: BTreeSet<Vec<Vec<usize>>> = set_partitions(&states)
            .into_iter()
            .filter(|p| p.iter().all(|b| is_face_oracle(n, b)))
            .map(|p| canonical(&p))
            .collect();
        for max_blocks in 1..=1usize << n {
            let expected: BTreeSet<_> = oracle
                .iter()
                .filter(|p| p.len() <= max_blocks)
                .cloned()
                .collect();
            let got: Vec<Vec<Vec<usize>>> = enumerate_cubical_partitions(n, max_blocks)
                .unwrap()
                .map(|p| canonical(p.blocks()))
                .collect();
            let got_set: BTreeSet<_> = got.iter().cloned().collect();
            assert_eq!(got.len(), got_set.len(), "duplicates at n = {n}");
            assert_eq!(got_set, expected, "n = {n}, max_blocks = {max_blocks}");
        }
    }
}

#[test]
fn max_divergence_is_never_exceeded() {
    let models = vec![
        ModelClass::Independence(Face::full(3).unwrap()),
        ModelClass::Independence(Face::full(4).unwrap()),
        ModelClass::Partition(balanced_cubical_partition(4, 3).unwrap()),
        ModelClass::Partition(cubical_partition(3, 17)),
        ModelClass::mixture(balanced_cubical_partition(4, 2).unwrap()).unwrap(),
        ModelClass::mixture(cubical_partition(4, 1234)).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for model in &models {
        let (value, witness) = max_divergence(model).unwrap();
        let d = project(&witness, model).unwrap().divergence.to_f64();
        assert!(
            (d - value).abs() <= 1e-12,
            "witness attains {d}, claimed {value}"
        );
        let n = model.n();
        for _ in 0..100_000 / models.len() {
            // sparse draws reach the corners where the maximum sits
            let k = rng.gen_range(1..=3);
            let mut w = vec![0.0; 1 << n];
            for _ in 0..k {
                w[rng.gen_range(0..1usize << n)] += rng.gen::<f64>() + 1e-3;
            }
            let p = Distribution::from_weights(n, w).unwrap();
            let dp = project(&p, model).unwrap().divergence.to_f64();
            assert!(dp <= value + 1e-12, "{dp} exceeds {value}");
        }
    }
}

#[test]
fn universality_by_multistart_ml() {
    for n in 2..=4usize {
        let m = universal_hidden_units(n) as usize;
        for t in 0..3u64 {
            let target = random_distribution(n, 500 + t).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(t);
            let cfg = TrainConfig {
                learning_rate: 1.0,
                epochs: 4000,
                ..Default::default()
            };
            let best = (0..4)
                .map(|_| {
                    let init = random_init_with(n, m, 1.0, &mut rng).unwrap();
                    train_ml(&init, &target, &cfg).unwrap().final_kl()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-2, "n = {n}, m = {m}: best KL {best}");
        }
    }
}

#[test]
fn trained_divergence_respects_the_bound() {
    for n in 2..=4usize {
        let mut targets = vec![rbm_lab::distributions::parity_distribution(n).unwrap()];
        targets.extend((0..50).map(|s| random_distribution(n, 9000 + s).unwrap()));
        let cfg = TrainConfig {
            learning_rate: 1.0,
            epochs: 2000,
            ..Default::default()
        };
        for m in 0..=universal_hidden_units(n) as usize + 1 {
            let bound = max_error_bound(n, m as u64);
            targets.par_iter().enumerate().for_each(|(ti, target)| {
                let best = (0..6u64)
                    .map(|r| {
                        let init = random_init(n, m, 4.0, 100 * ti as u64 + r).unwrap();
                        train_ml(&init, target, &cfg).unwrap().final_kl()
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    best <= bound + 0.05,
                    "n = {n}, m = {m}, target {ti}: {best} > {bound}"
                );
            });
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn disjointness_is_set_disjointness(a in face_strategy(5), mask in 0usize..32, vals in 0usize..32) {
        let n = a.n();
        let b = Face::new(n, mask & ((1 << n) - 1), vals & mask & ((1 << n) - 1)).unwrap();
        let sa: BTreeSet<usize> = a.member_indices().into_iter().collect();
        let sb: BTreeSet<usize> = b.member_indices().into_iter().collect();
        prop_assert_eq!(a.is_disjoint(&b), sa.is_disjoint(&sb));
    }

    #[test]
    fn generated_partitions_are_exact(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = rng.gen_range(1..=1usize << (n - 1));
        for p in [balanced_cubical_partition(n, blocks).unwrap(),
                  random_partial_partition(n, blocks, &mut rng).unwrap()] {
            let mut seen = vec![0u8; 1 << n];
            for b in p.blocks() {
                for &s in b {
                    seen[s] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c <= 1));
            prop_assert_eq!(p.is_covering(), seen.iter().all(|&c| c == 1));
        }
        let sizes = balanced_cubical_partition(n, blocks).unwrap().block_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), 1 << n);
        let k = n - blocks.ilog2() as usize;
        prop_assert!(sizes.iter().all(|&s| s == 1 << k || s == 1 << (k - 1)));
    }

    #[test]
    fn densify_is_linear_in_weights(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let part = cubical_partition(3, seed);
        let a = random_mixture(&part, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let raw: Vec<f64> = (0..a.len()).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let reweight = |w: &dyn Fn(usize) -> f64| {
            MixtureOfProducts::new(a.components().iter().enumerate().map(|(i, c)| MixtureComponent {
                weight: w(i),
                product: c.product.clone(),
            }).collect()).unwrap()
        };
        let b = reweight(&|i| raw[i] / total);
        let mixed = reweight(&|i| lambda * a.components()[i].weight + (1.0 - lambda) * raw[i] / total);
        let (da, db, dm) = (a.densify(), b.densify(), mixed.densify());
        for v in 0..8 {
            prop_assert!((dm.prob(v) - lambda * da.prob(v) - (1.0 - lambda) * db.prob(v)).abs() < 1e-12);
        }
    }

    #[test]
    fn product_restrictions_are_products(
        seed in any::<u64>(),
        n in 1usize..=5,
        sub_mask in any::<usize>(),
        sub_vals in any::<usize>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = (1usize << n) - 1;
        let support_mask = rng.gen::<usize>() & full;
        let support = Face::new(n, support_mask, rng.gen::<usize>() & support_mask).unwrap();
        let theta: Vec<f64> = (0..support.dim()).map(|_| rng.gen::<f64>() * 0.98 + 0.01).collect();
        let product = ProductDistribution::new(support, theta).unwrap();
        // a sub-face: fix some additional free coordinates of the support
        let extra = sub_mask & support.free_mask();
        let sub = Face::new(n, support.fixed_mask() | extra, support.fixed_values() | (sub_vals & extra)).unwrap();
        let members = sub.member_indices();
        let mass: f64 = members.iter().map(|&v| product.prob(v)).sum();
        let restricted: Vec<f64> = (0..1 << n)
            .map(|v| if sub.contains(v) { product.prob(v) / mass } else { 0.0 })
            .collect();
        let margin: Vec<f64> = sub.free_coords().iter()
            .map(|&i| members.iter().filter(|&&v| v >> i & 1 == 1).map(|&v| restricted[v]).sum())
            .collect();
        let refit = ProductDistribution::new(sub, margin).unwrap();
        for v in 0..1 << n {
            prop_assert!((refit.prob(v) - restricted[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn block_conditionals_reassemble(seed in any::<u64>(), n in 1usize..=4) {
        let p = random_distribution(n, seed).unwrap();
        let part = if n == 1 { Partition::from_blocks(1, vec![vec![0], vec![1]]).unwrap() } else { cubical_partition(n, seed) };
        let parts = block_conditionals(&p, &part).unwrap();
        let mut back = vec![0.0; 1 << n];
        for bc in &parts {
            for (v, q) in bc.conditional.probs().iter().enumerate() {
                back[v] += bc.mass * q;
            }
        }
        for v in 0..1 << n {
            prop_assert!((back[v] - p.prob(v)).abs() <= 1e-14);
        }
    }

    #[test]
    fn kl_is_non_negative_and_vanishes_only_at_equality(seed in any::<u64>(), n in 1usize..=5) {
        let p = random_distribution(n, seed).unwrap();
        let q = random_distribution(n, seed.wrapping_add(1)).unwrap();
        let d = kl(&p, &q).unwrap().to_f64();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, p.max_abs_diff(&q) <= 1e-12);
        prop_assert_eq!(kl(&p, &p).unwrap().to_f64(), 0.0);
    }

    #[test]
    fn refinement_never_increases_divergence(seed in any::<u64>(), n in 2usize..=4) {
        let p = random_distribution(n, seed).unwrap();
        let mut previous = f64::INFINITY;
        for blocks in 1..=1usize << (n - 1) {
            // successive balanced partitions refine each other
            let part = balanced_cubical_partition(n, blocks).unwrap();
            let d = project_partition(&p, &part).unwrap().divergence.to_f64();
            prop_assert!(d <= previous + 1e-12, "{} blocks: {} > {}", blocks, d, previous);
            previous = d;
        }
        let singletons = Partition::from_blocks(n, (0..1 << n).map(|v| vec![v]).collect()).unwrap();
        prop_assert!(project_partition(&p, &singletons).unwrap().divergence.to_f64() <= previous + 1e-12);
    }

    #[test]
    fn hidden_permutation_is_exact(seed in any::<u64>(), n in 1usize..=5, m in 1usize..=6) {
        let params = random_init(n, m, 4.0, seed).unwrap();
        let mut perm: Vec<usize> = (0..m).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..m).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(
            visible_distribution(&params).unwrap(),
            visible_distribution(&params.permute_hidden(&perm)).unwrap()
        );
    }

    #[test]
    fn small_gradient_steps_increase_likelihood(seed in any::<u64>(), n in 1usize..=4, m in 0usize..=4) {
        let params = random_init(n, m, 2.0, seed).unwrap();
        let target = random_distribution(n, seed ^ 7).unwrap();
        let g = ml_gradient(&params, &target).unwrap();
        prop_assume!(g.max_abs() > 1e-9);
        let base = log_likelihood(&params, &target).unwrap();
        let flat = params.to_flat();
        let dir = g.to_flat();
        let mut step = 1.0;
        let improved = (0..40).any(|_| {
            step /= 2.0;
            let moved: Vec<f64> = flat.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            log_likelihood(&RbmParams::from_flat(n, m, &moved).unwrap(), &target).unwrap() >= base
        });
        prop_assert!(improved);
    }

    #[test]
    fn appended_units_scale_the_outside_uniformly(
        seed in any::<u64>(),
        n in 2usize..=5,
        alpha in 0.01f64..0.99,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let params = RbmParams::independent(b).unwrap();
        let full = (1usize << n) - 1;
        let mask = (rng.gen::<usize>() & full).max(1);
        let face = Face::new(n, mask, rng.gen::<usize>() & mask).unwrap();
        let beta: Vec<f64> = (0..face.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let spec = AppendSpec::new(face, beta, alpha, 30.0).unwrap();
        let before = visible_distribution(&params).unwrap();
        let after = visible_distribution(&append_component(&params, &spec).unwrap()).unwrap();
        let ratios: Vec<f64> = (0..1 << n).filter(|&v| !face.contains(v)).map(|v| after.prob(v) / before.prob(v)).collect();
        for r in &ratios {
            prop_assert!((r / ratios[0] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constructed_rbm_recovers_components(seed in any::<u64>(), components in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let part = random_partial_partition(4, components, &mut rng).unwrap();
        let mix = rbm_lab::distributions::random_mixture_with(&part, &mut rng).unwrap();
        let params = build_mixture_rbm(&mix, mix.heaviest_component(), 30.0).unwrap();
        prop_assert_eq!(params.m(), components - 1);
        let q = visible_distribution(&params).unwrap();
        for c in mix.components() {
            let face = c.product.support();
            let members = face.member_indices();
            let mass: f64 = members.iter().map(|&v| q.prob(v)).sum();
            for (&i, &t) in face.free_coords().iter().zip(c.product.theta()) {
                let on: f64 = members.iter().filter(|&&v| v >> i & 1 == 1).map(|&v| q.prob(v)).sum();
                prop_assert!((on / mass - t).abs() < 1e-3, "theta {} vs {}", on / mass, t);
            }
        }
        let target = mix.densify();
        let mut last = f64::INFINITY;
        for a in [2.0, 4.0, 8.0, 16.0, 32.0] {
            let p = build_mixture_rbm(&mix, mix.heaviest_component(), a).unwrap();
            let d = kl(&target, &visible_distribution(&p).unwrap()).unwrap().to_f64();
            prop_assert!(d <= last + 1e-12, "a = {}: {} > {}", a, d, last);
            last = d;
        }
    }

    #[test]
    fn bound_decreases_strictly_until_zero(n in 1usize..=16) {
        let u = universal_hidden_units(n);
        for m in 0..u {
            let t = max_error_bound(n, m);
            prop_assert!(t > max_error_bound(n, m + 1));
            prop_assert!(t <= n as f64 - (m + 1).ilog2() as f64);
            prop_assert!(t <= n as f64 - 1.0 - (m + 1).ilog2() as f64 + 1.0);
        }
        prop_assert_eq!(max_error_bound(n, u), 0.0);
    }
}

#[test]
fn small_supports_are_representable() {
    use rbm_lab::constructor::{build_support_cover_rbm, find_edge_cover};

    let parity = rbm_lab::distributions::parity_distribution(3).unwrap();
    let cover = find_edge_cover(3, &parity.support()).unwrap();
    assert_eq!(cover.len(), 4);
    let params = build_support_cover_rbm(&parity, &cover, 30.0).unwrap();
    assert_eq!(params.m(), 3);
    let d = kl(&parity, &visible_distribution(&params).unwrap())
        .unwrap()
        .to_f64();
    assert!(d < 1e-3, "parity: {d}");

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..200 {
        let s = rng.gen_range(1..=4);
        let mut states: Vec<usize> = (0..16).collect();
        for i in 0..s {
            let j = rng.gen_range(i..16);
            states.swap(i, j);
        }
        let mut w = vec![0.0; 16];
        for &v in &states[..s] {
            w[v] = rng.gen::<f64>() + 0.05;
        }
        let target = Distribution::from_weights(4, w).unwrap();
        let cover = find_edge_cover(4, &target.support()).unwrap();
        assert!(cover.len() <= s);
        let params = build_support_cover_rbm(&target, &cover, 30.0).unwrap();
        assert!(params.m() < s);
        let d = kl(&target, &visible_distribution(&params).unwrap())
            .unwrap()
            .to_f64();
        assert!(d < 1e-3, "support {:?}: {d}", &states[..s]);
    }
}
