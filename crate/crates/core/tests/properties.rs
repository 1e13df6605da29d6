use iddqn::agent::{blend_weights, q_combined, HumanWeightSchedule};
use iddqn::approximator::DuelingNet;
use iddqn::env::OBS_DIM;
use iddqn::replay::{PerConfig, PriorityBuffer, ReplayItem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
struct Tag;

impl ReplayItem for Tag {}

fn buffer(capacity: usize) -> PriorityBuffer<Tag> {
    PriorityBuffer::new(PerConfig {
        capacity,
        ..PerConfig::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn root_equals_sum_of_leaves(tds in prop::collection::vec(-50.0f64..50.0, 1..200), cap in 1usize..64) {
        let mut b = buffer(cap);
        for _ in 0..tds.len() {
            b.push(Tag, 1.0).unwrap();
        }
        let n = b.len();
        let idx: Vec<usize> = (0..n).collect();
        b.update_priorities(&idx, &tds[..n]).unwrap();
        let sum: f64 = (0..n).map(|i| b.leaf(i)).sum();
        prop_assert!((b.total() - sum).abs() <= 1e-9 * sum.max(1.0));
        for (i, td) in tds[..n].iter().enumerate() {
            let p = b.priority(i).unwrap();
            prop_assert!((p - (td.abs() + 1e-3)).abs() < 1e-12);
        }
    }

    #[test]
    fn is_weights_are_normalized(tds in prop::collection::vec(0.0f64..10.0, 8..64), seed in any::<u64>()) {
        let mut b = buffer(64);
        for _ in 0..tds.len() {
            b.push(Tag, 1.0).unwrap();
        }
        let idx: Vec<usize> = (0..tds.len()).collect();
        b.update_priorities(&idx, &tds).unwrap();
        let s = b.sample(8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let max = s.weights.iter().cloned().fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-12);
        prop_assert!(s.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn dueling_identity_and_shift_invariance(seed in 0u64..1000, shift in -5.0f64..5.0) {
        let mut net = DuelingNet::<f64>::new(&[OBS_DIM, 16, 16], 33, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = net.heads(&x).unwrap();
        let mean: f64 = h.q.iter().map(|q| q - h.value).sum::<f64>() / h.q.len() as f64;
        prop_assert!(mean.abs() < 1e-7);
        let before = net.greedy(&x).unwrap();
        for b in net.advantage_bias_mut() {
            *b += shift;
        }
        prop_assert_eq!(net.greedy(&x).unwrap(), before);
    }

    #[test]
    fn decay_is_monotone_and_clamped(t1 in 0u64..100_000, t2 in 0u64..100_000) {
        let s = HumanWeightSchedule::decay(40_000);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert!(s.value(lo) >= s.value(hi));
        prop_assert!((0.0..=1.0).contains(&s.value(hi)));
        if hi >= 40_000 {
            prop_assert_eq!(s.value(hi), 0.0);
        }
    }

    #[test]
    fn combined_value_interpolates(l in 0.0f64..=1.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let (ch, ca) = blend_weights(l, true, true);
        prop_assert!((ch + ca - 1.0).abs() < 1e-12);
        let q = q_combined(a, a, b, b, l, true, true);
        prop_assert!((q - (ch * a + ca * b)).abs() < 1e-9);
        prop_assert!(q >= a.min(b) - 1e-9 && q <= a.max(b) + 1e-9);
    }
}

#[test]
fn three_to_one_priorities_sample_three_to_one() {
    let mut b = buffer(2);
    b.push(Tag, 1.0).unwrap();
    b.push(Tag, 1.0).unwrap();
    let alpha = PerConfig::default().alpha;
    // leaves p^alpha in ratio 3:1
    let p0 = 3f64.powf(1.0 / alpha);
    b.update_priorities(&[0, 1], &[p0 - 1e-3, 1.0 - 1e-3]).unwrap();
    assert!((b.leaf(0) / b.leaf(1) - 3.0).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut zero = 0usize;
    for _ in 0..n {
        if b.sample(1, &mut rng).unwrap().indices[0] == 0 {
            zero += 1;
        }
    }
    let f = zero as f64 / n as f64;
    assert!((f - 0.75).abs() < 0.02, "{f}");
}

#[test]
fn equal_priorities_pass_chi_square() {
    let k = 16;
    let mut b = buffer(k);
    for _ in 0..k {
        b.push(Tag, 1.0).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 64_000;
    let mut counts = vec![0usize; k];
    for _ in 0..n {
        for &i in &b.sample(1, &mut rng).unwrap().indices {
            counts[i] += 1;
        }
    }
    let e = n as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 15 degrees of freedom, p = 0.001
    assert!(chi2 < 37.70, "chi2 = {chi2}");
}
