use delay_snn::delay::{spread, SchedulingBuffer, SpreadTable};
use delay_snn::recurrent::RecurrentKernel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recurrent input at every step, summed directly over the whole spike
/// history: `R[t][b,i] = sum_{t' < t} sum_j K[i][j] h(t - t', d_j) S[t'][b,j]`.
fn full_history(spikes: &[Vec<f64>], batch: usize, n: usize, kernel: &[f64], delays: &[f64], sigma: f64) -> Vec<Vec<f64>> {
    let steps = spikes.len();
    let mut out = vec![vec![0.0; batch * n]; steps];
    for t in 0..steps {
        for src in 0..t {
            let tau = (t - src) as i64;
            for b in 0..batch {
                for i in 0..n {
                    for j in 0..n {
                        out[t][b * n + i] += kernel[i * n + j] * spread(tau, delays[j], sigma) * spikes[src][b * n + j];
                    }
                }
            }
        }
    }
    out
}

fn via_buffer(
    spikes: &[Vec<f64>],
    batch: usize,
    n: usize,
    kernel: &RecurrentKernel,
    delays: &[f64],
    sigma: f64,
    d_max: u32,
) -> Vec<Vec<f64>> {
    let table = SpreadTable::new(delays, sigma);
    let len = SchedulingBuffer::required_len(d_max, sigma).max(table.last());
    let mut buf = SchedulingBuffer::new(batch, n, len).unwrap();
    let mut scratch = Vec::new();
    spikes
        .iter()
        .map(|s| {
            let r = buf.pop_current();
            buf.schedule_through(s, &table, kernel, &mut scratch).unwrap();
            r
        })
        .collect()
}

fn random_spikes(rng: &mut ChaCha8Rng, steps: usize, width: usize, p: f64) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|_| (0..width).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect())
        .collect()
}

// Multiples of 1/8 in [-2, 2]: every partial sum is exact, so summation
// order cannot matter.
fn dyadic(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-16i32..=16) as f64 / 8.0).collect()
}

#[test]
fn integer_delays_match_full_history_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..25 {
        let n = rng.random_range(1..=12);
        let batch = rng.random_range(1..=3);
        let steps = rng.random_range(1..=60);
        let d_max = rng.random_range(0..=10u32);
        let delays: Vec<f64> = (0..n).map(|_| rng.random_range(0..=d_max) as f64).collect();
        let w = dyadic(&mut rng, n * n);
        let spikes = random_spikes(&mut rng, steps, batch * n, 0.3);
        let kernel = RecurrentKernel::dense(n, w.clone()).unwrap();
        assert_eq!(
            via_buffer(&spikes, batch, n, &kernel, &delays, 0.0, d_max),
            full_history(&spikes, batch, n, &w, &delays, 0.0)
        );
    }
}

#[test]
fn conv_kernel_matches_its_banded_matrix_in_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 9;
    let conv = RecurrentKernel::conv(dyadic(&mut rng, 3)).unwrap();
    let banded = conv.banded(n);
    let delays: Vec<f64> = (0..n).map(|_| rng.random_range(0..=6) as f64).collect();
    let spikes = random_spikes(&mut rng, 40, 2 * n, 0.25);
    assert_eq!(
        via_buffer(&spikes, 2, n, &conv, &delays, 0.0, 6),
        full_history(&spikes, 2, n, banded.weights(), &delays, 0.0)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn real_delays_and_spread_match_full_history(
        seed in any::<u64>(),
        n in 1usize..8,
        steps in 1usize..40,
        sigma in 0.0f64..4.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_max = 8;
        let delays: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=d_max as f64)).collect();
        let w: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spikes = random_spikes(&mut rng, steps, n, 0.4);
        let kernel = RecurrentKernel::dense(n, w.clone()).unwrap();
        let got = via_buffer(&spikes, 1, n, &kernel, &delays, sigma, d_max);
        let want = full_history(&spikes, 1, n, &w, &delays, sigma);
        for (g, e) in got.iter().flatten().zip(want.iter().flatten()) {
            prop_assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn spikes_are_delivered_once_and_whole(seed in any::<u64>(), n in 1usize..6) {
        // With an identity kernel and sigma = 0 every emitted spike is
        // eventually popped exactly once with unit mass.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delays: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=5.0)).collect();
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let kernel = RecurrentKernel::dense(n, eye).unwrap();
        let mut spikes = random_spikes(&mut rng, 30, n, 0.5);
        spikes.extend(std::iter::repeat_n(vec![0.0; n], 10));
        let popped = via_buffer(&spikes, 1, n, &kernel, &delays, 0.0, 5);
        for j in 0..n {
            let sent: f64 = spikes.iter().map(|s| s[j]).sum();
            let got: f64 = popped.iter().map(|r| r[j]).sum();
            prop_assert!((sent - got).abs() < 1e-9);
        }
    }
}
