//! Analytic BPTT against the finite-difference oracle.

use fedflow_core::data::WindowedSample;
use fedflow_core::gru::{
    backward, batch_gradients, cell_forward, forward, init_network, LossConfig,
};
use fedflow_core::rng::{self, Stream};
use fedflow_core::testing::{fd_gradient, max_rel_error, reference_cell};
use rand_chacha::rand_core::RngCore;

const EPSILON: f64 = 1e-5;
const TOLERANCE: f64 = 1e-5;

struct Case {
    hidden: Vec<usize>,
    window: usize,
    batch: usize,
    lambda: f64,
    net_seed: u64,
}

fn random_cases(n: usize) -> Vec<Case> {
    // One master stream drives every random choice so the suite is a
    // fixed set of cases across runs.
    let mut rng = rng::stream_rng(0xF00D_CAFE, Stream::WeightInit, &[]);
    (0..n)
        .map(|_| {
            let layers = 1 + (rng.next_u64() % 2) as usize;
            let hidden: Vec<usize> = (0..layers)
                .map(|_| 1 + (rng.next_u64() % 8) as usize)
                .collect();
            Case {
                hidden,
                window: 1 + (rng.next_u64() % 5) as usize,
                batch: 1 + (rng.next_u64() % 4) as usize,
                lambda: [0.0, 0.01, 0.1][(rng.next_u64() % 3) as usize],
                net_seed: rng.next_u64(),
            }
        })
        .collect()
}

fn random_batch(
    rng: &mut rand_chacha::ChaCha8Rng,
    window: usize,
    batch: usize,
) -> Vec<WindowedSample> {
    (0..batch)
        .map(|i| WindowedSample {
            x: (0..window).map(|_| rng::uniform(rng, -1.0, 1.0)).collect(),
            y: rng::uniform(rng, -1.0, 1.0),
            station: 0,
            t_index: i as u32,
        })
        .collect()
}

#[test]
fn bptt_matches_finite_differences_on_many_random_configs() {
    let cases = random_cases(120);
    let mut worst = 0.0f64;
    for (idx, case) in cases.iter().enumerate() {
        let net = init_network(1, &case.hidden, case.net_seed).unwrap();
        let mut data_rng = rng::stream_rng(case.net_seed, Stream::SynthNoise, &[idx as u64]);
        let batch = random_batch(&mut data_rng, case.window, case.batch);
        let cfg = LossConfig {
            lambda: case.lambda,
            clip_norm: None,
        };
        let (analytic, _) = batch_gradients(&net, &batch, &cfg).unwrap();
        let numeric = fd_gradient(&net, &batch, case.lambda, EPSILON).unwrap();
        let err = max_rel_error(&analytic.flatten(), &numeric);
        assert!(
            err < TOLERANCE,
            "case {idx} (hidden {:?}, window {}, batch {}, lambda {}): max rel err {err:e}",
            case.hidden,
            case.window,
            case.batch,
            case.lambda
        );
        worst = worst.max(err);
    }
    // A sanity bound, not a requirement: the oracle itself carries about
    // 1e-10 of noise, so agreement should be far below the tolerance.
    assert!(worst < TOLERANCE, "worst-case relative error {worst:e}");
}

#[test]
fn split_backward_matches_oracle_too() {
    let net = init_network(1, &[6, 4], 2024).unwrap();
    let mut data_rng = rng::stream_rng(99, Stream::SynthNoise, &[]);
    let batch = random_batch(&mut data_rng, 5, 4);
    let forwards: Vec<_> = batch.iter().map(|s| forward(&net, &s.x).unwrap()).collect();
    let cfg = LossConfig {
        lambda: 0.05,
        clip_norm: None,
    };
    let analytic = backward(&batch, &forwards, &net, &cfg).unwrap();
    let numeric = fd_gradient(&net, &batch, 0.05, EPSILON).unwrap();
    assert!(max_rel_error(&analytic.flatten(), &numeric) < TOLERANCE);
}

#[test]
fn zero_error_zero_lambda_gradient_is_zero() {
    let net = init_network(1, &[5], 31).unwrap();
    let window = vec![0.3, -0.1, 0.45];
    let (pred, _) = forward(&net, &window).unwrap();
    let batch = [WindowedSample {
        x: window,
        y: pred,
        station: 0,
        t_index: 0,
    }];
    let cfg = LossConfig {
        lambda: 0.0,
        clip_norm: None,
    };
    let (grads, loss) = batch_gradients(&net, &batch, &cfg).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.flatten().iter().all(|g| *g == 0.0));
}

#[test]
fn cell_forward_matches_scalar_reference() {
    let mut rng = rng::stream_rng(7, Stream::WeightInit, &[1]);
    for trial in 0..50 {
        let hidden = 1 + (trial % 7);
        let input = 1 + (trial % 3);
        let mut net = init_network(input, &[hidden], trial as u64).unwrap();
        // Give biases nonzero values too; init leaves them at zero.
        let layer = &mut net.layers[0];
        for b in layer
            .b_z
            .iter_mut()
            .chain(layer.b_r.iter_mut())
            .chain(layer.b_h.iter_mut())
        {
            *b = rng::uniform(&mut rng, -0.5, 0.5);
        }
        let x: Vec<f64> = (0..input)
            .map(|_| rng::uniform(&mut rng, -2.0, 2.0))
            .collect();
        let h_prev: Vec<f64> = (0..hidden)
            .map(|_| rng::uniform(&mut rng, -1.0, 1.0))
            .collect();
        let (h, _) = cell_forward(&x, &h_prev, &net.layers[0]).unwrap();
        let reference = reference_cell(&x, &h_prev, &net.layers[0]);
        for (a, b) in h.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-14, "trial {trial}: {a} vs {b}");
        }
    }
}
