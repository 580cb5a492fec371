//! Click logs with known per-cell conversion and delay parameters.

#![allow(dead_code)]

use delayfeed::stream::{ClickEvent, Delay, DomainId, GroundTruth, WindowConfig, DAY, HOUR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

/// `(p_convert, mean delay in seconds)` per feature cell.
pub const CELLS: [(f64, f64); 8] = [
    (0.05, 600.0),
    (0.10, 3.0 * HOUR as f64),
    (0.20, DAY as f64),
    (0.30, 900.0),
    (0.40, 2.0 * DAY as f64),
    (0.55, 6.0 * HOUR as f64),
    (0.70, 3.0 * DAY as f64),
    (0.85, 1800.0),
];

pub fn windows() -> WindowConfig {
    WindowConfig::new(HOUR / 4, 7 * DAY).unwrap()
}

pub fn truth(cell: usize) -> GroundTruth {
    let (p_convert, mean) = CELLS[cell];
    GroundTruth { p_convert, delay_rate: 1.0 / mean }
}

/// `n` clicks spread over a month, cells drawn uniformly; delays are
/// exponential, rounded up to whole seconds.
pub fn cell_events(n: usize, seed: u64) -> Vec<ClickEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let cell = rng.random_range(0..CELLS.len());
            let t = truth(cell);
            let delay = if rng.random::<f64>() < t.p_convert {
                let z: f64 = Exp::new(t.delay_rate).unwrap().sample(&mut rng);
                Delay::After(z.ceil().max(1.0) as u64)
            } else {
                Delay::Never
            };
            ClickEvent {
                id: i as u64,
                features: vec![cell as u32],
                domain: DomainId::FIRST,
                click_ts: rng.random_range(0..30 * DAY),
                delay,
                truth: Some(t),
            }
        })
        .collect()
}
