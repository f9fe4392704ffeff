#![allow(dead_code)]

use dlmm_core::{Factor, LongDataset, Observation, SimulationConfig};

pub fn obs(eu: &str, obs: &str, time: u32, levels: Vec<usize>, y: f64) -> Observation {
    Observation {
        eu: eu.into(),
        obs: Some(obs.into()),
        time,
        rep: 1,
        levels,
        y,
    }
}

pub fn treatment(m: usize) -> Factor {
    Factor::new("A", (1..=m).map(|i| i.to_string()).collect())
}

/// Two units observed once each at two times: y = (1, 3, 11, 13).
pub fn toy_one_way() -> LongDataset {
    let rows = vec![
        obs("1", "1", 1, vec![], 1.0),
        obs("1", "2", 2, vec![], 3.0),
        obs("2", "3", 1, vec![], 11.0),
        obs("2", "4", 2, vec![], 13.0),
    ];
    LongDataset::new(vec![], rows).unwrap()
}

/// Eight observations, two treatments x two times x two units; cell means
/// 0, 2, 4, 6 and deviations of ±1.
pub fn toy_two_way() -> LongDataset {
    let mut rows = Vec::new();
    for (a, eu) in [(0usize, "1"), (1, "2")] {
        for k in 0..2u32 {
            let mean = (2 * (2 * a as u32 + k)) as f64;
            for (j, d) in [-1.0, 1.0].iter().enumerate() {
                rows.push(obs(eu, &format!("{k}-{j}"), k + 1, vec![a], mean + d));
            }
        }
    }
    LongDataset::new(vec![treatment(2)], rows).unwrap()
}

/// `units` experimental units with `per` observations each at a single time.
pub fn one_way(y: &[Vec<f64>]) -> LongDataset {
    let mut rows = Vec::new();
    for (e, ys) in y.iter().enumerate() {
        for (j, &v) in ys.iter().enumerate() {
            rows.push(obs(&(e + 1).to_string(), &j.to_string(), 1, vec![], v));
        }
    }
    LongDataset::new(vec![], rows).unwrap()
}

/// A small generator setting that keeps every model estimable.
pub fn small_config(seed: u64) -> SimulationConfig {
    SimulationConfig {
        n: 3,
        m: 2,
        t: 4,
        k: 2,
        l: 2,
        g: 2,
        seed,
        ..SimulationConfig::default()
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}
