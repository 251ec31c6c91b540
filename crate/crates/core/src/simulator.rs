//! Slot-level Monte Carlo simulation of the queue.
//!
//! Within slot `n` the scheduler sees `q[n]` and `h[n]`, sends `s[n]`
//! packets at cost `xi(s) / h`, and then the next arrivals join:
//! `q[n + 1] = min(max(q[n] - s[n], 0) + a[n + 1], Q)`.
//!
//! Random streams: one ChaCha8 generator seeded from the user seed, split
//! into stream 0 for arrivals, stream 1 for channel gains and stream 2 for
//! randomized rate choices. One draw is taken from every stream in every
//! slot, so changing the policy never shifts the arrival or channel
//! sequences.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::io::float17;
use crate::model::{ModelError, SystemConfig};
use crate::occupancy::Policy;

/// Number of batches used for batch-means standard errors.
pub const BATCHES: usize = 50;

/// Queue update `min(max(q - s, 0) + a, Q)`.
pub fn step(q: usize, a: usize, s: usize, buffer: usize) -> usize {
    (q.saturating_sub(s) + a).min(buffer)
}

/// Anything that picks a rate from the queue length and the continuous gain.
pub trait RatePolicy {
    /// `u` is a uniform draw on `[0, 1)` for randomized choices.
    fn choose(&self, q: usize, h: f64, u: f64) -> usize;
}

impl RatePolicy for Policy {
    fn choose(&self, q: usize, h: f64, u: f64) -> usize {
        let k = self.discretization().bin_of(h);
        let row = self.probs(q, k);
        let mut acc = 0.0;
        for (s, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return s;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("slots ({slots}) must exceed warmup ({warmup})")]
    TooFewSlots { slots: u64, warmup: u64 },
    #[error("need at least {BATCHES} measured slots")]
    TooFewBatches,
    #[error("trace output failed: {0}")]
    Trace(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub slots: u64,
    /// `None` selects 10% of the slots, at least 1000.
    pub warmup: Option<u64>,
    pub seed: u64,
}

impl SimOptions {
    pub fn new(slots: u64, seed: u64) -> Self {
        Self {
            slots,
            warmup: None,
            seed,
        }
    }

    pub fn resolved_warmup(&self) -> u64 {
        self.warmup.unwrap_or_else(|| (self.slots / 10).max(1000))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub slots: u64,
    pub warmup: u64,
    pub seed: u64,
    pub batches: usize,
    pub mean_queue: f64,
    /// Mean queue length over the mean arrival rate.
    pub delay: f64,
    pub delay_se: f64,
    pub power: f64,
    pub power_se: f64,
    /// Mean FIFO sojourn (slots a packet is counted in the queue).
    pub fifo_delay: f64,
    pub fifo_delay_se: f64,
    /// Packets lost to the buffer clip.
    pub drops: u64,
    /// Slots where the policy asked for more packets than were queued.
    pub underflow_overrides: u64,
}

impl SimReport {
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn csv_header() -> String {
        let names: Vec<&str> = Self::empty_names();
        names.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let values: Vec<String> = self.fields().into_iter().map(|(_, v)| v).collect();
        values.join(",")
    }

    fn empty_names() -> Vec<&'static str> {
        vec![
            "slots",
            "warmup",
            "seed",
            "batches",
            "mean_queue",
            "delay",
            "delay_se",
            "power",
            "power_se",
            "fifo_delay",
            "fifo_delay_se",
            "drops",
            "underflow_overrides",
        ]
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let values = vec![
            self.slots.to_string(),
            self.warmup.to_string(),
            self.seed.to_string(),
            self.batches.to_string(),
            float17(self.mean_queue),
            float17(self.delay),
            float17(self.delay_se),
            float17(self.power),
            float17(self.power_se),
            float17(self.fifo_delay),
            float17(self.fifo_delay_se),
            self.drops.to_string(),
            self.underflow_overrides.to_string(),
        ];
        Self::empty_names().into_iter().zip(values).collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn sample_arrivals(alphas: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &a) in alphas.iter().enumerate() {
        acc += a;
        if u < acc {
            return k;
        }
    }
    alphas.iter().rposition(|&a| a > 0.0).unwrap_or(0)
}

#[derive(Default, Clone, Copy)]
struct Batch {
    queue: f64,
    energy: f64,
    slots: u64,
    sojourn: f64,
    departures: u64,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Simulates `opts.slots` slots of the queue under `pol`.
pub fn run_sim(
    cfg: &SystemConfig,
    pol: &impl RatePolicy,
    opts: SimOptions,
) -> Result<SimReport, SimError> {
    run_sim_traced(cfg, pol, opts, None)
}

/// As [`run_sim`], optionally writing one CSV line per slot
/// (`slot,q,a,h,s,energy`, where `a` joins after the slot).
pub fn run_sim_traced(
    cfg: &SystemConfig,
    pol: &impl RatePolicy,
    opts: SimOptions,
    mut trace: Option<&mut dyn Write>,
) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let warmup = opts.resolved_warmup();
    if opts.slots <= warmup {
        return Err(SimError::TooFewSlots {
            slots: opts.slots,
            warmup,
        });
    }
    let measured = opts.slots - warmup;
    if measured < BATCHES as u64 {
        return Err(SimError::TooFewBatches);
    }
    let batch_len = measured / BATCHES as u64;

    let mut arrivals_rng = stream(opts.seed, 0);
    let mut channel_rng = stream(opts.seed, 1);
    let mut policy_rng = stream(opts.seed, 2);

    if let Some(w) = trace.as_deref_mut() {
        writeln!(w, "slot,q,a,h,s,energy")?;
    }

    let mut batches = vec![Batch::default(); BATCHES];
    let mut fifo: VecDeque<u64> = VecDeque::with_capacity(cfg.buffer + 1);
    let mut q = 0usize;
    let mut drops = 0u64;
    let mut overrides = 0u64;

    for n in 0..opts.slots {
        let u_arr: f64 = arrivals_rng.gen();
        let u_ch: f64 = channel_rng.gen();
        let u_pol: f64 = policy_rng.gen();
        // 1 - u lies in (0, 1], so h lands in (h_min, h_max]
        let h = cfg.channel.cdf_inverse(1.0 - u_ch);

        let mut s = pol.choose(q, h, u_pol).min(cfg.max_rate);
        if s > q {
            overrides += 1;
            s = q;
        }
        let energy = cfg.xi[s] / h;

        for _ in 0..s {
            let arrived = fifo.pop_front().expect("queue holds q packets");
            if n >= warmup {
                let b = (((n - warmup) / batch_len) as usize).min(BATCHES - 1);
                batches[b].sojourn += (n - arrived + 1) as f64;
                batches[b].departures += 1;
            }
        }

        let a = sample_arrivals(&cfg.arrival.alphas, u_arr);
        let next = step(q, a, s, cfg.buffer);
        let admitted = next - (q - s);
        drops += (a - admitted) as u64;
        for _ in 0..admitted {
            fifo.push_back(n + 1);
        }

        if n >= warmup {
            let b = (((n - warmup) / batch_len) as usize).min(BATCHES - 1);
            batches[b].queue += q as f64;
            batches[b].energy += energy;
            batches[b].slots += 1;
        }
        if let Some(w) = trace.as_deref_mut() {
            writeln!(w, "{n},{q},{a},{},{s},{}", float17(h), float17(energy))?;
        }
        q = next;
    }

    let a_bar = cfg.mean_arrival_rate();
    let total_slots: u64 = batches.iter().map(|b| b.slots).sum();
    let mean_queue = batches.iter().map(|b| b.queue).sum::<f64>() / total_slots as f64;
    let power = batches.iter().map(|b| b.energy).sum::<f64>() / total_slots as f64;
    let queue_means: Vec<f64> = batches.iter().map(|b| b.queue / b.slots as f64).collect();
    let power_means: Vec<f64> = batches.iter().map(|b| b.energy / b.slots as f64).collect();
    let sojourn_means: Vec<f64> = batches
        .iter()
        .filter(|b| b.departures > 0)
        .map(|b| b.sojourn / b.departures as f64)
        .collect();
    let (_, queue_se) = mean_and_se(&queue_means);
    let (_, power_se) = mean_and_se(&power_means);
    let departures: u64 = batches.iter().map(|b| b.departures).sum();
    let (fifo_delay, fifo_delay_se) = if departures == 0 {
        (0.0, 0.0)
    } else {
        let total: f64 = batches.iter().map(|b| b.sojourn).sum();
        (total / departures as f64, mean_and_se(&sojourn_means).1)
    };
    let (delay, delay_se) = if a_bar > 0.0 {
        (mean_queue / a_bar, queue_se / a_bar)
    } else {
        (0.0, 0.0)
    };

    Ok(SimReport {
        slots: opts.slots,
        warmup,
        seed: opts.seed,
        batches: BATCHES,
        mean_queue,
        delay,
        delay_se,
        power,
        power_se,
        fifo_delay,
        fifo_delay_se: if fifo_delay_se.is_nan() { 0.0 } else { fifo_delay_se },
        drops,
        underflow_overrides: overrides,
    })
}
