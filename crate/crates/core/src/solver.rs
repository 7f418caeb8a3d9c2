//! Annealed Metropolis search over QUBO energies.
//!
//! Two chain dynamics are provided:
//!
//! * `Sequential`: textbook simulated annealing. Each sweep visits all `K`
//!   bits in a fresh random order and accepts a flip with probability
//!   `min(1, exp(−ΔE/T))`.
//! * `ParallelTrial`: every step tests all `K` candidate flips at once against
//!   `ΔE_i − E_off`, flips one accepted candidate chosen uniformly, and raises
//!   the escape offset `E_off` by `offset_increment` whenever nothing is
//!   accepted (resetting it to zero after a flip). A sweep is `K` such steps.
//!
//! Both keep per-bit local fields `l_i = b_i + 2 Σ_j W_ij x_j` so a flip costs
//! `O(N_r + P)` rather than a full energy evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::check_len;
use crate::error::{invalid, Error, Result};
use crate::qubo::{qubo_energy, BinaryState, QuboProblem};

/// Largest problem [`brute_force`] accepts.
pub const BRUTE_FORCE_MAX_BITS: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealMode {
    Sequential,
    ParallelTrial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    pub sweeps: usize,
    pub t_initial: f64,
    pub t_final: f64,
    pub restarts: usize,
    pub mode: AnnealMode,
    /// Escape-offset increment; only used by `ParallelTrial`.
    pub offset_increment: f64,
    pub seed: u64,
    /// Finish every restart with a zero-temperature descent that also tries
    /// shifting clusters of aligned set bits by one bin (see [`polish`]).
    pub polish: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            sweeps: 2000,
            t_initial: 10.0,
            t_final: 0.05,
            restarts: 8,
            mode: AnnealMode::Sequential,
            offset_increment: 0.5,
            seed: 0,
            polish: true,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(invalid("anneal needs at least one sweep"));
        }
        if self.restarts == 0 {
            return Err(invalid("anneal needs at least one restart"));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite() && self.t_initial.is_finite()) {
            return Err(invalid(format!(
                "final temperature must be positive, got {}",
                self.t_final
            )));
        }
        if self.t_initial < self.t_final {
            return Err(invalid(format!(
                "t_initial ({}) must be >= t_final ({})",
                self.t_initial, self.t_final
            )));
        }
        if !(self.offset_increment >= 0.0 && self.offset_increment.is_finite()) {
            return Err(invalid("offset increment must be non-negative"));
        }
        Ok(())
    }

    /// Geometric interpolation from `t_initial` (sweep 0) to `t_final` (last sweep).
    pub fn temperature(&self, sweep: usize) -> f64 {
        if self.sweeps <= 1 {
            return self.t_final;
        }
        let frac = sweep as f64 / (self.sweeps - 1) as f64;
        self.t_initial * (self.t_final / self.t_initial).powf(frac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub sweep: usize,
    pub current_energy: f64,
    pub best_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub best_state: BinaryState,
    pub best_energy: f64,
    /// Per-sweep trace of the restart that produced `best_state`.
    pub energy_trace: Vec<TracePoint>,
    pub restart_index: usize,
    /// Accepted flips summed over all restarts.
    pub flips_accepted: u64,
}

/// `l_i = b_i + 2 Σ_j W_ij x_j`.
pub fn local_fields(problem: &QuboProblem, state: &BinaryState) -> Result<Vec<f64>> {
    check_len("state", problem.num_vars(), state.len())?;
    let map = *problem.index_map();
    let mut fields = problem.bias().to_vec();
    for p in 0..map.num_aps {
        let ones = state.ones_in_block(&map, p);
        for h in 0..map.num_bins {
            let row = problem.block_row(h);
            let s: f64 = ones.iter().map(|&g| row[g]).sum();
            fields[map.flat(p, h)] += 2.0 * s;
        }
    }
    let mu = problem.mu();
    for &(i, j) in &problem.alignment().pairs {
        if state.bits[j] {
            fields[i] += 2.0 * mu;
        }
        if state.bits[i] {
            fields[j] += 2.0 * mu;
        }
    }
    Ok(fields)
}

/// Energy change of flipping bit `i`, given its local field.
#[inline]
pub fn flip_delta(bit: bool, field: f64) -> f64 {
    if bit {
        field
    } else {
        -field
    }
}

/// Binary state with incrementally maintained local fields and energy.
///
/// A flip costs `O(N_r)` plus the number of alignment partners of the bit.
pub struct FlipTracker<'a> {
    problem: &'a QuboProblem,
    state: BinaryState,
    fields: Vec<f64>,
    energy: f64,
}

impl<'a> FlipTracker<'a> {
    pub fn new(problem: &'a QuboProblem, state: BinaryState) -> Result<Self> {
        check_len("state", problem.num_vars(), state.len())?;
        Ok(Self::start(problem, state))
    }

    pub fn state(&self) -> &BinaryState {
        &self.state
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    fn start(problem: &'a QuboProblem, state: BinaryState) -> Self {
        let fields = local_fields(problem, &state).expect("state sized to problem");
        let energy = qubo_energy(problem, &state).expect("state sized to problem");
        Self {
            problem,
            state,
            fields,
            energy,
        }
    }

    /// Energy change if bit `i` were flipped.
    #[inline]
    pub fn delta(&self, i: usize) -> f64 {
        flip_delta(self.state.bits[i], self.fields[i])
    }

    pub fn flip(&mut self, i: usize) {
        let map = self.problem.index_map();
        let sign = if self.state.bits[i] { -1.0 } else { 1.0 };
        self.energy += self.delta(i);
        self.state.flip(i);
        let (p, h) = map.split(i);
        let block = &mut self.fields[map.block(p)];
        for (f, w) in block.iter_mut().zip(self.problem.block_row(h)) {
            *f += 2.0 * sign * w;
        }
        let mu = self.problem.mu();
        if mu != 0.0 {
            for &j in self.problem.partners(i) {
                self.fields[j] += 2.0 * sign * mu;
            }
        }
    }

    fn check_fields(&self) {
        let fresh = local_fields(self.problem, &self.state).expect("sized");
        for (a, b) in fresh.iter().zip(&self.fields) {
            assert!(
                (a - b).abs() <= 1e-8,
                "local field drift: maintained {b}, recomputed {a}"
            );
        }
    }
}

struct ChainOutcome {
    best_state: BinaryState,
    best_energy: f64,
    trace: Vec<TracePoint>,
    accepted: u64,
}

fn run_chain(problem: &QuboProblem, config: &AnnealConfig, restart: usize) -> ChainOutcome {
    let k = problem.num_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);

    let init = if restart == 0 {
        BinaryState::zeros(k)
    } else {
        BinaryState::from_bits((0..k).map(|_| rng.random::<bool>()).collect())
    };
    let mut chain = FlipTracker::start(problem, init);
    let mut best_state = chain.state.clone();
    let mut best_energy = chain.energy;
    let mut trace = Vec::with_capacity(config.sweeps);
    let mut accepted = 0u64;
    let mut order: Vec<usize> = (0..k).collect();
    let mut offset = 0.0;
    let mut candidates = Vec::with_capacity(k);

    for sweep in 0..config.sweeps {
        let t = config.temperature(sweep);
        match config.mode {
            AnnealMode::Sequential => {
                order.shuffle(&mut rng);
                for &i in &order {
                    let de = chain.delta(i);
                    if de <= 0.0 || rng.random::<f64>() < (-de / t).exp() {
                        chain.flip(i);
                        accepted += 1;
                        if chain.energy < best_energy {
                            best_energy = chain.energy;
                            best_state.clone_from(&chain.state);
                        }
                    }
                }
            }
            AnnealMode::ParallelTrial => {
                for _ in 0..k {
                    candidates.clear();
                    for i in 0..k {
                        let de = chain.delta(i) - offset;
                        if de <= 0.0 || rng.random::<f64>() < (-de / t).exp() {
                            candidates.push(i);
                        }
                    }
                    if candidates.is_empty() {
                        offset += config.offset_increment;
                        continue;
                    }
                    let i = candidates[rng.random_range(0..candidates.len())];
                    chain.flip(i);
                    accepted += 1;
                    offset = 0.0;
                    if chain.energy < best_energy {
                        best_energy = chain.energy;
                        best_state.clone_from(&chain.state);
                    }
                }
            }
        }
        if cfg!(debug_assertions) && (sweep % 256 == 255 || sweep + 1 == config.sweeps) {
            chain.check_fields();
        }
        trace.push(TracePoint {
            sweep,
            current_energy: chain.energy,
            best_energy,
        });
    }

    if config.polish {
        let mut refined = FlipTracker::start(problem, best_state.clone());
        if polish_chain(&mut refined) && refined.energy < best_energy {
            best_state = refined.state;
            trace.push(TracePoint {
                sweep: config.sweeps,
                current_energy: refined.energy,
                best_energy: refined.energy,
            });
        }
    }

    let best_energy = qubo_energy(problem, &best_state).expect("sized");
    ChainOutcome {
        best_state,
        best_energy,
        trace,
        accepted,
    }
}

fn improves(before: f64, after: f64) -> bool {
    after < before - 1e-12 * (1.0 + before.abs())
}

/// Steepest single-flip descent followed by cluster shifts, repeated until
/// neither finds an improving move. Returns whether the state changed.
fn polish_chain(chain: &mut FlipTracker) -> bool {
    let k = chain.problem.num_vars();
    let map = *chain.problem.index_map();
    let mut changed = false;
    let mut moves: Vec<usize> = Vec::new();
    loop {
        let (best_i, best_de) = (0..k)
            .map(|i| (i, chain.delta(i)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty problem");
        if improves(chain.energy, chain.energy + best_de) {
            chain.flip(best_i);
            changed = true;
            continue;
        }

        let mut visited = vec![false; k];
        let mut shifted = false;
        'clusters: for start in 0..k {
            if !chain.state.bits[start] || visited[start] {
                continue;
            }
            // Connected set bits under alignment pairs.
            let mut cluster = vec![start];
            visited[start] = true;
            let mut head = 0;
            while head < cluster.len() {
                let i = cluster[head];
                head += 1;
                for &j in chain.problem.partners(i) {
                    if chain.state.bits[j] && !visited[j] {
                        visited[j] = true;
                        cluster.push(j);
                    }
                }
            }
            for step in [1, map.num_bins - 1] {
                let targets: Vec<usize> = cluster
                    .iter()
                    .map(|&i| {
                        let (p, h) = map.split(i);
                        map.flat(p, (h + step) % map.num_bins)
                    })
                    .collect();
                if targets
                    .iter()
                    .any(|t| chain.state.bits[*t] && !cluster.contains(t))
                {
                    continue;
                }
                moves.clear();
                moves.extend(cluster.iter().filter(|i| !targets.contains(i)));
                moves.extend(targets.iter().filter(|t| !cluster.contains(t)));
                let before = chain.energy;
                for &i in &moves {
                    chain.flip(i);
                }
                if improves(before, chain.energy) {
                    changed = true;
                    shifted = true;
                    break 'clusters;
                }
                for &i in moves.iter().rev() {
                    chain.flip(i);
                }
            }
        }
        if !shifted {
            return changed;
        }
    }
}

/// Zero-temperature refinement of `state`.
///
/// Single-bit flips cannot move a detected path to the neighbouring grid bin
/// at low temperature: the intermediate states cost on the order of `γM`
/// while neighbouring bins differ by a tiny fraction of that. This descent
/// therefore also tries moving each connected cluster of set bits (linked by
/// alignment pairs) one bin up or down in every AP at once, which keeps the
/// cluster aligned.
pub fn polish(problem: &QuboProblem, state: &BinaryState) -> Result<(BinaryState, f64)> {
    check_len("state", problem.num_vars(), state.len())?;
    let mut chain = FlipTracker::start(problem, state.clone());
    polish_chain(&mut chain);
    let energy = qubo_energy(problem, &chain.state)?;
    Ok((chain.state, energy))
}

/// Anneals `config.restarts` independent chains (concurrently) and returns the
/// lowest-energy state, ties going to the lower restart index.
pub fn anneal(problem: &QuboProblem, config: &AnnealConfig) -> Result<SolveResult> {
    config.validate()?;
    let outcomes: Vec<ChainOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_chain(problem, config, r))
        .collect();
    let flips_accepted = outcomes.iter().map(|o| o.accepted).sum();
    let (restart_index, best) = outcomes
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.best_energy.total_cmp(&b.best_energy).then(ia.cmp(ib)))
        .expect("at least one restart");
    Ok(SolveResult {
        best_state: best.best_state,
        best_energy: best.best_energy,
        energy_trace: best.trace,
        restart_index,
        flips_accepted,
    })
}

/// Exact minimum by Gray-code enumeration of all `2^K` states.
///
/// Ties (within `1e−9` relative) go to the state with the smallest integer
/// value, bit `i` weighing `2^i`.
pub fn brute_force(problem: &QuboProblem) -> Result<(BinaryState, f64)> {
    let k = problem.num_vars();
    if k > BRUTE_FORCE_MAX_BITS {
        return Err(Error::TooLarge(k));
    }
    let mut chain = FlipTracker::start(problem, BinaryState::zeros(k));
    let mut best_value = 0u64;
    let mut best_energy = chain.energy;
    let mut gray = 0u64;
    for step in 1u64..(1u64 << k) {
        let bit = step.trailing_zeros() as usize;
        chain.flip(bit);
        gray ^= 1 << bit;
        let e = chain.energy;
        let tol = 1e-9 * (1.0 + best_energy.abs());
        if e < best_energy - tol || (e <= best_energy + tol && gray < best_value) {
            best_energy = e;
            best_value = gray;
        }
    }
    let state = BinaryState::from_integer(best_value, k);
    let energy = qubo_energy(problem, &state)?;
    Ok((state, energy))
}

/// Writes `sweep,current_energy,best_energy` rows with a header.
pub fn write_trace_csv<W: Write>(out: W, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for point in trace {
        w.serialize(point)?;
    }
    w.flush()?;
    Ok(())
}
