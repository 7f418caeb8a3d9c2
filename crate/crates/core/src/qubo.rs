//! Reduction of the cooperative binary support objective to QUBO form.
//!
//! The objective over per-AP indicator vectors `x_p ∈ {0,1}^{N_r}` is
//!
//! ```text
//! Σ_p ( ‖x_p‖₀ + γ ‖y_p − Ψ x_p‖² ) + μ Σ_{p<q} Hamming(x_p, rot_{α(p,q)}(x_q))
//! ```
//!
//! and the QUBO energy is `E(x) = −Σ_i b_i x_i − Σ_i Σ_j W_ij x_i x_j` over the
//! stacked vector `x = [x_1; …; x_P]`, with
//!
//! * `b_i = −(1 + γ G[h,h] − 2γ Re{(Ψ^H y_p)[h]} + (P−1) μ)` for `i = p·N_r + h`,
//! * `W_ij = −γ G[h,h']` inside an AP block (`i ≠ j`), `W_ij = μ` on alignment
//!   pairs, zero elsewhere,
//!
//! where `G = Re{Ψ^H Ψ}`. Then `E(x) + γ Σ_p ‖y_p‖²` equals the objective for
//! every binary `x`.
//!
//! Every AP shares one manifold, so the intra-AP coupling is stored once as a
//! dense `N_r × N_r` block; cross-AP couplings are the sparse alignment pairs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::array_model::{check_len, partner_index, rotation_shift, RotationShift, SteeringGrid};
use crate::error::{invalid, Error, Result};
use crate::linalg::norm_sqr;
use crate::scene::ApSnapshot;

/// Bijection between `(ap, bin)` and the flat variable index `ap·N_r + bin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMap {
    pub num_aps: usize,
    pub num_bins: usize,
}

impl IndexMap {
    pub fn new(num_aps: usize, num_bins: usize) -> Self {
        Self { num_aps, num_bins }
    }

    pub fn len(&self) -> usize {
        self.num_aps * self.num_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self, ap: usize, bin: usize) -> usize {
        debug_assert!(ap < self.num_aps && bin < self.num_bins);
        ap * self.num_bins + bin
    }

    pub fn split(&self, index: usize) -> (usize, usize) {
        debug_assert!(index < self.len());
        (index / self.num_bins, index % self.num_bins)
    }

    pub fn block(&self, ap: usize) -> std::ops::Range<usize> {
        ap * self.num_bins..(ap + 1) * self.num_bins
    }
}

/// Rotation between AP `p` and a later AP `q`, `α = φ_p − φ_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairShift {
    pub p: usize,
    pub q: usize,
    pub shift: RotationShift,
}

/// Shifts for all pairs `p < q`, in lexicographic order.
pub fn pairwise_shifts(orientations_deg: &[f64], grid: &SteeringGrid) -> Vec<PairShift> {
    let mut out = Vec::new();
    for p in 0..orientations_deg.len() {
        for q in p + 1..orientations_deg.len() {
            out.push(PairShift {
                p,
                q,
                shift: rotation_shift(orientations_deg[p] - orientations_deg[q], grid),
            });
        }
    }
    out
}

/// Cross-AP variable pairs `(i, j)` with `i` in AP `p`'s block, `j` in AP
/// `q`'s block, `p < q`, and `bin(j) = (bin(i) + n_α(p,q)) mod N_r`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSet {
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentSet {
    pub fn from_shifts(map: &IndexMap, shifts: &[PairShift]) -> Self {
        let mut pairs = Vec::with_capacity(shifts.len() * map.num_bins);
        for ps in shifts {
            for h in 0..map.num_bins {
                let g = partner_index(h, &ps.shift).expect("bin in range");
                pairs.push((map.flat(ps.p, h), map.flat(ps.q, g)));
            }
        }
        pairs.sort_unstable();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Alignment pairs enumerated as contiguous index intervals split on the sign
/// of the rotation, the way a circular shift moves a wrapped tail of the
/// vector to its head. Must agree with [`AlignmentSet::from_shifts`].
pub fn alignment_pairs_by_intervals(
    map: &IndexMap,
    orientations_deg: &[f64],
    grid: &SteeringGrid,
) -> Vec<(usize, usize)> {
    let n = map.num_bins as i64;
    let mut out = Vec::new();
    for p in 0..orientations_deg.len() {
        for q in p + 1..orientations_deg.len() {
            let alpha = orientations_deg[p] - orientations_deg[q];
            let steps = (alpha / grid.resolution()).round() as i64 % n;
            let base_p = p as i64 * n;
            let base_q = q as i64 * n;
            let mut push = |h: i64, j: i64| out.push(((base_p + h) as usize, j as usize));
            if steps >= 0 {
                let m = steps;
                // Head of p's block lands further into q's block...
                for h in 0..n - m {
                    push(h, base_q + h + m);
                }
                // ...and the last m bins wrap to the front.
                for h in n - m..n {
                    push(h, base_q + h + m - n);
                }
            } else {
                let m = -steps;
                for h in m..n {
                    push(h, base_q + h - m);
                }
                for h in 0..m {
                    push(h, base_q + h - m + n);
                }
            }
        }
    }
    out
}

/// Binary assignment of all `K = P·N_r` variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryState {
    pub bits: Vec<bool>,
}

impl BinaryState {
    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// State whose bit `i` is bit `i` of `value` (bit 0 is the least significant).
    pub fn from_integer(value: u64, len: usize) -> Self {
        Self {
            bits: (0..len).map(|i| (value >> i) & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn flip(&mut self, i: usize) {
        self.bits[i] = !self.bits[i];
    }

    /// Bits of one AP block.
    pub fn block(&self, map: &IndexMap, ap: usize) -> &[bool] {
        &self.bits[map.block(ap)]
    }

    pub fn ones_in_block(&self, map: &IndexMap, ap: usize) -> Vec<usize> {
        self.block(map, ap)
            .iter()
            .enumerate()
            .filter_map(|(h, &b)| b.then_some(h))
            .collect()
    }
}

/// QUBO instance `E(x) = −bᵀx − xᵀWx` plus the constant dropped from the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboProblem {
    bias: Vec<f64>,
    /// Row-major `N_r × N_r` intra-AP coupling with zero diagonal.
    block: Vec<f64>,
    offset: f64,
    gamma: f64,
    mu: f64,
    index_map: IndexMap,
    alignment: AlignmentSet,
    /// `partners[i]` lists the variables coupled to `i` by an alignment pair.
    partners: Vec<Vec<usize>>,
}

impl QuboProblem {
    /// Assembles a problem from raw parts, validating the structural invariants.
    pub fn from_parts(
        index_map: IndexMap,
        bias: Vec<f64>,
        block: Vec<f64>,
        alignment: AlignmentSet,
        gamma: f64,
        mu: f64,
        offset: f64,
    ) -> Result<Self> {
        let k = index_map.len();
        let n = index_map.num_bins;
        if k == 0 {
            return Err(invalid("QUBO needs at least one variable"));
        }
        check_len("bias vector", k, bias.len())?;
        check_len("intra-AP block", n * n, block.len())?;
        for h in 0..n {
            if block[h * n + h] != 0.0 {
                return Err(invalid(format!("nonzero diagonal coupling at bin {h}")));
            }
            for g in h + 1..n {
                if block[h * n + g] != block[g * n + h] {
                    return Err(invalid(format!(
                        "intra-AP coupling not symmetric at ({h}, {g})"
                    )));
                }
            }
        }
        let mut partners = vec![Vec::new(); k];
        let mut seen = HashSet::with_capacity(alignment.len());
        for &(i, j) in &alignment.pairs {
            if i >= k || j >= k {
                return Err(Error::OutOfRange {
                    index: i.max(j),
                    bound: k,
                });
            }
            let (pi, _) = index_map.split(i);
            let (pj, _) = index_map.split(j);
            if pi >= pj {
                return Err(invalid(format!(
                    "alignment pair ({i}, {j}) must join an earlier AP block to a later one"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(invalid(format!("duplicate alignment pair ({i}, {j})")));
            }
            partners[i].push(j);
            partners[j].push(i);
        }
        if bias.iter().chain(&block).any(|v| !v.is_finite())
            || !mu.is_finite()
            || !offset.is_finite()
        {
            return Err(invalid("QUBO coefficients must be finite"));
        }
        Ok(Self {
            bias,
            block,
            offset,
            gamma,
            mu,
            index_map,
            alignment,
            partners,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.bias.len()
    }

    pub fn index_map(&self) -> &IndexMap {
        &self.index_map
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn alignment(&self) -> &AlignmentSet {
        &self.alignment
    }

    pub fn partners(&self, i: usize) -> &[usize] {
        &self.partners[i]
    }

    /// Intra-AP coupling between bins `h` and `g` of the same AP.
    pub fn block_coupling(&self, h: usize, g: usize) -> f64 {
        self.block[h * self.index_map.num_bins + g]
    }

    /// Row `h` of the intra-AP block.
    pub fn block_row(&self, h: usize) -> &[f64] {
        let n = self.index_map.num_bins;
        &self.block[h * n..(h + 1) * n]
    }

    /// `W_ij` for any pair of flat indices.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        let (pi, hi) = self.index_map.split(i);
        let (pj, hj) = self.index_map.split(j);
        if pi == pj {
            self.block_coupling(hi, hj)
        } else if self.partners[i].contains(&j) {
            self.mu
        } else {
            0.0
        }
    }

    /// Dense `K × K` coupling matrix; only sensible for small instances.
    pub fn dense_coupling(&self) -> Vec<Vec<f64>> {
        let k = self.num_vars();
        (0..k)
            .map(|i| (0..k).map(|j| self.coupling(i, j)).collect())
            .collect()
    }

    /// Writes the sparse text format:
    ///
    /// ```text
    /// caim-qubo 1
    /// K <K>
    /// P <P>
    /// N_r <N_r>
    /// gamma <γ>
    /// mu <μ>
    /// offset <offset>
    /// b <i> <b_i>                (every i)
    /// W <i> <j> <W_ij>           (i < j; nonzero intra-AP entries, every alignment pair)
    /// ```
    ///
    /// Floats use Rust's shortest round-trip representation, so reading the file
    /// back reproduces every coefficient bit-exactly. `W` is symmetric; only the
    /// upper triangle is written.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let map = self.index_map;
        let mut buf = String::new();
        writeln!(buf, "caim-qubo 1").ok();
        writeln!(buf, "K {}", self.num_vars()).ok();
        writeln!(buf, "P {}", map.num_aps).ok();
        writeln!(buf, "N_r {}", map.num_bins).ok();
        writeln!(buf, "gamma {:e}", self.gamma).ok();
        writeln!(buf, "mu {:e}", self.mu).ok();
        writeln!(buf, "offset {:e}", self.offset).ok();
        out.write_all(buf.as_bytes())?;
        for (i, b) in self.bias.iter().enumerate() {
            writeln!(out, "b {i} {b:e}")?;
        }
        let n = map.num_bins;
        for p in 0..map.num_aps {
            for h in 0..n {
                for g in h + 1..n {
                    let w = self.block_coupling(h, g);
                    if w != 0.0 {
                        writeln!(out, "W {} {} {w:e}", map.flat(p, h), map.flat(p, g))?;
                    }
                }
            }
        }
        let mut cross = self.alignment.pairs.clone();
        cross.sort_unstable();
        for (i, j) in cross {
            writeln!(out, "W {i} {j} {:e}", self.mu)?;
        }
        Ok(())
    }

    /// Parses the format written by [`QuboProblem::write_text`].
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut header: [Option<f64>; 6] = [None; 6];
        const KEYS: [&str; 6] = ["K", "P", "N_r", "gamma", "mu", "offset"];
        let mut bias_entries = Vec::new();
        let mut w_entries = Vec::new();
        let mut saw_magic = false;

        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let ln = lineno + 1;
            let perr = |msg: String| Error::Parse { line: ln, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() || fields[0].starts_with('#') {
                continue;
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("{s:?}: {e}")));
            let idx = |s: &str| s.parse::<usize>().map_err(|e| perr(format!("{s:?}: {e}")));
            match fields.as_slice() {
                ["caim-qubo", "1"] => saw_magic = true,
                ["b", i, v] => bias_entries.push((idx(i)?, num(v)?)),
                ["W", i, j, v] => w_entries.push((idx(i)?, idx(j)?, num(v)?)),
                [key, v] => match KEYS.iter().position(|k| k == key) {
                    Some(slot) => header[slot] = Some(num(v)?),
                    None => return Err(perr(format!("unknown header key {key:?}"))),
                },
                _ => return Err(perr(format!("malformed line {line:?}"))),
            }
        }
        if !saw_magic {
            return Err(Error::Parse {
                line: 1,
                msg: "missing 'caim-qubo 1' header".into(),
            });
        }
        let get = |slot: usize| {
            header[slot].ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing header key {}", KEYS[slot]),
            })
        };
        let (k, p, n) = (get(0)? as usize, get(1)? as usize, get(2)? as usize);
        let (gamma, mu, offset) = (get(3)?, get(4)?, get(5)?);
        let map = IndexMap::new(p, n);
        check_len("K = P·N_r", map.len(), k)?;

        let mut bias = vec![f64::NAN; k];
        for (i, v) in bias_entries {
            *bias
                .get_mut(i)
                .ok_or(Error::OutOfRange { index: i, bound: k })? = v;
        }
        if let Some(i) = bias.iter().position(|v| v.is_nan()) {
            return Err(invalid(format!("missing bias entry for variable {i}")));
        }

        let mut block: Vec<Option<f64>> = vec![None; n * n];
        let mut pairs = Vec::new();
        for (i, j, v) in w_entries {
            if i >= k || j >= k {
                return Err(Error::OutOfRange {
                    index: i.max(j),
                    bound: k,
                });
            }
            let (lo, hi) = (i.min(j), i.max(j));
            let (pi, hi_bin) = map.split(lo);
            let (pj, hj_bin) = map.split(hi);
            if lo == hi {
                return Err(invalid(format!("diagonal coupling W {i} {i}")));
            }
            if pi == pj {
                let slot = &mut block[hi_bin * n + hj_bin];
                match slot {
                    Some(prev) if *prev != v => {
                        return Err(invalid(format!(
                            "intra-AP coupling ({hi_bin}, {hj_bin}) differs between AP blocks"
                        )))
                    }
                    _ => *slot = Some(v),
                }
            } else {
                if v != mu {
                    return Err(invalid(format!(
                        "cross-AP coupling W {i} {j} = {v} differs from mu = {mu}"
                    )));
                }
                pairs.push((lo, hi));
            }
        }
        let mut dense = vec![0.0; n * n];
        for h in 0..n {
            for g in h + 1..n {
                let v = block[h * n + g].unwrap_or(0.0);
                dense[h * n + g] = v;
                dense[g * n + h] = v;
            }
        }
        pairs.sort_unstable();
        Self::from_parts(map, bias, dense, AlignmentSet { pairs }, gamma, mu, offset)
    }
}

fn validate_inputs(
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
    orientations_deg: &[f64],
    gamma: f64,
    mu: f64,
) -> Result<()> {
    if snapshots.is_empty() {
        return Err(invalid("need at least one snapshot"));
    }
    check_len(
        "orientations per snapshot",
        snapshots.len(),
        orientations_deg.len(),
    )?;
    for s in snapshots {
        check_len(
            "snapshot length vs array elements",
            grid.num_elements(),
            s.received.len(),
        )?;
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(invalid(format!("mu must be non-negative, got {mu}")));
    }
    if orientations_deg.iter().any(|a| !a.is_finite()) {
        return Err(invalid("orientations must be finite"));
    }
    Ok(())
}

/// Builds the QUBO for the cooperative objective.
pub fn build_qubo(
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
    orientations_deg: &[f64],
    gamma: f64,
    mu: f64,
) -> Result<QuboProblem> {
    validate_inputs(snapshots, grid, orientations_deg, gamma, mu)?;
    let p_count = snapshots.len();
    let n = grid.num_bins();
    let map = IndexMap::new(p_count, n);
    let pair_penalty = (p_count - 1) as f64 * mu;

    let mut bias = Vec::with_capacity(map.len());
    for s in snapshots {
        let mf = grid.matched_filter(&s.received)?;
        for (h, c) in mf.iter().enumerate() {
            bias.push(-(1.0 + gamma * grid.gram_real(h, h) - 2.0 * gamma * c.re + pair_penalty));
        }
    }

    let mut block: Vec<f64> = grid.gram_real_matrix().iter().map(|g| -gamma * g).collect();
    for h in 0..n {
        block[h * n + h] = 0.0;
    }

    let alignment = AlignmentSet::from_shifts(&map, &pairwise_shifts(orientations_deg, grid));
    let offset = gamma * snapshots.iter().map(|s| norm_sqr(&s.received)).sum::<f64>();
    QuboProblem::from_parts(map, bias, block, alignment, gamma, mu, offset)
}

/// `E(x) = −Σ_i b_i x_i − Σ_i Σ_j W_ij x_i x_j`.
pub fn qubo_energy(problem: &QuboProblem, state: &BinaryState) -> Result<f64> {
    check_len("state", problem.num_vars(), state.len())?;
    let map = problem.index_map;
    let mut linear = 0.0;
    for (b, &x) in problem.bias.iter().zip(&state.bits) {
        if x {
            linear += b;
        }
    }
    let mut quadratic = 0.0;
    for p in 0..map.num_aps {
        let ones = state.ones_in_block(&map, p);
        for &h in &ones {
            let row = problem.block_row(h);
            for &g in &ones {
                quadratic += row[g];
            }
        }
    }
    let mut cross = 0.0;
    for &(i, j) in &problem.alignment.pairs {
        if state.bits[i] && state.bits[j] {
            cross += 2.0 * problem.mu;
        }
    }
    Ok(-linear - quadratic - cross)
}

/// Sum over pairs `p < q` of the Hamming distance between `x_p` and `x_q`
/// rotated by `α(p,q)`, i.e. `x_q^(α)[h] = x_q[(h + n_α) mod N_r]`.
pub fn penalty_g(blocks: &[&[bool]], shifts: &[PairShift]) -> Result<u64> {
    let mut total = 0u64;
    for ps in shifts {
        let (xp, xq) = match (blocks.get(ps.p), blocks.get(ps.q)) {
            (Some(a), Some(b)) => (*a, *b),
            _ => {
                return Err(Error::OutOfRange {
                    index: ps.p.max(ps.q),
                    bound: blocks.len(),
                })
            }
        };
        check_len("AP block", ps.shift.num_bins, xp.len())?;
        check_len("AP block", ps.shift.num_bins, xq.len())?;
        for (h, &bit) in xp.iter().enumerate() {
            let rotated = xq[partner_index(h, &ps.shift)?];
            total += u64::from(bit != rotated);
        }
    }
    Ok(total)
}

/// Direct evaluation of the cooperative objective, without any QUBO matrices.
pub fn objective_value(
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
    orientations_deg: &[f64],
    gamma: f64,
    mu: f64,
    state: &BinaryState,
) -> Result<f64> {
    validate_inputs(snapshots, grid, orientations_deg, gamma, mu)?;
    let map = IndexMap::new(snapshots.len(), grid.num_bins());
    check_len("state", map.len(), state.len())?;
    let mut total = 0.0;
    for (p, s) in snapshots.iter().enumerate() {
        let block = state.block(&map, p);
        let coefficients: Vec<_> = block
            .iter()
            .map(|&b| num_complex::Complex64::new(if b { 1.0 } else { 0.0 }, 0.0))
            .collect();
        let model = grid.synthesize(&coefficients)?;
        let residual: f64 = s
            .received
            .iter()
            .zip(&model)
            .map(|(y, m)| (y - m).norm_sqr())
            .sum();
        total += block.iter().filter(|&&b| b).count() as f64 + gamma * residual;
    }
    let blocks: Vec<&[bool]> = (0..map.num_aps).map(|p| state.block(&map, p)).collect();
    let g = penalty_g(&blocks, &pairwise_shifts(orientations_deg, grid))?;
    Ok(total + mu * g as f64)
}

/// Renders the problem to a string in the text format.
pub fn to_text(problem: &QuboProblem) -> String {
    let mut buf = Vec::new();
    problem.write_text(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}
