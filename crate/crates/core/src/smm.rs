//! Semi-Markov approximation of the whole DELTA system, used to pick the slot
//! budget `K`. States are ZW, CR(ψ) for ψ in `0..=Ψ` and BT(ψ) for ψ in
//! `1..=Ψ`, where ψ is the largest maximum-possible AoII. Parameters are
//! symmetric: a single λ and ε for all nodes.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::cr::CycleMixture;
use crate::error::{Error, Result};
use crate::protocol::bt_activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// Every node counts as active in BT.
    Pessimistic,
    /// The expected number of colliders is removed from the active set.
    Optimistic,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Pessimistic => "pessimistic",
            ModelVariant::Optimistic => "optimistic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SmmState {
    Zw,
    Cr(u32),
    Bt(u32),
}

/// `K = log F / log(1 - λ)`.
pub fn k_from_threshold(f: f64, lambda: f64) -> f64 {
    f.ln() / (-lambda).ln_1p()
}

/// Probability that a BT slot with `active` contenders and budget `k` ends in
/// a NACK: `1 - (1-λ)^K - (1-ε) Bin(1; L, α)` with `α = 1 - (1-λ)^{K/L}`.
pub fn collision_prob_bt(k: f64, active: f64, lambda: f64, epsilon: f64) -> f64 {
    let alpha = bt_activation(lambda, k, active);
    let idle = (k * (-lambda).ln_1p()).exp();
    let single = active * alpha * (1.0 - alpha).powf(active - 1.0);
    (1.0 - idle - (1.0 - epsilon) * single).max(0.0)
}

/// Collision probability of a ZW slot: every one of the `n` nodes activates
/// with probability λ.
pub fn collision_prob_zw(n: usize, lambda: f64, epsilon: f64) -> f64 {
    collision_prob_bt(n as f64, n as f64, lambda, epsilon)
}

/// Number of nodes assumed to contend in BT(ψ).
pub fn active_nodes(psi: u32, variant: ModelVariant, n: usize, zw_cycle: &CycleMixture) -> f64 {
    match variant {
        ModelVariant::Pessimistic => n as f64,
        ModelVariant::Optimistic => n as f64 - expected_colliders(psi, zw_cycle),
    }
}

/// `E[C | τ = ψ]` for a cycle opened in ZW.
pub fn expected_colliders(psi: u32, zw_cycle: &CycleMixture) -> f64 {
    expected_colliders_table(psi, zw_cycle)[psi as usize]
}

/// `E[C | τ = ψ]` for every ψ in `0..=psi_max`.
pub fn expected_colliders_table(psi_max: u32, zw_cycle: &CycleMixture) -> Vec<f64> {
    let t = psi_max as usize;
    let mut num = vec![0.0; t + 1];
    let mut den = vec![0.0; t + 1];
    for (w, model) in zw_cycle.models() {
        let c = model.colliders() as f64;
        for (i, p) in model.duration_pmf(t).into_iter().enumerate() {
            num[i] += c * w * p;
            den[i] += w * p;
        }
    }
    num.iter().zip(&den).map(|(a, &b)| if b > 0.0 { a / b } else { 0.0 }).collect()
}

#[derive(Debug, Clone)]
pub struct SemiMarkovModel {
    pub n: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub k: f64,
    pub psi_max: u32,
    pub variant: ModelVariant,
    states: Vec<SmmState>,
    m: DMatrix<f64>,
    t: DMatrix<f64>,
    xi_zw: f64,
    /// `(calm target, collision target, ξ)` of BT(ψ) at index ψ - 1.
    bt_rows: Vec<(usize, usize, f64)>,
}

impl SemiMarkovModel {
    pub fn index(&self, s: SmmState) -> usize {
        state_index(self.psi_max, s)
    }

    pub fn states(&self) -> &[SmmState] {
        &self.states
    }

    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn sojourns(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn prob(&self, from: SmmState, to: SmmState) -> f64 {
        self.m[(self.index(from), self.index(to))]
    }

    /// Edges with positive probability.
    pub fn edges(&self) -> Vec<(SmmState, SmmState)> {
        let mut out = Vec::new();
        for (i, &a) in self.states.iter().enumerate() {
            for (j, &b) in self.states.iter().enumerate() {
                if self.m[(i, j)] > 0.0 {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Time-fraction steady state over [`states`](Self::states).
    pub fn steady_state(&self) -> Result<Vec<f64>> {
        if self.xi_zw <= 0.0 {
            let mut pi = vec![0.0; self.states.len()];
            pi[0] = 1.0;
            return Ok(pi);
        }
        let alpha = match self.reduced_stationary() {
            Some(alpha) => alpha,
            None => embedded_stationary(&self.m)?,
        };
        Ok(sojourn_weighted(&alpha, &self.m, &self.t))
    }

    pub fn pi_zw(&self) -> Result<f64> {
        Ok(self.steady_state()?[0])
    }

    /// Embedded stationary law via the stochastic complement on ZW and CR.
    /// A BT state has one calm successor, so the first ZW or CR state reached
    /// from each BT state follows one path. Returns `None` when the BT paths
    /// loop or trap, or when the result fails the residual check; the dense
    /// solve then takes over.
    fn reduced_stationary(&self) -> Option<DVector<f64>> {
        let psi_max = self.psi_max as usize;
        let s = psi_max + 2;
        let bt = |i: usize| i - s + 1;
        // exit law of BT(ψ) onto ZW ∪ CR, built in post-order of the calm paths
        let mut exit = DMatrix::<f64>::zeros(psi_max, s);
        let mut mark = vec![0u8; psi_max + 1];
        let mut order = Vec::with_capacity(psi_max);
        for start in 1..=psi_max {
            let mut stack = vec![start];
            while let Some(&psi) = stack.last() {
                if mark[psi] == 2 {
                    stack.pop();
                    continue;
                }
                let (calm, clash, xi) = self.bt_rows[psi - 1];
                let next = (calm >= s).then(|| bt(calm)).filter(|&q| q != psi);
                if let Some(q) = next {
                    match mark[q] {
                        0 => {
                            mark[psi] = 1;
                            stack.push(q);
                            continue;
                        }
                        1 => return None,
                        _ => {}
                    }
                }
                let mut row = DVector::<f64>::zeros(s);
                match next {
                    Some(q) => {
                        row += exit.row(q - 1).transpose() * (1.0 - xi);
                        row[clash] += xi;
                    }
                    None if calm < s => {
                        row[calm] += 1.0 - xi;
                        row[clash] += xi;
                    }
                    // self-loop: leaves only through a collision
                    None if xi > 0.0 => row[clash] = 1.0,
                    None => return None,
                }
                exit.set_row(psi - 1, &row.transpose());
                mark[psi] = 2;
                order.push(psi);
                stack.pop();
            }
        }
        let to_bt = self.m.view((0, s), (s, psi_max));
        let reduced = self.m.view((0, 0), (s, s)) + to_bt * &exit;
        let beta = embedded_stationary(&reduced).ok()?;
        let entry = to_bt.transpose() * &beta;
        let mut visits = vec![0.0; psi_max + 1];
        for &psi in order.iter().rev() {
            let (calm, _, xi) = self.bt_rows[psi - 1];
            let inflow = entry[psi - 1] + visits[psi];
            if calm >= s && bt(calm) == psi {
                visits[psi] = inflow / xi;
            } else {
                visits[psi] = inflow;
                if calm >= s {
                    visits[bt(calm)] += inflow * (1.0 - xi);
                }
            }
        }
        let mut alpha = DVector::<f64>::zeros(self.states.len());
        alpha.rows_mut(0, s).copy_from(&beta);
        for psi in 1..=psi_max {
            alpha[s + psi - 1] = visits[psi];
        }
        alpha /= alpha.sum();
        let residual = (self.m.tr_mul(&alpha) - &alpha).amax();
        (residual < 1e-10).then(|| alpha.map(|x| x.max(0.0)))
    }

    /// Compares the steady mass of CR(Ψ) with that of CR(2Ψ) in a model with
    /// twice the truncation; growing mass means the system is unstable.
    pub fn is_unstable(&self) -> Result<bool> {
        let pi = self.steady_state()?;
        let edge = pi[self.index(SmmState::Cr(self.psi_max))];
        let wider = build_model(self.n, self.lambda, self.epsilon, self.k, 2 * self.psi_max, self.variant)?;
        let wider_edge = wider.steady_state()?[wider.index(SmmState::Cr(wider.psi_max))];
        let unstable = edge > 1e-12 && wider_edge >= edge;
        if unstable {
            log::warn!(
                "semi-Markov model unstable at K={}: CR(Ψ) mass {edge:.3e} -> {wider_edge:.3e} when Ψ doubles",
                self.k
            );
        }
        Ok(unstable)
    }
}

fn state_index(psi_max: u32, s: SmmState) -> usize {
    match s {
        SmmState::Zw => 0,
        SmmState::Cr(p) => 1 + p as usize,
        SmmState::Bt(p) => psi_max as usize + 1 + p as usize,
    }
}

pub fn default_psi_max(n: usize) -> u32 {
    8 * n as u32
}

pub fn build_model(n: usize, lambda: f64, epsilon: f64, k: f64, psi_max: u32, variant: ModelVariant) -> Result<SemiMarkovModel> {
    if n == 0 || psi_max == 0 || !(k > 0.0) || !(0.0..1.0).contains(&lambda) || !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "bad semi-Markov parameters n={n} λ={lambda} ε={epsilon} K={k} Ψ={psi_max}"
        )));
    }
    let mut states = vec![SmmState::Zw];
    states.extend((0..=psi_max).map(SmmState::Cr));
    states.extend((1..=psi_max).map(SmmState::Bt));
    let size = states.len();
    let idx = |s| state_index(psi_max, s);
    let mut m = DMatrix::zeros(size, size);
    let mut t = DMatrix::zeros(size, size);

    let xi_zw = collision_prob_zw(n, lambda, epsilon);
    let zw_cycle = if xi_zw > 0.0 {
        Some(CycleMixture::with_static_p(n, lambda, epsilon)?)
    } else {
        None
    };
    let colliders = match (&zw_cycle, variant) {
        (Some(cycle), ModelVariant::Optimistic) => expected_colliders_table(psi_max, cycle),
        _ => vec![0.0; psi_max as usize + 1],
    };
    let active: Vec<f64> = (0..=psi_max)
        .map(|psi| match psi {
            0 => n as f64,
            _ => (n as f64 - colliders[psi as usize]).max(1.0),
        })
        .collect();

    m[(0, idx(SmmState::Cr(0)))] = 1.0;
    t[(0, idx(SmmState::Cr(0)))] = if xi_zw > 0.0 { 1.0 / xi_zw } else { f64::INFINITY };

    let mut bt_rows = Vec::with_capacity(psi_max as usize);
    for psi in 1..=psi_max {
        let from = idx(SmmState::Bt(psi));
        let l = active[psi as usize];
        let xi = collision_prob_bt(k, l, lambda, epsilon);
        let next = psi as i64 + 1 - (k / l).floor() as i64;
        let calm = if next <= 0 { SmmState::Zw } else { SmmState::Bt((next as u32).min(psi_max)) };
        let clash = SmmState::Cr(next.clamp(0, psi_max as i64) as u32);
        m[(from, idx(calm))] += 1.0 - xi;
        m[(from, idx(clash))] += xi;
        t[(from, idx(calm))] = 1.0;
        t[(from, idx(clash))] = 1.0;
        bt_rows.push((idx(calm), idx(clash), xi));
    }

    // cycle pmfs depend on ψ only through α, which is constant when L is;
    // spans shrink as ψ grows, so the first pmf stored for an α is the longest
    let lone_retry = |span: usize| {
        // no collision ever happens; any cycle is a lone erased retry
        let mut pmf = vec![0.0; span + 1];
        pmf[2.min(span)] = 1.0;
        pmf
    };
    let mut pmfs: HashMap<u64, Vec<f64>> = HashMap::new();
    for psi in 0..=psi_max {
        let from = idx(SmmState::Cr(psi));
        let span = (psi_max - psi) as usize;
        let pmf: &[f64] = match (&zw_cycle, psi) {
            (None, _) => pmfs.entry(0).or_insert_with(|| lone_retry(span)),
            (Some(cycle), 0) => pmfs.entry(u64::MAX).or_insert_with(|| cycle.pmf(span)),
            (Some(_), _) => {
                let alpha = bt_activation(lambda, k, active[psi as usize]);
                pmfs.entry(alpha.to_bits()).or_insert_with(|| {
                    CycleMixture::with_static_p(n, alpha, epsilon)
                        .map(|cycle| cycle.pmf(span))
                        .unwrap_or_else(|_| lone_retry(span))
                })
            }
        };
        let mut placed = 0.0;
        for (len, &w) in pmf.iter().enumerate().take(span) {
            if w > 0.0 {
                let to = idx(SmmState::Bt(psi + len as u32));
                m[(from, to)] = w;
                t[(from, to)] = len as f64;
                placed += w;
            }
        }
        let to = idx(SmmState::Bt(psi_max));
        m[(from, to)] = (1.0 - placed).max(0.0);
        t[(from, to)] = psi_max as f64;
    }

    Ok(SemiMarkovModel {
        n,
        lambda,
        epsilon,
        k,
        psi_max,
        variant,
        states,
        m,
        t,
        xi_zw,
        bt_rows,
    })
}

/// Stationary law of a row-stochastic matrix: solves `α (M - I) = 0` with
/// one balance equation replaced by `Σ α = 1`.
pub fn embedded_stationary(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let size = m.nrows();
    let mut a = m.transpose() - DMatrix::identity(size, size);
    a.row_mut(size - 1).fill(1.0);
    let mut b = DVector::zeros(size);
    b[size - 1] = 1.0;
    let alpha = a
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SteadyState("singular balance equations".into()))?;
    let residual = (m.transpose() * &alpha - &alpha).amax();
    if !(residual < 1e-10) {
        return Err(Error::SteadyState(format!("residual {residual:.3e}")));
    }
    Ok(alpha.map(|x| x.max(0.0)))
}

/// Time-fraction occupancy: `π(s) ∝ α(s) Σ_s' M(s,s') E[T(s,s')]`.
pub fn sojourn_weighted(alpha: &DVector<f64>, m: &DMatrix<f64>, t: &DMatrix<f64>) -> Vec<f64> {
    let weight: Vec<f64> = (0..m.nrows())
        .map(|s| {
            let mean: f64 = (0..m.ncols()).filter(|&j| m[(s, j)] > 0.0).map(|j| m[(s, j)] * t[(s, j)]).sum();
            alpha[s] * mean
        })
        .collect();
    let total: f64 = weight.iter().sum();
    weight.iter().map(|w| w / total).collect()
}

/// `argmax_K π(ZW)` over `k_range`; ties go to the smaller `K`.
pub fn optimize_k(
    n: usize,
    lambda: f64,
    epsilon: f64,
    psi_max: u32,
    variant: ModelVariant,
    k_range: impl IntoIterator<Item = u32>,
) -> Result<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    let mut ks: Vec<u32> = k_range.into_iter().collect();
    ks.sort_unstable();
    for k in ks {
        if k < 2 {
            return Err(Error::invalid("K must be at least 2"));
        }
        let pi = build_model(n, lambda, epsilon, k as f64, psi_max, variant)?.pi_zw()?;
        if best.is_none_or(|(_, b)| pi > b + 1e-12) {
            best = Some((k, pi));
        }
    }
    best.ok_or_else(|| Error::invalid("empty K range"))
}

/// Reference budget used when the model is bypassed.
pub fn fixed_k(n: usize) -> u32 {
    (5 * n).div_ceil(2) as u32
}

/// `(K, π(ZW))` rows for a range of budgets.
pub fn pi_zw_table(
    n: usize,
    lambda: f64,
    epsilon: f64,
    psi_max: u32,
    variant: ModelVariant,
    ks: &[u32],
) -> Result<Vec<(u32, f64)>> {
    ks.iter()
        .map(|&k| Ok((k, build_model(n, lambda, epsilon, k as f64, psi_max, variant)?.pi_zw()?)))
        .collect()
}

pub fn write_pi_table<W: Write>(mut out: W, variant: ModelVariant, rows: &[(u32, f64)]) -> std::io::Result<()> {
    writeln!(out, "variant\tk\tpi_zw")?;
    for (k, pi) in rows {
        writeln!(out, "{}\t{k}\t{pi:.8}", variant.name())?;
    }
    Ok(())
}
