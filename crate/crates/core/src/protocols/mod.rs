//! Payoff games and imitative revision protocols.
//!
//! A protocol gives the probability `p_ij(x)` that, in one step, a single
//! `i` player switches to `j`. All built-in kinds are of the imitative form
//! `x_i x_j r_ij(U(x), x)` and are multiplied by a global scale `s` so that
//! the total switching mass stays at most `s`.

pub mod expr;

use crate::simplex::SimplexGrid;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use expr::{ExprError, Polynomial};

/// Default global rate scale.
pub const DEFAULT_SCALE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("aspiration interval is degenerate (b - a = {width}) at x = {x:?}")]
    DegenerateAspiration { x: Vec<f64>, width: f64 },
    #[error("payoff {payoff} of strategy {strategy} lies outside the aspiration range [{lower}, {upper}]")]
    AspirationRange {
        strategy: usize,
        payoff: f64,
        lower: f64,
        upper: f64,
    },
    #[error("rate p[{i}][{j}] = {value} is negative at x = {x:?}")]
    NegativeRate {
        i: usize,
        j: usize,
        value: f64,
        x: Vec<f64>,
    },
    #[error("total switching mass {total} exceeds 1 at x = {x:?}")]
    MassExceeded { total: f64, x: Vec<f64> },
    #[error("rate p[{i}][{j}] violates the imitation condition at x = {x:?} (value {value})")]
    ImitationCondition {
        i: usize,
        j: usize,
        value: f64,
        x: Vec<f64>,
    },
    #[error("invalid protocol parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: protocol has d = {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Linear population game `U(x) = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffGame {
    d: usize,
    matrix: Vec<f64>,
}

impl PayoffGame {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, ProtocolError> {
        let d = rows.len();
        if d < 2 {
            return Err(ProtocolError::InvalidParameter(
                "payoff matrix needs at least 2 rows".into(),
            ));
        }
        let mut matrix = Vec::with_capacity(d * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(ProtocolError::InvalidParameter(format!(
                    "payoff row {} has {} entries, expected {d}",
                    i + 1,
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(ProtocolError::InvalidParameter(format!(
                    "payoff row {} has a non-finite entry",
                    i + 1
                )));
            }
            matrix.extend_from_slice(r);
        }
        Ok(Self { d, matrix })
    }

    /// Hawk–Dove with resource value `v` and fight cost `c`; strategy 1 is Hawk.
    pub fn hawk_dove(v: f64, c: f64) -> Self {
        Self::new(&[vec![(v - c) / 2.0, v], vec![0.0, v / 2.0]]).expect("valid 2x2 game")
    }

    /// Rock–paper–scissors where strategy `i` beats `i+1` (mod 3), gaining
    /// `win` and losing `loss`.
    pub fn rock_paper_scissors(win: f64, loss: f64) -> Self {
        Self::new(&[
            vec![0.0, win, -loss],
            vec![-loss, 0.0, win],
            vec![win, -loss, 0.0],
        ])
        .expect("valid 3x3 game")
    }

    /// Pure coordination game with diagonal payoffs `a` and `b`.
    pub fn coordination(a: f64, b: f64) -> Self {
        Self::new(&[vec![a, 0.0], vec![0.0, b]]).expect("valid 2x2 game")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.chunks(self.d).map(|r| r.to_vec()).collect()
    }

    pub fn payoffs_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.d) {
            let row = &self.matrix[i * self.d..(i + 1) * self.d];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn payoffs(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.d];
        self.payoffs_into(x, &mut u);
        u
    }

    pub fn mean_payoff(&self, x: &[f64]) -> f64 {
        self.payoffs(x).iter().zip(x).map(|(u, xi)| u * xi).sum()
    }
}

/// One entry `p_{from,to}(x)` of a custom rate table (0-based indices).
#[derive(Debug, Clone, PartialEq)]
pub struct RateEntry {
    pub from: usize,
    pub to: usize,
    pub rate: Polynomial,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolKind {
    /// `p_ij = x_i x_j (U_j - U_i)^+`.
    PairwiseProportional { game: PayoffGame },
    /// Aspiration levels uniform on `[a(x), b(x)]` with
    /// `a = min U - lower_margin`, `b = max U + upper_margin`.
    AspirationUniform {
        game: PayoffGame,
        lower_margin: f64,
        upper_margin: f64,
    },
    /// Aspiration bounds proportional to the own payoff,
    /// `a_i = alpha_i U_i`, `b_i = beta_i U_i`.
    AspirationScaled {
        game: PayoffGame,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
    /// Constant aspiration bounds `[lower, upper]`.
    Dissatisfaction {
        game: PayoffGame,
        lower: f64,
        upper: f64,
    },
    CustomTable { d: usize, entries: Vec<RateEntry> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevisionProtocol {
    kind: ProtocolKind,
    scale: f64,
}

impl RevisionProtocol {
    pub fn new(kind: ProtocolKind, scale: f64) -> Result<Self, ProtocolError> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(ProtocolError::InvalidParameter(format!(
                "scale must lie in (0, 1], got {scale}"
            )));
        }
        match &kind {
            ProtocolKind::AspirationUniform {
                lower_margin,
                upper_margin,
                ..
            } => {
                if !(*lower_margin >= 0.0 && *upper_margin >= 0.0) {
                    return Err(ProtocolError::InvalidParameter(
                        "aspiration margins must be non-negative".into(),
                    ));
                }
            }
            ProtocolKind::AspirationScaled { game, alpha, beta } => {
                if alpha.len() != game.d() || beta.len() != game.d() {
                    return Err(ProtocolError::InvalidParameter(
                        "alpha and beta need one entry per strategy".into(),
                    ));
                }
                if alpha.iter().zip(beta).any(|(a, b)| !(*a < 1.0 && 1.0 < *b)) {
                    return Err(ProtocolError::InvalidParameter(
                        "scaled aspiration needs alpha_i < 1 < beta_i".into(),
                    ));
                }
            }
            ProtocolKind::Dissatisfaction { lower, upper, .. } => {
                if !(upper > lower) {
                    return Err(ProtocolError::InvalidParameter(format!(
                        "dissatisfaction bounds need upper > lower, got [{lower}, {upper}]"
                    )));
                }
            }
            ProtocolKind::CustomTable { d, entries } => {
                if *d < 2 {
                    return Err(ProtocolError::InvalidParameter("custom table needs d >= 2".into()));
                }
                for e in entries {
                    if e.from >= *d || e.to >= *d || e.from == e.to {
                        return Err(ProtocolError::InvalidParameter(format!(
                            "custom rate ({}, {}) is not an off-diagonal pair of a {d}-strategy game",
                            e.from + 1,
                            e.to + 1
                        )));
                    }
                    if e.rate.max_var() > *d {
                        return Err(ProtocolError::InvalidParameter(format!(
                            "custom rate `{}` references x{} but d = {d}",
                            e.rate,
                            e.rate.max_var()
                        )));
                    }
                }
            }
            ProtocolKind::PairwiseProportional { .. } => {}
        }
        Ok(Self { kind, scale })
    }

    /// The protocol with every rate identically zero.
    pub fn zero(d: usize) -> Self {
        Self::new(
            ProtocolKind::CustomTable {
                d,
                entries: Vec::new(),
            },
            1.0,
        )
        .expect("valid zero protocol")
    }

    pub fn aspiration_uniform(game: PayoffGame, scale: f64) -> Result<Self, ProtocolError> {
        Self::new(
            ProtocolKind::AspirationUniform {
                game,
                lower_margin: 1.0,
                upper_margin: 1.0,
            },
            scale,
        )
    }

    pub fn pairwise_proportional(game: PayoffGame, scale: f64) -> Result<Self, ProtocolError> {
        Self::new(ProtocolKind::PairwiseProportional { game }, scale)
    }

    /// Custom table from `(from, to, expression)` triples with 1-based indices.
    pub fn custom(d: usize, table: &[(usize, usize, &str)], scale: f64) -> Result<Self, ProtocolError> {
        let mut entries = Vec::with_capacity(table.len());
        for &(from, to, src) in table {
            if from == 0 || to == 0 {
                return Err(ProtocolError::InvalidParameter(
                    "custom rate indices are 1-based".into(),
                ));
            }
            let rate = Polynomial::parse(src)
                .map_err(|e| ProtocolError::InvalidParameter(e.to_string()))?;
            entries.push(RateEntry {
                from: from - 1,
                to: to - 1,
                rate,
            });
        }
        Self::new(ProtocolKind::CustomTable { d, entries }, scale)
    }

    pub fn kind(&self) -> &ProtocolKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Copy of this protocol with a different global scale.
    pub fn with_scale(&self, scale: f64) -> Result<Self, ProtocolError> {
        Self::new(self.kind.clone(), scale)
    }

    pub fn d(&self) -> usize {
        match &self.kind {
            ProtocolKind::PairwiseProportional { game }
            | ProtocolKind::AspirationUniform { game, .. }
            | ProtocolKind::AspirationScaled { game, .. }
            | ProtocolKind::Dissatisfaction { game, .. } => game.d(),
            ProtocolKind::CustomTable { d, .. } => *d,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ProtocolKind::PairwiseProportional { .. } => "pairwise_proportional",
            ProtocolKind::AspirationUniform { .. } => "aspiration_uniform",
            ProtocolKind::AspirationScaled { .. } => "aspiration_scaled",
            ProtocolKind::Dissatisfaction { .. } => "dissatisfaction",
            ProtocolKind::CustomTable { .. } => "custom_table",
        }
    }

    /// Whether `p_ij(x) > 0` exactly when `x_i x_j > 0`. Pairwise proportional
    /// imitation is never flagged: its rates vanish wherever the payoff
    /// difference is non-positive.
    pub fn interior_noisy(&self) -> bool {
        match &self.kind {
            ProtocolKind::PairwiseProportional { .. } => false,
            ProtocolKind::AspirationUniform {
                lower_margin,
                upper_margin,
                ..
            } => *lower_margin > 0.0 || *upper_margin > 0.0,
            ProtocolKind::AspirationScaled { .. } | ProtocolKind::Dissatisfaction { .. } => true,
            ProtocolKind::CustomTable { d, entries } => {
                let mut seen = vec![false; d * d];
                for e in entries {
                    seen[e.from * d + e.to] = true;
                }
                (0..*d).all(|i| (0..*d).all(|j| i == j || seen[i * d + j]))
            }
        }
    }

    /// Short stable digest of the protocol parameters.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}|{:?}", self.kind, self.scale.to_bits()).as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// Writes the scaled rate matrix at `x` into `out` (row-major `d x d`).
    pub fn rates_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ProtocolError> {
        let d = self.d();
        if x.len() != d {
            return Err(ProtocolError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        out[..d * d].iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            ProtocolKind::PairwiseProportional { game } => {
                let u = game.payoffs(x);
                for i in 0..d {
                    for j in 0..d {
                        if i != j {
                            out[i * d + j] = x[i] * x[j] * (u[j] - u[i]).max(0.0);
                        }
                    }
                }
            }
            ProtocolKind::AspirationUniform {
                game,
                lower_margin,
                upper_margin,
            } => {
                let u = game.payoffs(x);
                let lo = u.iter().cloned().fold(f64::INFINITY, f64::min) - lower_margin;
                let hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + upper_margin;
                let width = hi - lo;
                if width <= 0.0 {
                    return Err(ProtocolError::DegenerateAspiration {
                        x: x.to_vec(),
                        width,
                    });
                }
                for i in 0..d {
                    let dissatisfied = (hi - u[i]) / width;
                    for j in 0..d {
                        if i != j {
                            out[i * d + j] = x[i] * x[j] * dissatisfied;
                        }
                    }
                }
            }
            ProtocolKind::AspirationScaled { game, alpha, beta } => {
                let u = game.payoffs(x);
                for i in 0..d {
                    let (a, b) = (alpha[i] * u[i], beta[i] * u[i]);
                    let width = b - a;
                    if width <= 0.0 {
                        return Err(ProtocolError::DegenerateAspiration {
                            x: x.to_vec(),
                            width,
                        });
                    }
                    let dissatisfied = (b - u[i]) / width;
                    for j in 0..d {
                        if i != j {
                            out[i * d + j] = x[i] * x[j] * dissatisfied;
                        }
                    }
                }
            }
            ProtocolKind::Dissatisfaction { game, lower, upper } => {
                let u = game.payoffs(x);
                let width = upper - lower;
                for i in 0..d {
                    if u[i] < *lower - 1e-12 || u[i] > *upper + 1e-12 {
                        return Err(ProtocolError::AspirationRange {
                            strategy: i + 1,
                            payoff: u[i],
                            lower: *lower,
                            upper: *upper,
                        });
                    }
                    let dissatisfied = ((upper - u[i]) / width).clamp(0.0, 1.0);
                    for j in 0..d {
                        if i != j {
                            out[i * d + j] = x[i] * x[j] * dissatisfied;
                        }
                    }
                }
            }
            ProtocolKind::CustomTable { entries, .. } => {
                for e in entries {
                    let v = e.rate.eval(x);
                    if v < 0.0 {
                        // tiny negative roundoff on the faces is clipped
                        if v > -1e-13 {
                            continue;
                        }
                        return Err(ProtocolError::NegativeRate {
                            i: e.from + 1,
                            j: e.to + 1,
                            value: v,
                            x: x.to_vec(),
                        });
                    }
                    out[e.from * d + e.to] += v;
                }
            }
        }
        let mut total = 0.0;
        for v in out[..d * d].iter_mut() {
            *v *= self.scale;
            total += *v;
        }
        if total > 1.0 + 1e-12 {
            return Err(ProtocolError::MassExceeded {
                total,
                x: x.to_vec(),
            });
        }
        Ok(())
    }

    pub fn jump_rates(&self, x: &[f64]) -> Result<RateMatrix, ProtocolError> {
        let d = self.d();
        let mut data = vec![0.0; d * d];
        self.rates_into(x, &mut data)?;
        Ok(RateMatrix { d, data })
    }

    /// `F_i(x) = sum_j p_ji(x) - sum_j p_ij(x)`.
    pub fn mean_field(&self, x: &[f64]) -> Result<Vec<f64>, ProtocolError> {
        Ok(self.jump_rates(x)?.mean_field())
    }

    /// Smallest `Gamma` with `|y - F(x)|^2 <= Gamma` over every state of `grid`
    /// and every jump `y` (either `e_j - e_i` or `0`) of positive probability.
    pub fn noise_bound(&self, grid: &SimplexGrid) -> Result<f64, ProtocolError> {
        let d = self.d();
        let mut x = vec![0.0; d];
        let mut rates = vec![0.0; d * d];
        let mut gamma: f64 = 0.0;
        for r in 0..grid.len() {
            grid.coords_into(r, &mut x);
            self.rates_into(&x, &mut rates)?;
            let m = RateMatrix {
                d,
                data: rates.clone(),
            };
            let f = m.mean_field();
            if m.total() < 1.0 {
                gamma = gamma.max(f.iter().map(|v| v * v).sum());
            }
            for i in 0..d {
                for j in 0..d {
                    if i != j && m.get(i, j) > 0.0 {
                        let mut s = 0.0;
                        for (k, fk) in f.iter().enumerate() {
                            let y = (k == j) as i32 as f64 - (k == i) as i32 as f64;
                            s += (y - fk) * (y - fk);
                        }
                        gamma = gamma.max(s);
                    }
                }
            }
        }
        Ok(gamma)
    }

    /// Checks the imitation conditions on every point of `grid`: non-negative
    /// rates, total mass at most the scale, and (for noisy protocols)
    /// `p_ij > 0` exactly on pairs of strategies in use.
    pub fn validate_on_grid(&self, grid: &SimplexGrid) -> Result<(), ProtocolError> {
        if grid.d() != self.d() {
            return Err(ProtocolError::DimensionMismatch {
                expected: self.d(),
                got: grid.d(),
            });
        }
        let d = self.d();
        let noisy = self.interior_noisy();
        let mut x = vec![0.0; d];
        let mut rates = vec![0.0; d * d];
        for r in 0..grid.len() {
            grid.coords_into(r, &mut x);
            self.rates_into(&x, &mut rates)?;
            let total: f64 = rates.iter().sum();
            if total > self.scale + 1e-12 {
                return Err(ProtocolError::MassExceeded { total, x: x.clone() });
            }
            for i in 0..d {
                for j in 0..d {
                    if i == j {
                        continue;
                    }
                    let v = rates[i * d + j];
                    let in_use = x[i] * x[j] > 0.0;
                    let bad = if noisy { (v > 0.0) != in_use } else { v > 0.0 && !in_use };
                    if bad {
                        return Err(ProtocolError::ImitationCondition {
                            i: i + 1,
                            j: j + 1,
                            value: v,
                            x: x.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense `d x d` matrix of one-step switching probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    d: usize,
    data: Vec<f64>,
}

impl RateMatrix {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Outflow `q_i = sum_j p_ij`.
    pub fn outflow(&self, i: usize) -> f64 {
        self.data[i * self.d..(i + 1) * self.d].iter().sum()
    }

    /// Inflow `p_i = sum_j p_ji`.
    pub fn inflow(&self, i: usize) -> f64 {
        (0..self.d).map(|j| self.data[j * self.d + i]).sum()
    }

    pub fn mean_field(&self) -> Vec<f64> {
        (0..self.d).map(|i| self.inflow(i) - self.outflow(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_simplex_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    fn replicator(game: &PayoffGame, x: &[f64]) -> Vec<f64> {
        let u = game.payoffs(x);
        let ubar: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
        x.iter().zip(&u).map(|(xi, ui)| xi * (ui - ubar)).collect()
    }

    #[test]
    fn hawk_dove_pairwise_rates() {
        let p = RevisionProtocol::pairwise_proportional(PayoffGame::hawk_dove(2.0, 4.0), 1.0).unwrap();
        let m = p.jump_rates(&[0.25, 0.75]).unwrap();
        // Dove -> Hawk: x_D x_H (U_H - U_D)^+ with U_H = 2 - 3x, U_D = 1 - x
        assert!((m.get(1, 0) - 0.09375).abs() < 1e-15);
        assert_eq!(m.get(0, 1), 0.0);
        let f = p.mean_field(&[0.5, 0.5]).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn vertices_have_no_rates() {
        let games = [PayoffGame::hawk_dove(2.0, 4.0), PayoffGame::coordination(1.0, 2.0)];
        for g in games {
            for p in [
                RevisionProtocol::pairwise_proportional(g.clone(), 1.0).unwrap(),
                RevisionProtocol::aspiration_uniform(g.clone(), 0.5).unwrap(),
            ] {
                for v in [[1.0, 0.0], [0.0, 1.0]] {
                    assert_eq!(p.jump_rates(&v).unwrap().total(), 0.0);
                    assert_eq!(p.mean_field(&v).unwrap(), vec![0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn aspiration_uniform_positive_in_interior() {
        let p = RevisionProtocol::aspiration_uniform(PayoffGame::rock_paper_scissors(2.0, 1.0), 0.5).unwrap();
        let grid = SimplexGrid::new(3, 12).unwrap();
        for &r in grid.interior_ranks() {
            let m = p.jump_rates(&grid.coords(r)).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(m.get(i, j) > 0.0, i != j);
                }
            }
        }
        p.validate_on_grid(&grid).unwrap();
    }

    #[test]
    fn mean_field_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hd = PayoffGame::hawk_dove(2.0, 4.0);
        let rps = PayoffGame::rock_paper_scissors(2.0, 1.0);
        for game in [hd, rps] {
            let d = game.d();
            let pp = RevisionProtocol::pairwise_proportional(game.clone(), 1.0).unwrap();
            let au = RevisionProtocol::aspiration_uniform(game.clone(), 1.0).unwrap();
            let (lo, hi) = (-5.0, 5.0);
            let ds = RevisionProtocol::new(
                ProtocolKind::Dissatisfaction {
                    game: game.clone(),
                    lower: lo,
                    upper: hi,
                },
                1.0,
            )
            .unwrap();
            for _ in 0..1000 {
                let x = random_simplex_point(&mut rng, d);
                let rep = replicator(&game, &x);
                let f = pp.mean_field(&x).unwrap();
                for k in 0..d {
                    assert!((f[k] - rep[k]).abs() < 1e-12);
                }
                assert!(f.iter().sum::<f64>().abs() < 1e-14);

                let u = game.payoffs(&x);
                let width = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0
                    - (u.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0);
                let f = au.mean_field(&x).unwrap();
                for k in 0..d {
                    assert!((f[k] - rep[k] / width).abs() < 1e-12);
                }
                let f = ds.mean_field(&x).unwrap();
                for k in 0..d {
                    assert!((f[k] - rep[k] / (hi - lo)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scaled_aspiration_field() {
        // mean field x_i (sum_j x_j v_j - v_i) with v_j = (beta_j - 1) / (beta_j - alpha_j)
        let game = PayoffGame::new(&[vec![2.0, 1.0, 1.5], vec![1.0, 3.0, 1.0], vec![2.0, 2.0, 1.0]]).unwrap();
        let alpha = vec![0.5, 0.2, 0.0];
        let beta = vec![2.0, 1.5, 3.0];
        let p = RevisionProtocol::new(
            ProtocolKind::AspirationScaled {
                game,
                alpha: alpha.clone(),
                beta: beta.clone(),
            },
            1.0,
        )
        .unwrap();
        let v: Vec<f64> = alpha.iter().zip(&beta).map(|(a, b)| (b - 1.0) / (b - a)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = random_simplex_point(&mut rng, 3);
            let vbar: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
            let f = p.mean_field(&x).unwrap();
            for k in 0..3 {
                assert!((f[k] - x[k] * (vbar - v[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rates_bounded_by_scale_on_grids() {
        let grid2 = SimplexGrid::new(2, 40).unwrap();
        let grid3 = SimplexGrid::new(3, 20).unwrap();
        let protos = [
            (RevisionProtocol::aspiration_uniform(PayoffGame::hawk_dove(2.0, 4.0), 0.5).unwrap(), &grid2),
            (RevisionProtocol::pairwise_proportional(PayoffGame::hawk_dove(2.0, 4.0), 0.5).unwrap(), &grid2),
            (RevisionProtocol::aspiration_uniform(PayoffGame::rock_paper_scissors(3.0, 1.0), 0.5).unwrap(), &grid3),
        ];
        for (p, g) in protos {
            p.validate_on_grid(g).unwrap();
        }
    }

    #[test]
    fn degenerate_and_invalid_parameters() {
        let flat = PayoffGame::new(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let p = RevisionProtocol::new(
            ProtocolKind::AspirationUniform {
                game: flat,
                lower_margin: 0.0,
                upper_margin: 0.0,
            },
            0.5,
        )
        .unwrap();
        assert!(matches!(
            p.jump_rates(&[0.5, 0.5]),
            Err(ProtocolError::DegenerateAspiration { .. })
        ));
        assert!(RevisionProtocol::aspiration_uniform(PayoffGame::hawk_dove(2.0, 4.0), 1.5).is_err());
        assert!(RevisionProtocol::custom(2, &[(1, 1, "x1")], 1.0).is_err());
        assert!(RevisionProtocol::custom(2, &[(1, 2, "x3")], 1.0).is_err());
    }

    #[test]
    fn noise_bound_examples() {
        let grid = SimplexGrid::new(2, 50).unwrap();
        assert_eq!(RevisionProtocol::zero(2).noise_bound(&grid).unwrap(), 0.0);
        let p = RevisionProtocol::aspiration_uniform(PayoffGame::hawk_dove(2.0, 4.0), 0.5).unwrap();
        let grid = SimplexGrid::new(2, 200).unwrap();
        let gamma = p.noise_bound(&grid).unwrap();
        // exhaustive oracle written independently: jumps are +-(e1 - e2)
        let mut fmax: f64 = 0.0;
        let mut oracle: f64 = 0.0;
        for k in 0..=200 {
            let x = k as f64 / 200.0;
            let uh = 2.0 - 3.0 * x;
            let ud = 1.0 - x;
            let (hi, lo) = (uh.max(ud) + 1.0, uh.min(ud) - 1.0);
            let up = 0.5 * x * (1.0 - x) * (hi - ud) / (hi - lo);
            let down = 0.5 * x * (1.0 - x) * (hi - uh) / (hi - lo);
            let f = up - down;
            fmax = fmax.max(f.abs() * 2f64.sqrt());
            if up > 0.0 {
                oracle = oracle.max(2.0 * (1.0 - f) * (1.0 - f));
            }
            if down > 0.0 {
                oracle = oracle.max(2.0 * (1.0 + f) * (1.0 + f));
            }
            oracle = oracle.max(2.0 * f * f);
        }
        assert!((gamma - oracle).abs() < 1e-12, "{gamma} vs {oracle}");
        assert!(gamma <= (2f64.sqrt() + fmax).powi(2));
    }

    #[test]
    fn custom_table_validation() {
        let grid = SimplexGrid::new(2, 30).unwrap();
        let ok = RevisionProtocol::custom(2, &[(1, 2, "x1*x2"), (2, 1, "x1*x2")], 1.0).unwrap();
        assert!(ok.interior_noisy());
        ok.validate_on_grid(&grid).unwrap();
        let leaky = RevisionProtocol::custom(2, &[(1, 2, "x1"), (2, 1, "x1*x2")], 1.0).unwrap();
        assert!(matches!(
            leaky.validate_on_grid(&grid),
            Err(ProtocolError::ImitationCondition { .. })
        ));
        let neg = RevisionProtocol::custom(2, &[(1, 2, "x1*x2*(x1-0.5)"), (2, 1, "x1*x2")], 1.0).unwrap();
        assert!(matches!(
            neg.validate_on_grid(&grid),
            Err(ProtocolError::NegativeRate { .. })
        ));
    }
}
