//! Dense pure-state simulator for up to eight qubits.
//!
//! Qubit 0 is the leftmost ket symbol (big-endian). A measurement at angle
//! `θ` uses the basis `{cos(θ/2)|0⟩ + sin(θ/2)|1⟩, −sin(θ/2)|0⟩ + cos(θ/2)|1⟩}`;
//! outcome bit 0 is the first vector. The Bell states are
//! `B1 = (|00⟩+|11⟩)/√2`, `B2 = (|00⟩−|11⟩)/√2`, `B3 = (|01⟩+|10⟩)/√2`,
//! `B4 = (|01⟩−|10⟩)/√2`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bb84::Bit;
use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 8;
/// Probabilities below this are structural zeros, not float noise.
pub const ZERO_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BellOutcome {
    B1,
    B2,
    B3,
    B4,
}

impl BellOutcome {
    pub const ALL: [BellOutcome; 4] = [
        BellOutcome::B1,
        BellOutcome::B2,
        BellOutcome::B3,
        BellOutcome::B4,
    ];

    /// Correlated (B1, B2) or anti-correlated (B3, B4) in the computational
    /// basis.
    pub fn is_correlated(self) -> bool {
        matches!(self, BellOutcome::B1 | BellOutcome::B2)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Amplitudes over |00⟩, |01⟩, |10⟩, |11⟩.
    fn vector(self) -> [f64; 4] {
        let h = FRAC_1_SQRT_2;
        match self {
            BellOutcome::B1 => [h, 0.0, 0.0, h],
            BellOutcome::B2 => [h, 0.0, 0.0, -h],
            BellOutcome::B3 => [0.0, h, h, 0.0],
            BellOutcome::B4 => [0.0, h, -h, 0.0],
        }
    }
}

impl fmt::Display for BellOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

impl PureState {
    /// Computational basis state `|index⟩`.
    pub fn basis(num_qubits: usize, index: usize) -> Result<Self> {
        check_size(num_qubits)?;
        if index >= 1 << num_qubits {
            return Err(Error::InvalidParameter(format!(
                "basis index {index} out of range for {num_qubits} qubits"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { num_qubits, amps })
    }

    /// Builds a state from amplitudes; they must already be normalized.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if !len.is_power_of_two() || len < 2 {
            return Err(Error::InvalidParameter(format!(
                "amplitude vector length {len} is not 2^n"
            )));
        }
        let num_qubits = len.trailing_zeros() as usize;
        check_size(num_qubits)?;
        let s = Self { num_qubits, amps };
        if (s.norm_sqr() - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "state norm² is {}",
                s.norm_sqr()
            )));
        }
        Ok(s)
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::from_amplitudes(amps.iter().map(|&a| Complex64::new(a, 0.0)).collect())
    }

    pub fn bell(which: BellOutcome) -> Self {
        Self::from_real(&which.vector()).expect("normalized")
    }

    /// Single qubit `cos(θ/2)|0⟩ + sin(θ/2)|1⟩`, the 0 outcome at angle `θ`.
    pub fn rotated(theta: f64) -> Self {
        let (s, c) = (theta / 2.0).sin_cos();
        Self::from_real(&[c, s]).expect("normalized")
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        self.amps[index]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `self ⊗ other`; `self`'s qubits come first.
    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        check_size(self.num_qubits + other.num_qubits)?;
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ok(Self {
            num_qubits: self.num_qubits + other.num_qubits,
            amps,
        })
    }

    /// |⟨self|other⟩|².
    pub fn fidelity(&self, other: &PureState) -> f64 {
        assert_eq!(self.num_qubits, other.num_qubits);
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            .norm_sqr()
    }

    pub fn apply_x(&mut self, index: usize) -> Result<()> {
        let m = self.mask(index)?;
        for k in 0..self.amps.len() {
            if k & m == 0 {
                self.amps.swap(k, k | m);
            }
        }
        Ok(())
    }

    pub fn apply_z(&mut self, index: usize) -> Result<()> {
        let m = self.mask(index)?;
        for (k, a) in self.amps.iter_mut().enumerate() {
            if k & m != 0 {
                *a = -*a;
            }
        }
        Ok(())
    }

    /// Moves qubit `from` to position `to`, shifting the ones in between.
    pub fn move_qubit(&self, from: usize, to: usize) -> Result<PureState> {
        self.mask(from)?;
        self.mask(to)?;
        let mut order: Vec<usize> = (0..self.num_qubits).filter(|&q| q != from).collect();
        order.insert(to, from);
        Ok(self.permuted(&order))
    }

    /// New state whose qubit `i` is old qubit `order[i]`.
    fn permuted(&self, order: &[usize]) -> PureState {
        let n = self.num_qubits;
        let mut amps = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        for (old, a) in self.amps.iter().enumerate() {
            let mut new = 0;
            for (i, &q) in order.iter().enumerate() {
                if old >> (n - 1 - q) & 1 == 1 {
                    new |= 1 << (n - 1 - i);
                }
            }
            amps[new] = *a;
        }
        PureState {
            num_qubits: n,
            amps,
        }
    }

    /// Outcome probabilities `[p0, p1]` for qubit `index` at `angle`.
    pub fn probabilities(&self, index: usize, angle: f64) -> Result<[f64; 2]> {
        let m = self.mask(index)?;
        let (s, c) = (angle / 2.0).sin_cos();
        let mut p = [0.0; 2];
        for k in (0..self.amps.len()).filter(|k| k & m == 0) {
            let (a0, a1) = (self.amps[k], self.amps[k | m]);
            p[0] += (a0 * c + a1 * s).norm_sqr();
            p[1] += (a1 * c - a0 * s).norm_sqr();
        }
        debug_assert!(
            (p[0] + p[1] - 1.0).abs() < NORM_TOL,
            "probabilities sum to {}",
            p[0] + p[1]
        );
        Ok(p)
    }

    /// Measures qubit `index` at `angle`; the post-state keeps the qubit in
    /// the observed basis vector.
    pub fn measure_qubit<R: Rng + ?Sized>(
        &self,
        index: usize,
        angle: f64,
        rng: &mut R,
    ) -> Result<(Bit, PureState)> {
        let (bit, reduced) = self.measure_and_remove(index, angle, rng)?;
        let basis_vec = if bit.is_one() {
            PureState::rotated(angle + std::f64::consts::PI)
        } else {
            PureState::rotated(angle)
        };
        let post = if self.num_qubits == 1 {
            basis_vec
        } else {
            reduced
                .expect("multi-qubit")
                .tensor(&basis_vec)?
                .move_qubit(self.num_qubits - 1, index)?
        };
        Ok((bit, post))
    }

    /// Measures qubit `index` and returns the state of the remaining qubits
    /// (order preserved), or `None` if nothing is left.
    pub fn measure_and_remove<R: Rng + ?Sized>(
        &self,
        index: usize,
        angle: f64,
        rng: &mut R,
    ) -> Result<(Bit, Option<PureState>)> {
        let m = self.mask(index)?;
        let p = self.probabilities(index, angle)?;
        let one = sample(&p, rng) == 1;
        let (s, c) = (angle / 2.0).sin_cos();
        let norm = p[usize::from(one)].sqrt();
        let mut amps = Vec::with_capacity(self.amps.len() / 2);
        for k in (0..self.amps.len()).filter(|k| k & m == 0) {
            let (a0, a1) = (self.amps[k], self.amps[k | m]);
            let v = if one {
                a1 * c - a0 * s
            } else {
                a0 * c + a1 * s
            };
            amps.push(v / norm);
        }
        let rest = (self.num_qubits > 1).then(|| PureState {
            num_qubits: self.num_qubits - 1,
            amps,
        });
        Ok((Bit::new(one), rest))
    }

    /// Probabilities of the four Bell outcomes on qubits `(i, j)`.
    pub fn bell_probabilities(&self, i: usize, j: usize) -> Result<[f64; 4]> {
        let (mi, mj) = self.pair_masks(i, j)?;
        let mut p = [0.0; 4];
        for k in (0..self.amps.len()).filter(|k| k & (mi | mj) == 0) {
            let q = self.bell_components(k, mi, mj);
            for (pi, c) in p.iter_mut().zip(q) {
                *pi += c.norm_sqr();
            }
        }
        Ok(p)
    }

    fn bell_components(&self, k: usize, mi: usize, mj: usize) -> [Complex64; 4] {
        let a00 = self.amps[k];
        let a01 = self.amps[k | mj];
        let a10 = self.amps[k | mi];
        let a11 = self.amps[k | mi | mj];
        let h = FRAC_1_SQRT_2;
        [
            (a00 + a11) * h,
            (a00 - a11) * h,
            (a01 + a10) * h,
            (a01 - a10) * h,
        ]
    }

    /// Projects qubits `(i, j)` onto a Bell state; both stay in the
    /// post-state.
    pub fn bell_measure<R: Rng + ?Sized>(
        &self,
        i: usize,
        j: usize,
        rng: &mut R,
    ) -> Result<(BellOutcome, PureState)> {
        let (outcome, rest) = self.bell_measure_and_remove(i, j, rng)?;
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let bell = PureState::bell(outcome);
        let Some(rest) = rest else {
            return Ok((outcome, if i < j { bell } else { bell.permuted(&[1, 0]) }));
        };
        // Put the pair at the end in (i, j) order, then move into place.
        let joined = rest.tensor(&bell)?;
        let n = self.num_qubits;
        let mut order = Vec::with_capacity(n);
        let mut next_rest = 0;
        for q in 0..n {
            if q == i {
                order.push(n - 2);
            } else if q == j {
                order.push(n - 1);
            } else {
                order.push(next_rest);
                next_rest += 1;
            }
        }
        debug_assert!(lo < hi);
        Ok((outcome, joined.permuted(&order)))
    }

    /// Bell measurement that discards the measured pair.
    pub fn bell_measure_and_remove<R: Rng + ?Sized>(
        &self,
        i: usize,
        j: usize,
        rng: &mut R,
    ) -> Result<(BellOutcome, Option<PureState>)> {
        let (mi, mj) = self.pair_masks(i, j)?;
        let p = self.bell_probabilities(i, j)?;
        let outcome = BellOutcome::ALL[sample(&p, rng)];
        let norm = p[outcome.index()].sqrt();
        let mut amps = Vec::with_capacity(self.amps.len() / 4);
        for k in (0..self.amps.len()).filter(|k| k & (mi | mj) == 0) {
            amps.push(self.bell_components(k, mi, mj)[outcome.index()] / norm);
        }
        let rest = (self.num_qubits > 2).then(|| PureState {
            num_qubits: self.num_qubits - 2,
            amps,
        });
        Ok((outcome, rest))
    }

    fn mask(&self, index: usize) -> Result<usize> {
        if index >= self.num_qubits {
            return Err(Error::QubitIndex {
                index,
                num_qubits: self.num_qubits,
            });
        }
        Ok(1 << (self.num_qubits - 1 - index))
    }

    fn pair_masks(&self, i: usize, j: usize) -> Result<(usize, usize)> {
        if i == j {
            return Err(Error::InvalidParameter(format!(
                "Bell measurement needs two distinct qubits, got {i} twice"
            )));
        }
        Ok((self.mask(i)?, self.mask(j)?))
    }
}

fn check_size(num_qubits: usize) -> Result<()> {
    if !(1..=MAX_QUBITS).contains(&num_qubits) {
        return Err(Error::InvalidParameter(format!(
            "{num_qubits} qubits outside supported range 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}

fn sample<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().filter(|&&x| x > ZERO_TOL).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &x) in p.iter().enumerate() {
        if x <= ZERO_TOL {
            continue;
        }
        last = i;
        if u < x {
            return i;
        }
        u -= x;
    }
    last
}

/// `(|B1,0⟩ + |B3,1⟩)/√2` on qubits (A, B, M).
pub fn prepare_ghz_type() -> PureState {
    let mut amps = [0.0; 8];
    for k in [0b000, 0b110, 0b011, 0b101] {
        amps[k] = 0.5;
    }
    PureState::from_real(&amps).expect("normalized")
}

pub const CHSH_ALICE: [f64; 2] = [0.0, FRAC_PI_2];
pub const CHSH_BOB: [f64; 2] = [FRAC_PI_4, -FRAC_PI_4];

/// Running CHSH statistics over the four setting pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChshTally {
    sum: [[i64; 2]; 2],
    count: [[u64; 2]; 2],
}

impl ChshTally {
    /// Records one trial with Alice's setting `x`, Bob's `y` and their bits.
    pub fn record(&mut self, x: usize, y: usize, a: Bit, b: Bit) {
        self.sum[x][y] += if a == b { 1 } else { -1 };
        self.count[x][y] += 1;
    }

    pub fn trials(&self) -> u64 {
        self.count.iter().flatten().sum()
    }

    pub fn correlation(&self, x: usize, y: usize) -> f64 {
        if self.count[x][y] == 0 {
            0.0
        } else {
            self.sum[x][y] as f64 / self.count[x][y] as f64
        }
    }

    /// `E(a,b) + E(a,b') + E(a',b) − E(a',b')`.
    pub fn s_value(&self) -> f64 {
        self.correlation(0, 0) + self.correlation(0, 1) + self.correlation(1, 0)
            - self.correlation(1, 1)
    }
}

/// Empirical CHSH value over pairs from `pair_source`. Each trial draws a
/// fresh pair and a uniformly random setting.
pub fn chsh_estimate<R, F>(mut pair_source: F, trials: u64, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> PureState,
{
    if trials == 0 {
        return Err(Error::InvalidParameter(
            "CHSH estimate needs at least one trial".into(),
        ));
    }
    let mut tally = ChshTally::default();
    for _ in 0..trials {
        let pair = pair_source(rng);
        if pair.num_qubits() != 2 {
            return Err(Error::InvalidParameter(format!(
                "pair source produced {} qubits",
                pair.num_qubits()
            )));
        }
        let (x, y) = (
            usize::from(rng.random_bool(0.5)),
            usize::from(rng.random_bool(0.5)),
        );
        let (a, rest) = pair.measure_and_remove(0, CHSH_ALICE[x], rng)?;
        let (b, _) = rest
            .expect("one qubit left")
            .measure_and_remove(0, CHSH_BOB[y], rng)?;
        tally.record(x, y, a, b);
    }
    Ok(tally.s_value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSource;

    fn rng(label: &str) -> crate::SimRng {
        SeedSource::new(2024).stream(label)
    }

    #[test]
    fn ghz_type_expansion() {
        let s = prepare_ghz_type();
        for k in 0..8 {
            let want = if [0b000, 0b110, 0b011, 0b101].contains(&k) {
                0.5
            } else {
                0.0
            };
            assert!((s.amplitude(k).re - want).abs() < 1e-12 && s.amplitude(k).im == 0.0);
        }
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        // Same thing built from the Bell definitions.
        let zero = PureState::basis(1, 0).unwrap();
        let one = PureState::basis(1, 1).unwrap();
        let b1 = PureState::bell(BellOutcome::B1).tensor(&zero).unwrap();
        let b3 = PureState::bell(BellOutcome::B3).tensor(&one).unwrap();
        let sum: Vec<Complex64> = b1
            .amplitudes()
            .iter()
            .zip(b3.amplitudes())
            .map(|(a, b)| (a + b) * FRAC_1_SQRT_2)
            .collect();
        assert!(PureState::from_amplitudes(sum).unwrap().fidelity(&s) > 1.0 - 1e-12);
    }

    #[test]
    fn computational_triples_have_even_parity() {
        let mut r = rng("parity");
        for _ in 0..2_000 {
            let s = prepare_ghz_type();
            let (a, s) = s.measure_qubit(0, 0.0, &mut r).unwrap();
            let (b, s) = s.measure_qubit(1, 0.0, &mut r).unwrap();
            let (m, _) = s.measure_qubit(2, 0.0, &mut r).unwrap();
            assert_eq!(a ^ b, m);
        }
    }

    #[test]
    fn measuring_m_projects_onto_bell_times_m() {
        let mut r = rng("m");
        let trials = 100_000;
        let mut ones = 0;
        let zero = PureState::basis(1, 0).unwrap();
        let one = PureState::basis(1, 1).unwrap();
        let b1 = PureState::bell(BellOutcome::B1).tensor(&zero).unwrap();
        let b3 = PureState::bell(BellOutcome::B3).tensor(&one).unwrap();
        for i in 0..trials {
            let (m, post) = prepare_ghz_type().measure_qubit(2, 0.0, &mut r).unwrap();
            if m.is_one() {
                ones += 1;
            }
            if i < 200 {
                let want = if m.is_one() { &b3 } else { &b1 };
                assert!(post.fidelity(want) > 1.0 - 1e-12);
                assert!((post.norm_sqr() - 1.0).abs() < 1e-9);
            }
        }
        let f = ones as f64 / trials as f64;
        assert!((f - 0.5).abs() < 0.01, "{f}");
    }

    #[test]
    fn correlated_and_anticorrelated_branches() {
        let mut r = rng("branches");
        for _ in 0..500 {
            let (m, s) = prepare_ghz_type().measure_qubit(2, 0.0, &mut r).unwrap();
            let (a, s) = s.measure_qubit(0, 0.0, &mut r).unwrap();
            let (b, _) = s.measure_qubit(1, 0.0, &mut r).unwrap();
            if m.is_one() {
                if a.is_one() {
                    assert!(!b.is_one());
                }
                assert_ne!(a, b);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn bell_measuring_a_b_collapses_m() {
        let mut r = rng("bell-ab");
        let trials = 100_000;
        let mut b1 = 0;
        for i in 0..trials {
            let (o, rest) = prepare_ghz_type()
                .bell_measure_and_remove(0, 1, &mut r)
                .unwrap();
            assert!(matches!(o, BellOutcome::B1 | BellOutcome::B3));
            if o == BellOutcome::B1 {
                b1 += 1;
            }
            if i < 200 {
                let m = rest.unwrap();
                let want = if o == BellOutcome::B1 { 0 } else { 1 };
                assert!((m.amplitude(want).norm_sqr() - 1.0).abs() < 1e-12);
            }
        }
        assert!((b1 as f64 / trials as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn product_zero_zero_splits_between_b1_and_b2() {
        let mut r = rng("00");
        let s = PureState::basis(2, 0).unwrap();
        let p = s.bell_probabilities(0, 1).unwrap();
        assert!(
            (p[0] - 0.5).abs() < 1e-12
                && (p[1] - 0.5).abs() < 1e-12
                && p[2] < ZERO_TOL
                && p[3] < ZERO_TOL
        );
        let trials = 100_000;
        let mut b1 = 0;
        for _ in 0..trials {
            let (o, _) = s.bell_measure(0, 1, &mut r).unwrap();
            assert!(matches!(o, BellOutcome::B1 | BellOutcome::B2));
            b1 += u32::from(o == BellOutcome::B1);
        }
        assert!((f64::from(b1) / trials as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn bell_eigenstates_and_repeatability() {
        let mut r = rng("eigen");
        for which in BellOutcome::ALL {
            let (o, _) = PureState::bell(which).bell_measure(0, 1, &mut r).unwrap();
            assert_eq!(o, which);
        }
        for _ in 0..200 {
            let s = prepare_ghz_type();
            let (o1, post) = s.bell_measure(1, 2, &mut r).unwrap();
            let (o2, post2) = post.bell_measure(1, 2, &mut r).unwrap();
            assert_eq!(o1, o2);
            assert!(post.fidelity(&post2) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn reversed_bell_pair_keeps_qubit_order() {
        let mut r = rng("rev");
        // |01⟩ measured as pair (1, 0): B3/B4 on the swapped ordering.
        let s = PureState::basis(2, 0b01).unwrap();
        let (o, post) = s.bell_measure(1, 0, &mut r).unwrap();
        assert!(!o.is_correlated());
        let (o2, _) = post.bell_measure(1, 0, &mut r).unwrap();
        assert_eq!(o, o2);
    }

    #[test]
    fn index_errors() {
        let mut r = rng("err");
        let s = prepare_ghz_type();
        assert!(matches!(
            s.measure_qubit(3, 0.0, &mut r),
            Err(Error::QubitIndex {
                index: 3,
                num_qubits: 3
            })
        ));
        assert!(s.bell_measure(0, 0, &mut r).is_err());
        assert!(s.bell_measure(0, 5, &mut r).is_err());
        assert!(PureState::basis(9, 0).is_err());
        assert!(PureState::from_real(&[1.0, 1.0]).is_err());
        assert!(s.tensor(&s).unwrap().tensor(&s).is_err());
    }

    #[test]
    fn rotated_measurement_probabilities() {
        let plus = PureState::rotated(FRAC_PI_2);
        let p = plus.probabilities(0, FRAC_PI_2).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        let p = plus.probabilities(0, 0.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        let mut r = rng("rot");
        let (bit, post) = PureState::basis(1, 0)
            .unwrap()
            .measure_qubit(0, FRAC_PI_2, &mut r)
            .unwrap();
        let again = post.probabilities(0, FRAC_PI_2).unwrap();
        assert!((again[usize::from(bit.is_one())] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measure_keeps_qubit_in_place() {
        let mut r = rng("place");
        for _ in 0..100 {
            let (m, post) = prepare_ghz_type().measure_qubit(0, 0.0, &mut r).unwrap();
            let p = post.probabilities(0, 0.0).unwrap();
            assert!((p[usize::from(m.is_one())] - 1.0).abs() < 1e-12);
            assert_eq!(post.num_qubits(), 3);
        }
    }

    #[test]
    fn chsh_on_b1_reaches_tsirelson() {
        let mut r = rng("chsh-b1");
        let s = chsh_estimate(|_| PureState::bell(BellOutcome::B1), 100_000, &mut r).unwrap();
        assert!((s - 2.0 * std::f64::consts::SQRT_2).abs() < 0.05, "{s}");
    }

    #[test]
    fn chsh_on_random_products_is_classical() {
        let mut r = rng("chsh-prod");
        let s = chsh_estimate(
            |r| {
                let a = PureState::rotated(r.random::<f64>() * std::f64::consts::TAU);
                let b = PureState::rotated(r.random::<f64>() * std::f64::consts::TAU);
                a.tensor(&b).unwrap()
            },
            100_000,
            &mut r,
        )
        .unwrap();
        assert!(s.abs() <= 2.05, "{s}");
        let s = chsh_estimate(
            |r| PureState::basis(2, r.random_range(0..4)).unwrap(),
            100_000,
            &mut r,
        )
        .unwrap();
        assert!(s.abs() <= 2.05, "{s}");
        assert!(chsh_estimate(|_| PureState::bell(BellOutcome::B1), 0, &mut r).is_err());
    }

    #[test]
    fn move_qubit_round_trip() {
        let s = prepare_ghz_type().tensor(&PureState::rotated(0.3)).unwrap();
        let moved = s.move_qubit(3, 0).unwrap();
        assert!(moved.move_qubit(0, 3).unwrap().fidelity(&s) > 1.0 - 1e-12);
        assert!(moved.fidelity(&s) < 0.99);
    }
}
