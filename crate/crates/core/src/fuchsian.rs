//! Free Fuchsian groups given by hyperbolic generators.
//!
//! Words are sequences of letters; letter `2k` is generator `k` and letter
//! `2k + 1` its inverse, so lexicographic order on letter indices reads
//! `g1, g1^-1, g2, g2^-1, ...`. A word `x1 x2 ... xn` evaluates to the map
//! `x1 ∘ x2 ∘ ... ∘ xn`.

use crate::error::{Error, Result};
use crate::moebius::{ExtComplex, MapClass, Moebius};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default cap on the number of words in an enumerated ball.
pub const DEFAULT_CAP: usize = 200_000;

/// Absolute distance to the sampled limit set below which points are rejected.
pub const NEAR_LIMIT_TOL: f64 = 1e-6;

const DEDUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Word {
    letters: Vec<usize>,
}

impl Word {
    pub fn identity() -> Self {
        Word::default()
    }

    /// Single generator `k` (zero based), inverted when `inverse` is set.
    pub fn generator(k: usize, inverse: bool) -> Self {
        Word {
            letters: vec![2 * k + inverse as usize],
        }
    }

    /// Builds a word from letter indices, reducing adjacent inverse pairs.
    pub fn from_letters(letters: &[usize]) -> Self {
        let mut w = Word::identity();
        for &l in letters {
            w.push_reduced(l);
        }
        w
    }

    /// Parses signed 1-based indices: `2` is `g2`, `-1` is `g1^-1`.
    pub fn from_signed(indices: &[i32]) -> Result<Self> {
        let mut letters = Vec::with_capacity(indices.len());
        for &i in indices {
            if i == 0 {
                return Err(Error::InvalidInput("word letters are 1-based".into()));
            }
            let k = i.unsigned_abs() as usize - 1;
            letters.push(2 * k + (i < 0) as usize);
        }
        Ok(Word::from_letters(&letters))
    }

    pub fn letters(&self) -> &[usize] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn signed(&self) -> Vec<i32> {
        self.letters
            .iter()
            .map(|&l| {
                let k = (l / 2 + 1) as i32;
                if l % 2 == 1 {
                    -k
                } else {
                    k
                }
            })
            .collect()
    }

    fn push_reduced(&mut self, l: usize) {
        if self.letters.last() == Some(&inverse_letter(l)) {
            self.letters.pop();
        } else {
            self.letters.push(l);
        }
    }

    /// Reduced concatenation `self · other`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut w = self.clone();
        for &l in &other.letters {
            w.push_reduced(l);
        }
        w
    }

    pub fn inverse(&self) -> Word {
        Word {
            letters: self.letters.iter().rev().map(|&l| inverse_letter(l)).collect(),
        }
    }

    pub fn max_generator(&self) -> Option<usize> {
        self.letters.iter().map(|l| l / 2).max()
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "e");
        }
        for (i, &l) in self.letters.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            write!(f, "g{}", l / 2 + 1)?;
            if l % 2 == 1 {
                write!(f, "^-1")?;
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn inverse_letter(l: usize) -> usize {
    l ^ 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnumerationPolicy {
    pub max_word_length: usize,
    pub tail_tolerance: f64,
    pub cap: usize,
}

impl Default for EnumerationPolicy {
    fn default() -> Self {
        EnumerationPolicy {
            max_word_length: 6,
            tail_tolerance: 1e-7,
            cap: DEFAULT_CAP,
        }
    }
}

impl EnumerationPolicy {
    pub fn with_length(max_word_length: usize) -> Self {
        EnumerationPolicy {
            max_word_length,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tail_tolerance > 0.0) {
            return Err(Error::InvalidInput("tail_tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuchsianGroup {
    generators: Vec<Moebius>,
}

/// Number of reduced words of length at most `l` in the free group on `m`
/// generators, saturating at `u128::MAX`.
pub fn ball_count(m: usize, l: usize) -> u128 {
    if m == 0 {
        return 1;
    }
    let mut total: u128 = 1;
    let mut shell: u128 = 2 * m as u128;
    for _ in 0..l {
        total = total.saturating_add(shell);
        shell = shell.saturating_mul(2 * m as u128 - 1);
    }
    total
}

impl FuchsianGroup {
    /// Validates that generators are hyperbolic, distinct and not mutually
    /// inverse. Freeness is only probed by a ping-pong test on isometric
    /// circles, which warns on failure.
    pub fn new(generators: Vec<Moebius>) -> Result<Self> {
        for (i, g) in generators.iter().enumerate() {
            if g.classify() != MapClass::Hyperbolic {
                return Err(Error::InvalidGroup(format!(
                    "generator {} is {:?}, not hyperbolic",
                    i + 1,
                    g.classify()
                )));
            }
            for (j, h) in generators.iter().enumerate().skip(i + 1) {
                if g.max_coeff_distance(h) < 1e-10 {
                    return Err(Error::InvalidGroup(format!(
                        "generators {} and {} coincide",
                        i + 1,
                        j + 1
                    )));
                }
                if g.max_coeff_distance(&h.inverse()) < 1e-10 {
                    return Err(Error::InvalidGroup(format!(
                        "generators {} and {} are mutually inverse",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let group = FuchsianGroup { generators };
        if !group.ping_pong_ok() {
            log::warn!("isometric circles of the generators overlap; freeness is not certified");
        }
        Ok(group)
    }

    /// Group without generators; every series reduces to its identity term.
    pub fn trivial() -> Self {
        FuchsianGroup {
            generators: Vec::new(),
        }
    }

    pub fn generators(&self) -> &[Moebius] {
        &self.generators
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    pub fn letter_map(&self, l: usize) -> Moebius {
        let g = self.generators[l / 2];
        if l % 2 == 1 {
            g.inverse()
        } else {
            g
        }
    }

    pub fn evaluate(&self, w: &Word) -> Result<Moebius> {
        if let Some(k) = w.max_generator() {
            if k >= self.rank() {
                return Err(Error::InvalidInput(format!(
                    "word {w} uses generator {} of a rank {} group",
                    k + 1,
                    self.rank()
                )));
            }
        }
        Ok(w
            .letters
            .iter()
            .fold(Moebius::IDENTITY, |acc, &l| acc.compose(&self.letter_map(l))))
    }

    /// Checks that the 2m isometric disks `|cz + d| <= 1` of generators and
    /// their inverses are pairwise disjoint on the real line.
    pub fn ping_pong_ok(&self) -> bool {
        let mut intervals = Vec::new();
        for g in &self.generators {
            let [a, _, c, d] = g.coefficients();
            if c.abs() < 1e-14 {
                return true;
            }
            let r = 1.0 / c.abs();
            intervals.push((-d / c - r, -d / c + r));
            intervals.push((a / c - r, a / c + r));
        }
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        intervals.windows(2).all(|w| w[0].1 <= w[1].0)
    }

    pub fn enumerate_ball(&self, radius: usize, cap: usize) -> Result<Ball> {
        let count = ball_count(self.rank(), radius);
        if count > cap as u128 {
            return Err(Error::CapacityExceeded {
                radius,
                count,
                cap,
            });
        }
        let n_letters = 2 * self.rank();
        let letters: Vec<Moebius> = (0..n_letters).map(|l| self.letter_map(l)).collect();
        let mut entries = Vec::with_capacity(count as usize);
        entries.push(BallEntry {
            word: Word::identity(),
            map: Moebius::IDENTITY,
            parent: usize::MAX,
            last: usize::MAX,
        });
        let mut shell_starts = vec![0, 1];
        for _ in 0..radius {
            let (lo, hi) = (shell_starts[shell_starts.len() - 2], entries.len());
            for p in lo..hi {
                let last = entries[p].last;
                for (l, x) in letters.iter().enumerate() {
                    if last != usize::MAX && l == inverse_letter(last) {
                        continue;
                    }
                    let mut word = entries[p].word.clone();
                    word.letters.push(l);
                    let map = entries[p].map.compose(x);
                    entries.push(BallEntry {
                        word,
                        map,
                        parent: p,
                        last: l,
                    });
                }
            }
            shell_starts.push(entries.len());
        }
        Ok(Ball {
            entries,
            shell_starts,
        })
    }

    pub fn ball(&self, policy: &EnumerationPolicy) -> Result<Ball> {
        self.enumerate_ball(policy.max_word_length, policy.cap)
    }

    pub fn limit_set_sample(&self, radius: usize) -> Result<Vec<f64>> {
        Ok(self.enumerate_ball(radius, DEFAULT_CAP)?.limit_set_sample())
    }

    /// Whether `x` sits in a gap of the sampled limit set, with the distance
    /// to the nearest sample as margin.
    pub fn is_second_kind_at(&self, x: f64, radius: usize) -> Result<(bool, f64)> {
        let sample = self.limit_set_sample(radius)?;
        let margin = distance_to_sorted(&sample, x);
        Ok((margin > NEAR_LIMIT_TOL, margin))
    }

    pub fn poincare_partial(&self, z: Complex64, radius: usize) -> Result<(f64, f64)> {
        let ball = self.enumerate_ball(radius, DEFAULT_CAP)?;
        ball.check_away_from_limit_set(z)?;
        Ok(ball.poincare_partial(z))
    }
}

#[derive(Debug, Clone)]
pub struct BallEntry {
    pub word: Word,
    pub map: Moebius,
    /// Index of the entry obtained by deleting the last letter.
    pub parent: usize,
    /// Last letter; `usize::MAX` for the identity.
    pub last: usize,
}

/// Enumerated ball of reduced words, ordered by length and then
/// lexicographically.
#[derive(Debug, Clone)]
pub struct Ball {
    entries: Vec<BallEntry>,
    shell_starts: Vec<usize>,
}

impl Ball {
    pub fn entries(&self) -> &[BallEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn radius(&self) -> usize {
        self.shell_starts.len() - 2
    }

    /// Index range of the words of length exactly `k`.
    pub fn shell(&self, k: usize) -> std::ops::Range<usize> {
        self.shell_starts[k]..self.shell_starts[k + 1]
    }

    /// Index range of the outermost shell.
    pub fn outer_shell(&self) -> std::ops::Range<usize> {
        self.shell(self.radius())
    }

    pub fn position(&self, w: &Word) -> Option<usize> {
        if w.len() > self.radius() {
            return None;
        }
        let range = self.shell(w.len());
        self.entries[range.clone()]
            .binary_search_by(|e| e.word.cmp(w))
            .ok()
            .map(|i| i + range.start)
    }

    pub fn limit_set_sample(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.entries[1..]
            .iter()
            .flat_map(|e| e.map.fixed_points())
            .filter_map(|p| match p {
                ExtComplex::Finite(z) if z.im.abs() < 1e-9 => Some(z.re),
                _ => None,
            })
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= DEDUP_TOL);
        pts
    }

    pub fn check_away_from_limit_set(&self, z: Complex64) -> Result<()> {
        let sample = self.limit_set_sample();
        let d = sample
            .iter()
            .map(|&x| (z - x).norm())
            .fold(f64::INFINITY, f64::min);
        if d < NEAR_LIMIT_TOL {
            return Err(Error::NearLimitSet {
                point: z.re,
                distance: d,
            });
        }
        Ok(())
    }

    /// `Σ |φ'(z)|` over the ball and the contribution of the outer shell.
    pub fn poincare_partial(&self, z: Complex64) -> (f64, f64) {
        let deriv = |e: &BallEntry| match e.map.derivative(z) {
            ExtComplex::Finite(d) => d.norm(),
            ExtComplex::Infinity => f64::INFINITY,
        };
        let sum = self.entries.iter().map(deriv).sum();
        let shell = self.entries[self.outer_shell()].iter().map(deriv).sum();
        (sum, shell)
    }
}

/// Distance from `x` to the nearest entry of a sorted slice.
pub fn distance_to_sorted(sorted: &[f64], x: f64) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    let i = sorted.partition_point(|&s| s < x);
    let mut d = f64::INFINITY;
    if i < sorted.len() {
        d = d.min((sorted[i] - x).abs());
    }
    if i > 0 {
        d = d.min((x - sorted[i - 1]).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_group() -> FuchsianGroup {
        FuchsianGroup::new(vec![
            Moebius::hyperbolic(-2.0, -1.0, 9.0).unwrap(),
            Moebius::hyperbolic(1.0, 2.0, 9.0).unwrap(),
        ])
        .unwrap()
    }

    fn cyclic() -> FuchsianGroup {
        FuchsianGroup::new(vec![Moebius::hyperbolic(1.0, -1.0, 4.0).unwrap()]).unwrap()
    }

    #[test]
    fn ball_sizes() {
        let g = test_group();
        for (l, n) in [(0, 1), (1, 5), (2, 17), (3, 53)] {
            assert_eq!(g.enumerate_ball(l, DEFAULT_CAP).unwrap().len(), n);
            assert_eq!(ball_count(2, l), n as u128);
        }
        assert!(matches!(
            g.enumerate_ball(12, DEFAULT_CAP),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn ball_order_is_length_then_lex() {
        let ball = test_group().enumerate_ball(3, DEFAULT_CAP).unwrap();
        assert!(ball.entries()[0].word.is_empty());
        for w in ball.entries().windows(2) {
            let (a, b) = (&w[0].word, &w[1].word);
            assert!(a.len() < b.len() || (a.len() == b.len() && a < b));
        }
        let w = Word::from_signed(&[2, -1]).unwrap();
        let i = ball.position(&w).unwrap();
        assert_eq!(ball.entries()[i].word, w);
    }

    #[test]
    fn words_reduce() {
        let w = Word::from_signed(&[1, 2, -2, 1]).unwrap();
        assert_eq!(w.signed(), vec![1, 1]);
        let v = Word::from_signed(&[-1, 2]).unwrap();
        assert_eq!(w.concat(&v).signed(), vec![1, 2]);
        assert!(v.concat(&v.inverse()).is_empty());
        assert_eq!(v.to_string(), "g1^-1*g2");
    }

    #[test]
    fn cyclic_limit_set() {
        let g = cyclic();
        for l in 1..5 {
            let s = g.limit_set_sample(l).unwrap();
            assert_eq!(s.len(), 2);
            assert!((s[0] + 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
        }
        assert!(g.limit_set_sample(0).unwrap().is_empty());
        let (ok, margin) = g.is_second_kind_at(0.0, 4).unwrap();
        assert!(ok && (margin - 1.0).abs() < 1e-12);
        assert!(!g.is_second_kind_at(1.0, 4).unwrap().0);
    }

    #[test]
    fn poincare_cyclic_monotone() {
        let g = cyclic();
        let z = Complex64::new(0.0, 1.0);
        let (s0, sh0) = g.poincare_partial(z, 0).unwrap();
        assert_eq!((s0, sh0), (1.0, 1.0));
        let mut prev = (s0, f64::INFINITY);
        for l in 1..=12 {
            let (s, sh) = g.poincare_partial(z, l).unwrap();
            assert!(s > prev.0);
            assert!(sh < prev.1);
            prev = (s, sh);
        }
    }

    #[test]
    fn poincare_test_group_converges() {
        let g = test_group();
        let z = Complex64::new(0.0, 1.0);
        let vals: Vec<(f64, f64)> = (0..=8).map(|l| g.poincare_partial(z, l).unwrap()).collect();
        for l in 2..8 {
            assert!(vals[l + 1].1 < vals[l].1);
        }
        for l in 4..=6 {
            assert!((vals[l].0 - vals[l + 2].0).abs() < vals[l].1);
        }
    }

    #[test]
    fn limit_set_containment() {
        let g = test_group();
        let fine = g.limit_set_sample(8).unwrap();
        let coarse = g.limit_set_sample(6).unwrap();
        let lo = fine[0];
        let hi = fine[fine.len() - 1];
        assert!(coarse.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
        // Gap between the two generator clusters.
        let (ok, margin) = g.is_second_kind_at(0.0, 6).unwrap();
        assert!(ok && margin > 0.05);
    }

    #[test]
    fn rejects_bad_generators() {
        let h = Moebius::hyperbolic(0.0, 1.0, 3.0).unwrap();
        assert!(FuchsianGroup::new(vec![Moebius::translation(1.0)]).is_err());
        assert!(FuchsianGroup::new(vec![h, h]).is_err());
        assert!(FuchsianGroup::new(vec![h, h.inverse()]).is_err());
    }

    #[test]
    fn enumeration_is_deterministic() {
        let g = test_group();
        let a = g.enumerate_ball(5, DEFAULT_CAP).unwrap();
        let b = g.enumerate_ball(5, DEFAULT_CAP).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x.word, y.word);
            assert_eq!(x.map.coefficients(), y.map.coefficients());
        }
    }

    proptest! {
        #[test]
        fn evaluation_is_a_homomorphism(
            w1 in proptest::collection::vec(0usize..4, 0..5),
            w2 in proptest::collection::vec(0usize..4, 0..4),
        ) {
            let g = test_group();
            let a = Word::from_letters(&w1);
            let b = Word::from_letters(&w2);
            let lhs = g.evaluate(&a.concat(&b)).unwrap();
            let rhs = g.evaluate(&a).unwrap().compose(&g.evaluate(&b).unwrap());
            let scale = lhs.coefficients().iter().fold(1.0f64, |m, x| m.max(x.abs()));
            prop_assert!(lhs.max_coeff_distance(&rhs) < 1e-10 * scale);
        }
    }
}
