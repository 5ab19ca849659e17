//! Uniform placement of memory-token IDs over a context ID range, and the
//! minimax objective it optimizes.
//!
//! For a context range `[v1, vL]` of `n = vL - v1 + 1` IDs and `M` memory
//! tokens, the placement is
//!
//! ```text
//! r = n / M,  o = (r - 1) / 2,  u_j = round(v1 + o + j * r),  j = 0..M
//! ```
//!
//! which is the `M`-point evenly spaced sequence from `v1 + o` to `vL - o`.
//! Everything is evaluated in exact rational arithmetic (denominator `2M`)
//! so that ties are decided by [`round_half_even`] and never by float noise.

use num_rational::Ratio;

use super::{LayoutError, PositionId};

/// Largest `L` accepted by [`brute_force_optimal_minimax`].
pub const ORACLE_MAX_LEN: usize = 64;

type Rational = Ratio<i64>;

/// Round to the nearest integer, ties to even.
///
/// This is the single rounding rule used for every uniform placement.
pub fn round_half_even(x: Rational) -> i64 {
    let floor = x.floor().to_integer();
    let frac = x - Rational::from_integer(floor);
    let half = Rational::new(1, 2);
    if frac > half || (frac == half && floor % 2 != 0) {
        floor + 1
    } else {
        floor
    }
}

/// Intermediate quantities of one uniform placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformSpec {
    pub v1: PositionId,
    pub v_last: PositionId,
    pub memory: usize,
}

impl UniformSpec {
    pub fn new(v1: PositionId, v_last: PositionId, memory: usize) -> Result<Self, LayoutError> {
        if v_last < v1 {
            return Err(LayoutError::Empty("context"));
        }
        if memory == 0 {
            return Err(LayoutError::Empty("memory"));
        }
        let span = (v_last - v1 + 1) as usize;
        if memory > span {
            return Err(LayoutError::TooManyMemoryTokens { memory, span });
        }
        Ok(Self { v1, v_last, memory })
    }

    pub fn span(&self) -> i64 {
        self.v_last - self.v1 + 1
    }

    /// Group width `r = (vL - v1 + 1) / M`.
    pub fn r(&self) -> Rational {
        Rational::new(self.span(), self.memory as i64)
    }

    /// Half-group offset `o = (r - 1) / 2`.
    pub fn o(&self) -> Rational {
        (self.r() - 1) / 2
    }

    /// First (unrounded) memory position `b = v1 + o`.
    pub fn b(&self) -> Rational {
        Rational::from_integer(self.v1) + self.o()
    }

    /// Unrounded position of memory token `j`, `b + j * r`.
    pub fn point(&self, j: usize) -> Rational {
        self.b() + self.r() * j as i64
    }

    pub fn positions(&self) -> Vec<PositionId> {
        (0..self.memory).map(|j| round_half_even(self.point(j))).collect()
    }
}

/// Memory-token position IDs spread evenly over the context IDs `[v1, vL]`.
pub fn uniform_memory_positions(
    v1: PositionId,
    v_last: PositionId,
    memory: usize,
) -> Result<Vec<PositionId>, LayoutError> {
    Ok(UniformSpec::new(v1, v_last, memory)?.positions())
}

/// Largest distance from any context ID to its nearest memory ID.
pub fn minimax_distance(context: &[PositionId], memory: &[PositionId]) -> Result<u64, LayoutError> {
    if context.is_empty() {
        return Err(LayoutError::Empty("context"));
    }
    if memory.is_empty() {
        return Err(LayoutError::Empty("memory"));
    }
    Ok(context.iter().map(|&v| memory.iter().map(|&u| v.abs_diff(u)).min().unwrap()).max().unwrap())
}

/// Closed-form optimum `floor(ceil(L / M) / 2)` of the minimax objective.
pub fn minimax_bound(len: usize, memory: usize) -> u64 {
    (len.div_ceil(memory) / 2) as u64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinimaxOptimum {
    pub optimal_value: u64,
    pub witness: Vec<PositionId>,
}

/// Exhaustive search for the best placement of `memory` distinct IDs in
/// `[1, len]`.
///
/// Candidate radii are tried in increasing order; for each radius every
/// sorted placement is enumerated depth-first, pruning a branch as soon as
/// some context position can no longer be reached by any later (larger)
/// memory ID. Failed `(first uncovered, remaining)` states are memoized.
pub fn brute_force_optimal_minimax(len: usize, memory: usize) -> Result<MinimaxOptimum, LayoutError> {
    if len > ORACLE_MAX_LEN {
        return Err(LayoutError::OracleTooLarge(len));
    }
    if memory == 0 {
        return Err(LayoutError::Empty("memory"));
    }
    if len == 0 {
        return Err(LayoutError::Empty("context"));
    }
    if memory > len {
        return Err(LayoutError::TooManyMemoryTokens { memory, span: len });
    }
    for radius in 0..len {
        let mut dead = vec![vec![false; memory + 1]; len + 2];
        let mut placed = Vec::with_capacity(memory);
        if cover_from(1, 0, memory, len, radius, &mut placed, &mut dead) {
            return Ok(MinimaxOptimum { optimal_value: radius as u64, witness: complete_witness(placed, memory, len) });
        }
    }
    unreachable!("radius len - 1 always covers [1, len] with one memory token")
}

/// Tries to cover `[first_uncovered, len]` using at most `left` more memory
/// IDs, each strictly greater than `last`.
fn cover_from(
    first_uncovered: usize,
    last: usize,
    left: usize,
    len: usize,
    radius: usize,
    placed: &mut Vec<PositionId>,
    dead: &mut [Vec<bool>],
) -> bool {
    if first_uncovered > len {
        return true;
    }
    if left == 0 || dead[first_uncovered][left] {
        return false;
    }
    // The next ID must reach `first_uncovered`: u - radius <= first_uncovered.
    let hi = (first_uncovered + radius).min(len);
    for u in (last + 1)..=hi {
        if u + radius < first_uncovered {
            continue;
        }
        placed.push(u as PositionId);
        if cover_from(u + radius + 1, u, left - 1, len, radius, placed, dead) {
            return true;
        }
        placed.pop();
    }
    dead[first_uncovered][left] = true;
    false
}

/// Pads a covering placement with unused IDs so it has exactly `memory`
/// distinct entries.
fn complete_witness(mut placed: Vec<PositionId>, memory: usize, len: usize) -> Vec<PositionId> {
    let mut candidate = 1;
    while placed.len() < memory {
        if !placed.contains(&candidate) {
            placed.push(candidate);
        }
        candidate += 1;
    }
    debug_assert!(candidate as usize <= len + 1);
    placed.sort_unstable();
    placed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(a: i64, b: i64) -> Vec<i64> {
        (a..=b).collect()
    }

    #[test]
    fn rounding_ties_go_to_even() {
        let r = |n, d| round_half_even(Rational::new(n, d));
        assert_eq!(r(5, 2), 2);
        assert_eq!(r(7, 2), 4);
        assert_eq!(r(11, 4), 3);
        assert_eq!(r(-5, 2), -2);
        assert_eq!(r(13, 6), 2);
        assert_eq!(r(53, 6), 9);
    }

    #[test]
    fn canonical_chunks_are_arithmetic_with_step_five() {
        let first = uniform_memory_positions(1, 510, 102).unwrap();
        assert_eq!(first, (0..102).map(|j| 3 + 5 * j).collect::<Vec<_>>());
        let second = uniform_memory_positions(511, 1020, 102).unwrap();
        assert_eq!(second.first(), Some(&513));
        assert_eq!(second.last(), Some(&1018));
        assert!(second.windows(2).all(|w| w[1] - w[0] == 5));
    }

    #[test]
    fn small_placements() {
        assert_eq!(uniform_memory_positions(1, 10, 10).unwrap(), range(1, 10));
        // r = 10/3, o = 7/6: points 13/6, 11/2, 53/6
        assert_eq!(uniform_memory_positions(1, 10, 3).unwrap(), vec![2, 6, 9]);
        // r = 4, o = 3/2: points 5/2, 13/2
        assert_eq!(uniform_memory_positions(1, 8, 2).unwrap(), vec![2, 6]);
    }

    #[test]
    fn spec_quantities_are_consistent() {
        let spec = UniformSpec::new(1, 576, 128).unwrap();
        assert_eq!(spec.r(), Rational::new(9, 2));
        assert_eq!(spec.o(), Rational::new(7, 4));
        assert_eq!(spec.b(), Rational::new(11, 4));
        let last = spec.point(spec.memory - 1);
        assert_eq!(last, Rational::from_integer(spec.v_last) - spec.o());
    }

    #[test]
    fn too_many_memory_tokens_is_an_error() {
        assert_eq!(uniform_memory_positions(1, 4, 5), Err(LayoutError::TooManyMemoryTokens { memory: 5, span: 4 }));
        assert!(uniform_memory_positions(5, 4, 1).is_err());
    }

    #[test]
    fn minimax_examples() {
        let mem = uniform_memory_positions(1, 510, 102).unwrap();
        assert_eq!(minimax_distance(&range(1, 510), &mem).unwrap(), 2);
        assert_eq!(minimax_distance(&range(1, 10), &range(1, 10)).unwrap(), 0);
        assert_eq!(minimax_distance(&range(1, 10), &[2, 6, 9]).unwrap(), 2);
        assert!(minimax_distance(&[], &[1]).is_err());
        assert!(minimax_distance(&[1], &[]).is_err());
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(brute_force_optimal_minimax(10, 3).unwrap().optimal_value, 2);
        assert_eq!(brute_force_optimal_minimax(5, 5).unwrap().optimal_value, 0);
        assert_eq!(brute_force_optimal_minimax(11, 2).unwrap().optimal_value, 3);
        assert_eq!(brute_force_optimal_minimax(1, 1).unwrap().witness, vec![1]);
        assert_eq!(brute_force_optimal_minimax(65, 3), Err(LayoutError::OracleTooLarge(65)));
    }

    #[test]
    fn oracle_witness_achieves_its_value() {
        for len in 1..=20 {
            for memory in 1..=len {
                let opt = brute_force_optimal_minimax(len, memory).unwrap();
                assert_eq!(opt.witness.len(), memory);
                let mut dedup = opt.witness.clone();
                dedup.dedup();
                assert_eq!(dedup.len(), memory, "witness must be distinct");
                let ctx = range(1, len as i64);
                assert_eq!(minimax_distance(&ctx, &opt.witness).unwrap(), opt.optimal_value);
            }
        }
    }
}
