//! Dense linear algebra over GF(2^8): elimination, rank, null spaces and
//! subspace intersection. Matrices are slices of row vectors.

use super::{FieldError, Gf256, SymbolVector};

/// Result of [`gaussian_solve`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Solution {
    /// The coefficient matrix has full column rank; `x` is the unique solution.
    Unique(Vec<SymbolVector>),
    /// The system is consistent but underdetermined. `witness` is a non-zero
    /// vector `w` with `A · w = 0`.
    RankDeficient { rank: usize, witness: SymbolVector },
    /// No solution exists. `rank` is the rank of the coefficient matrix.
    Inconsistent { rank: usize },
}

struct Reduced {
    /// Row-reduced `[A | B]`, only the first `rank` rows are meaningful.
    rows: Vec<Vec<Gf256>>,
    pivots: Vec<usize>,
    cols: usize,
    inconsistent: bool,
}

fn check_rows(rows: &[SymbolVector]) -> Result<usize, FieldError> {
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(FieldError::LengthMismatch {
            left: width,
            right: bad.len(),
        });
    }
    Ok(width)
}

/// Reduced row echelon form of `[A | B]`, pivoting only within the first
/// `cols` columns.
fn reduce(a: &[SymbolVector], b: Option<&[SymbolVector]>, cols: usize) -> Reduced {
    let mut rows: Vec<Vec<Gf256>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.as_slice().to_vec();
            if let Some(b) = b {
                row.extend_from_slice(b[i].as_slice());
            }
            row
        })
        .collect();
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows.len() {
            break;
        }
        let Some(p) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, p);
        let inv = rows[rank][col].inv().expect("pivot is non-zero");
        let row = inv.mul_row();
        for s in rows[rank].iter_mut() {
            s.0 = row[s.0 as usize];
        }
        let pivot_row = rows[rank].clone();
        for (r, other) in rows.iter_mut().enumerate() {
            if r == rank || other[col].is_zero() {
                continue;
            }
            let factor = other[col];
            let f = factor.mul_row();
            for (d, s) in other.iter_mut().zip(&pivot_row) {
                d.0 ^= f[s.0 as usize];
            }
        }
        pivots.push(col);
        rank += 1;
    }
    let inconsistent = rows[rank..].iter().any(|r| r[cols..].iter().any(|s| !s.is_zero()));
    rows.truncate(rank);
    Reduced {
        rows,
        pivots,
        cols,
        inconsistent,
    }
}

/// Solves `A · X = B` where `A` is given as rows of length `c` and `B` as rows
/// of length `k` (one per row of `A`). On success `X` has `c` rows of length `k`.
pub fn gaussian_solve(matrix: &[SymbolVector], rhs: &[SymbolVector]) -> Result<Solution, FieldError> {
    let cols = check_rows(matrix)?;
    let width = check_rows(rhs)?;
    if matrix.len() != rhs.len() {
        return Err(FieldError::Shape(format!(
            "{} coefficient rows but {} right-hand-side rows",
            matrix.len(),
            rhs.len()
        )));
    }
    let red = reduce(matrix, Some(rhs), cols);
    let rank = red.pivots.len();
    if red.inconsistent {
        return Ok(Solution::Inconsistent { rank });
    }
    if rank < cols {
        let witness = null_vector(&red).expect("rank < cols implies a free column");
        return Ok(Solution::RankDeficient { rank, witness });
    }
    let mut x = vec![SymbolVector::zeros(width); cols];
    for (row, &pc) in red.rows.iter().zip(&red.pivots) {
        x[pc] = SymbolVector::from(row[cols..].to_vec());
    }
    Ok(Solution::Unique(x))
}

fn null_vector(red: &Reduced) -> Option<SymbolVector> {
    null_basis(red).into_iter().next()
}

fn null_basis(red: &Reduced) -> Vec<SymbolVector> {
    let mut out = Vec::new();
    let mut is_pivot = vec![false; red.cols];
    for &p in &red.pivots {
        is_pivot[p] = true;
    }
    for free in (0..red.cols).filter(|&c| !is_pivot[c]) {
        let mut v = SymbolVector::zeros(red.cols);
        v[free] = Gf256::ONE;
        for (row, &pc) in red.rows.iter().zip(&red.pivots) {
            // char 2: x_pc = -row[free] = row[free]
            v[pc] = row[free];
        }
        out.push(v);
    }
    out
}

/// Any solution of `A · X = B`, free variables set to zero. `None` if inconsistent.
pub fn solve_particular(
    matrix: &[SymbolVector],
    rhs: &[SymbolVector],
) -> Result<Option<Vec<SymbolVector>>, FieldError> {
    let cols = check_rows(matrix)?;
    let width = check_rows(rhs)?;
    if matrix.len() != rhs.len() {
        return Err(FieldError::Shape("row count mismatch".into()));
    }
    let red = reduce(matrix, Some(rhs), cols);
    if red.inconsistent {
        return Ok(None);
    }
    let mut x = vec![SymbolVector::zeros(width); cols];
    for (row, &pc) in red.rows.iter().zip(&red.pivots) {
        x[pc] = SymbolVector::from(row[cols..].to_vec());
    }
    Ok(Some(x))
}

pub fn rank(rows: &[SymbolVector]) -> usize {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    reduce(rows, None, cols).pivots.len()
}

/// Reduced row echelon basis of the row space.
pub fn row_basis(rows: &[SymbolVector]) -> Vec<SymbolVector> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    reduce(rows, None, cols)
        .rows
        .into_iter()
        .map(SymbolVector::from)
        .collect()
}

/// Basis of `{ x : A · x = 0 }`.
pub fn null_space(rows: &[SymbolVector], cols: usize) -> Vec<SymbolVector> {
    null_basis(&reduce(rows, None, cols))
}

pub fn transpose(rows: &[SymbolVector], cols: usize) -> Vec<SymbolVector> {
    (0..cols).map(|c| rows.iter().map(|r| r[c]).collect()).collect()
}

/// `y · rows`, a linear combination of the given rows.
pub fn combine_rows(rows: &[SymbolVector], weights: &SymbolVector, width: usize) -> SymbolVector {
    let mut acc = SymbolVector::zeros(width);
    for (r, w) in rows.iter().zip(weights.iter()) {
        super::axpy(acc.as_mut_slice(), *w, r.as_slice());
    }
    acc
}

/// Finds weights `y` with `Σ y_i · rows_i = target`, if `target` lies in the row space.
pub fn express_in_rows(rows: &[SymbolVector], target: &SymbolVector) -> Option<SymbolVector> {
    if rows.is_empty() {
        return if target.is_zero() {
            Some(SymbolVector::zeros(0))
        } else {
            None
        };
    }
    let width = target.len();
    let at = transpose(rows, width);
    let rhs: Vec<SymbolVector> = target.iter().map(|s| SymbolVector::from(vec![*s])).collect();
    let sol = solve_particular(&at, &rhs).ok()??;
    Some(sol.into_iter().map(|v| v[0]).collect())
}

/// Whether every row of `sub` lies in the row space of `space`.
pub fn spans(space: &[SymbolVector], sub: &[SymbolVector]) -> bool {
    let base = rank(space);
    let mut all = space.to_vec();
    all.extend_from_slice(sub);
    rank(&all) == base
}

/// Basis of `rowspace(u) ∩ rowspace(v)`.
pub fn intersect(u: &[SymbolVector], v: &[SymbolVector], width: usize) -> Vec<SymbolVector> {
    if u.is_empty() || v.is_empty() {
        return Vec::new();
    }
    let u = row_basis(u);
    let v = row_basis(v);
    let mut stacked = u.clone();
    stacked.extend(v.iter().cloned());
    // Left null vectors z of the stacked matrix give z_u · U = z_v · V.
    let left_null = null_space(&transpose(&stacked, width), stacked.len());
    let mut out = Vec::new();
    for z in left_null {
        let zu: SymbolVector = z.as_slice()[..u.len()].iter().copied().collect();
        out.push(combine_rows(&u, &zu, width));
    }
    row_basis(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sv(bytes: &[u8]) -> SymbolVector {
        SymbolVector::from_bytes(bytes)
    }

    fn matmul(a: &[SymbolVector], x: &[SymbolVector], width: usize) -> Vec<SymbolVector> {
        a.iter().map(|row| combine_rows(x, row, width)).collect()
    }

    #[test]
    fn identity_system() {
        let a = vec![sv(&[1, 0, 0]), sv(&[0, 1, 0]), sv(&[0, 0, 1])];
        let b = vec![sv(&[5, 6]), sv(&[7, 8]), sv(&[9, 10])];
        assert_eq!(gaussian_solve(&a, &b).unwrap(), Solution::Unique(b));
    }

    #[test]
    fn two_by_two_hand_elimination() {
        let (s, t) = (Gf256(0x3C), Gf256(0xA5));
        let a = vec![sv(&[1, 1]), sv(&[1, 0])];
        let b = vec![SymbolVector::from(vec![s]), SymbolVector::from(vec![t])];
        let Solution::Unique(x) = gaussian_solve(&a, &b).unwrap() else {
            panic!("expected unique solution");
        };
        assert_eq!(x[0][0], t);
        assert_eq!(x[1][0], s + t);
        // substitute back
        assert_eq!(x[0][0] + x[1][0], s);
    }

    #[test]
    fn duplicated_row_is_rank_deficient() {
        let a = vec![sv(&[1, 1]), sv(&[1, 1])];
        let b = vec![sv(&[4]), sv(&[4])];
        match gaussian_solve(&a, &b).unwrap() {
            Solution::RankDeficient { rank, witness } => {
                assert_eq!(rank, 1);
                assert!(!witness.is_zero());
                for row in &a {
                    assert_eq!(super::super::dot(row, &witness).unwrap(), Gf256::ZERO);
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_is_distinct_from_deficient() {
        let a = vec![sv(&[1, 1]), sv(&[1, 1])];
        let b = vec![sv(&[4]), sv(&[5])];
        assert_eq!(gaussian_solve(&a, &b).unwrap(), Solution::Inconsistent { rank: 1 });
    }

    #[test]
    fn shape_errors() {
        assert!(gaussian_solve(&[sv(&[1, 2]), sv(&[1])], &[sv(&[1]), sv(&[1])]).is_err());
        assert!(gaussian_solve(&[sv(&[1, 2])], &[sv(&[1]), sv(&[1])]).is_err());
    }

    #[test]
    fn intersection_of_planes() {
        // span{e1, e2} ∩ span{e2, e3} = span{e2}
        let u = vec![sv(&[1, 0, 0]), sv(&[0, 1, 0])];
        let v = vec![sv(&[0, 1, 0]), sv(&[0, 0, 1])];
        let i = intersect(&u, &v, 3);
        assert_eq!(i, vec![sv(&[0, 1, 0])]);
    }

    #[test]
    fn express_finds_weights() {
        let rows = vec![sv(&[1, 0, 3]), sv(&[0, 1, 7])];
        let target = sv(&[2, 5, 0]);
        let y = express_in_rows(&rows, &target);
        let expected = Gf256(2) * Gf256(3) + Gf256(5) * Gf256(7);
        if expected.is_zero() {
            assert!(y.is_some());
        } else {
            assert!(y.is_none());
        }
        let target = combine_rows(&rows, &sv(&[9, 11]), 3);
        assert_eq!(express_in_rows(&rows, &target).unwrap(), sv(&[9, 11]));
    }

    #[test]
    fn random_full_rank_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for size in [1usize, 2, 5, 16, 32] {
            let mut done = 0;
            while done < 4 {
                let a: Vec<_> = (0..size).map(|_| SymbolVector::random(size, &mut rng)).collect();
                if rank(&a) < size {
                    continue;
                }
                let width = rng.gen_range(1..6);
                let x: Vec<_> = (0..size).map(|_| SymbolVector::random(width, &mut rng)).collect();
                let b = matmul(&a, &x, width);
                assert_eq!(gaussian_solve(&a, &b).unwrap(), Solution::Unique(x));
                done += 1;
            }
        }
    }

    proptest! {
        #[test]
        fn null_space_is_annihilated(seed: u64, rows in 1usize..6, cols in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<_> = (0..rows).map(|_| SymbolVector::random(cols, &mut rng)).collect();
            let ns = null_space(&a, cols);
            prop_assert_eq!(ns.len() + rank(&a), cols);
            for v in &ns {
                for row in &a {
                    prop_assert_eq!(super::super::dot(row, v).unwrap(), Gf256::ZERO);
                }
            }
        }
    }
}
