//! RIS activation patterns.
//!
//! The augmented activation matrix `Ṽ` has `G + 1` rows and one column per
//! pilot slot. Row 0 is all ones and carries the direct path; rows `1..=G`
//! are the phase configurations of the RIS groups. The DFT construction used
//! here makes all rows mutually orthogonal, `Ṽ·Ṽᴴ = L·I`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::geometry::UpaConfig;
use crate::numerics::{cis, ComplexMatrix, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    v_tilde: ComplexMatrix<T>,
}

impl<T: Real> Codebook<T> {
    /// Row `n`, slot `i` is `exp(-j·2π·n·i/L)` for `n = 0..=G`.
    pub fn dft(num_groups: usize, num_slots: usize) -> Result<Self> {
        if num_slots < num_groups + 1 {
            return Err(Error::InvalidArgument(format!(
                "{num_slots} pilot slots cannot separate {} unknowns",
                num_groups + 1
            )));
        }
        let l = T::from_count(num_slots);
        let v_tilde = ComplexMatrix::from_fn(num_groups + 1, num_slots, |n, i| {
            // Reduce n·i mod L first so the phase argument stays small.
            let k = (n * i) % num_slots;
            cis(-T::TAU() * T::from_count(k) / l)
        });
        Ok(Self { v_tilde })
    }

    /// Wraps an arbitrary augmented matrix, checking the invariants every
    /// estimator relies on: first row all ones, unit-modulus entries and
    /// rows orthogonal to the first.
    pub fn from_matrix(v_tilde: ComplexMatrix<T>) -> Result<Self> {
        let tol = T::lit(1e-9);
        if v_tilde.rows() < 1 || v_tilde.cols() < v_tilde.rows() {
            return Err(Error::InvalidArgument(format!(
                "codebook of shape {:?} needs at least as many slots as rows",
                v_tilde.shape()
            )));
        }
        if v_tilde
            .row(0)
            .iter()
            .any(|z| (*z - Complex::new(T::one(), T::zero())).norm() > tol)
        {
            return Err(Error::InvalidArgument("first codebook row must be all ones".into()));
        }
        if v_tilde.as_slice().iter().any(|z| (z.norm() - T::one()).abs() > tol) {
            return Err(Error::InvalidArgument("codebook entries must have unit modulus".into()));
        }
        let cb = Self { v_tilde };
        if cb.orthogonality_residual() > tol * T::from_count(cb.num_slots()) {
            return Err(Error::InvalidArgument(
                "codebook rows must be orthogonal to the all-ones row".into(),
            ));
        }
        Ok(cb)
    }

    /// Number of RIS groups `G`.
    pub fn num_groups(&self) -> usize {
        self.v_tilde.rows() - 1
    }

    /// Number of pilot slots `L`.
    pub fn num_slots(&self) -> usize {
        self.v_tilde.cols()
    }

    /// Augmented `(G+1) × L` matrix.
    pub fn v_tilde(&self) -> &ComplexMatrix<T> {
        &self.v_tilde
    }

    /// RIS phase configurations, rows `1..=G` of `Ṽ`.
    pub fn v(&self) -> ComplexMatrix<T> {
        self.v_tilde.row_range(1, self.v_tilde.rows())
    }

    /// Group phases used in slot `i`, as a `G × 1` vector.
    pub fn slot(&self, i: usize) -> ComplexMatrix<T> {
        ComplexMatrix::column_vector((1..self.v_tilde.rows()).map(|n| self.v_tilde[(n, i)]).collect())
    }

    /// `max_{j≥1} |ṽ_jᵀ·ṽ_0*|`.
    pub fn orthogonality_residual(&self) -> T {
        (1..self.v_tilde.rows())
            .map(|j| {
                self.v_tilde
                    .row(j)
                    .iter()
                    .zip(self.v_tilde.row(0))
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b.conj())
                    .norm()
            })
            .fold(T::zero(), T::max)
    }

    /// Writes one CSV line per row of `Ṽ` (row 0 first), each entry as a
    /// `re,im` pair.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for r in 0..self.v_tilde.rows() {
            let mut line = String::new();
            for (i, z) in self.v_tilde.row(r).iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{},{}", z.re, z.im).expect("write to string");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows: Vec<Vec<Complex<T>>> = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map(T::lit).map_err(|e| Error::Parse {
                        line: idx + 1,
                        message: format!("{f:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<T>>>()?;
            if vals.len() % 2 != 0 {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "odd number of fields in re,im pairs".into(),
                });
            }
            rows.push(vals.chunks(2).map(|p| Complex::new(p[0], p[1])).collect());
        }
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse {
                line: 0,
                message: "ragged codebook rows".into(),
            });
        }
        let nrows = rows.len();
        Self::from_matrix(ComplexMatrix::from_vec(nrows, cols, rows.concat())?)
    }
}

/// Assignment of RIS elements to phase-sharing groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupingMap {
    assignment: Vec<usize>,
    num_groups: usize,
}

impl GroupingMap {
    pub fn new(assignment: Vec<usize>, num_groups: usize) -> Result<Self> {
        let mut seen = vec![false; num_groups];
        for (n, &g) in assignment.iter().enumerate() {
            if g >= num_groups {
                return Err(Error::InvalidArgument(format!(
                    "element {n} mapped to group {g} of {num_groups}"
                )));
            }
            seen[g] = true;
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("group {g} has no elements")));
        }
        Ok(Self { assignment, num_groups })
    }

    /// Every element is its own group.
    pub fn identity(num_elements: usize) -> Self {
        Self {
            assignment: (0..num_elements).collect(),
            num_groups: num_elements,
        }
    }

    /// `gy × gz` contiguous rectangular tiles over the planar array. Tile
    /// edges follow `floor(i·g/n)`, so tiles differ in size by at most one
    /// element per axis when the counts do not divide evenly.
    pub fn tiles<T: Real>(upa: &UpaConfig<T>, gy: usize, gz: usize) -> Result<Self> {
        if gy == 0 || gz == 0 || gy > upa.ny || gz > upa.nz {
            return Err(Error::InvalidArgument(format!(
                "{gy}x{gz} tiles do not fit a {}x{} array",
                upa.ny, upa.nz
            )));
        }
        let mut assignment = Vec::with_capacity(upa.num_elements());
        for iy in 0..upa.ny {
            for iz in 0..upa.nz {
                assignment.push((iy * gy / upa.ny) * gz + iz * gz / upa.nz);
            }
        }
        Self::new(assignment, gy * gz)
    }

    /// Tiling into `num_groups` groups using the most square factorization
    /// `gy·gz = num_groups` that fits the array.
    pub fn for_groups<T: Real>(upa: &UpaConfig<T>, num_groups: usize) -> Result<Self> {
        let best = (1..=num_groups)
            .filter(|gy| num_groups.is_multiple_of(*gy))
            .map(|gy| (gy, num_groups / gy))
            .filter(|&(gy, gz)| gy <= upa.ny && gz <= upa.nz)
            .min_by_key(|&(gy, gz)| (gy.abs_diff(gz), std::cmp::Reverse(gy)));
        match best {
            Some((gy, gz)) => Self::tiles(upa, gy, gz),
            None => Err(Error::InvalidArgument(format!(
                "{num_groups} groups cannot tile a {}x{} array",
                upa.ny, upa.nz
            ))),
        }
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn num_elements(&self) -> usize {
        self.assignment.len()
    }

    pub fn group_of(&self, element: usize) -> usize {
        self.assignment[element]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }
}

/// Element-level phases from group-level phases.
pub fn expand_groups<T: Real>(v_group: &ComplexMatrix<T>, map: &GroupingMap) -> Result<ComplexMatrix<T>> {
    if v_group.len() != map.num_groups {
        return Err(Error::DimensionMismatch(format!(
            "{} group phases for {} groups",
            v_group.len(),
            map.num_groups
        )));
    }
    Ok(ComplexMatrix::column_vector(
        map.assignment.iter().map(|&g| v_group.as_slice()[g]).collect(),
    ))
}

/// Element-level `N × L` activation schedule of a grouped codebook.
pub fn expand_codebook<T: Real>(cb: &Codebook<T>, map: &GroupingMap) -> Result<ComplexMatrix<T>> {
    let mut out = ComplexMatrix::zeros(map.num_elements(), cb.num_slots());
    for i in 0..cb.num_slots() {
        out.set_column(i, &expand_groups(&cb.slot(i), map)?);
    }
    Ok(out)
}
