//! Lattice discretization of the simplex in cumulative coordinates.
//!
//! The coordinate map `Pi` sends `xi` to its partial sums
//! `s^k = xi_1 + ... + xi_k`, flattening the simplex to the ordered box
//! `0 <= s^1 <= ... <= s^{d-1} <= 1`. Lattice sites are the points of
//! that box whose coordinates are multiples of `h = 1/N`; shifting a
//! site by `h` along an edge direction `e_{i,j}` lands on another site
//! or leaves the simplex, never in between. Sites are stored as integer
//! tuples so membership tests are exact.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::graph::SimplexPoint;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("lattice requires d >= 2 and N >= 2, got d = {d}, N = {n}")]
    BadDimensions { d: usize, n: u32 },
    #[error("lattice would have {sites} sites, exceeding the budget of {budget}")]
    SiteBudget { sites: u128, budget: usize },
    #[error("fields live on different lattices (d = {d0}, N = {n0}) vs (d = {d1}, N = {n1})")]
    LatticeMismatch { d0: usize, n0: u32, d1: usize, n1: u32 },
}

/// Nested interior classification of a (site, edge-direction) pair.
///
/// `Interior3h ⊂ Interior2h ⊂ InteriorH`; everything else is the
/// boundary layer where a one-step shift already exits the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Interior3h,
    Interior2h,
    InteriorH,
    BoundaryLayer,
}

impl Region {
    pub fn is_interior_h(self) -> bool {
        !matches!(self, Region::BoundaryLayer)
    }

    pub fn is_interior_2h(self) -> bool {
        matches!(self, Region::Interior2h | Region::Interior3h)
    }

    pub fn is_interior_3h(self) -> bool {
        matches!(self, Region::Interior3h)
    }
}

/// Cumulative coordinates of a simplex point: `s^k = sum_{i<=k} xi_i`.
pub fn pi_forward(xi: &SimplexPoint) -> Vec<f64> {
    let coords = xi.coords();
    let mut s = Vec::with_capacity(coords.len() - 1);
    let mut acc = 0.0;
    for &x in &coords[..coords.len() - 1] {
        acc += x;
        s.push(acc);
    }
    s
}

/// Recovers `xi_k = s^k - s^{k-1}` from cumulative coordinates.
pub fn pi_inverse(s: &[f64]) -> Vec<f64> {
    let d = s.len() + 1;
    let mut xi = Vec::with_capacity(d);
    let mut prev = 0.0;
    for &sk in s {
        xi.push(sk - prev);
        prev = sk;
    }
    xi.push(1.0 - prev);
    xi
}

/// Index of the unordered pair `(i, j)`, `i < j`, among all pairs of `d`
/// vertices in lexicographic order.
pub fn pair_rank(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < d);
    i * d - i * (i + 1) / 2 + (j - i - 1)
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for t in 0..k {
        acc = acc * (n - t) as u128 / (t + 1) as u128;
    }
    acc
}

/// The simplex lattice at spacing `h = 1/N` in cumulative coordinates.
///
/// Shift tables are precomputed for every vertex pair `i < j` (the
/// complete set of edge directions); graphs select the subset they use.
#[derive(Debug)]
pub struct Lattice {
    d: usize,
    n: u32,
    h: f64,
    /// Integer cumulative tuples, `d-1` entries per site, lexicographic.
    tuples: Vec<u32>,
    index: HashMap<Vec<u32>, usize>,
    /// Probability coordinates per site, `d` entries each.
    xi: Vec<f64>,
    boundary: Vec<bool>,
    /// `sites x pairs` neighbor tables; `None` when the shift exits.
    up: Vec<Option<u32>>,
    dn: Vec<Option<u32>>,
    region: Vec<Region>,
    n_pairs: usize,
}

impl Lattice {
    /// Enumerates all nondecreasing tuples over `{0, ..., N}` in
    /// lexicographic order and builds the shift/region tables.
    pub fn build(d: usize, n: u32, site_budget: usize) -> Result<Arc<Self>, MeshError> {
        if d < 2 || n < 2 {
            return Err(MeshError::BadDimensions { d, n });
        }
        let count = binomial(n as u64 + d as u64 - 1, d as u64 - 1);
        if count > site_budget as u128 {
            return Err(MeshError::SiteBudget {
                sites: count,
                budget: site_budget,
            });
        }
        let sites = count as usize;
        let m = d - 1;
        let mut tuples = Vec::with_capacity(sites * m);
        let mut cur = vec![0u32; m];
        loop {
            tuples.extend_from_slice(&cur);
            if !next_nondecreasing(&mut cur, n) {
                break;
            }
        }
        assert_eq!(tuples.len(), sites * m);

        let mut index = HashMap::with_capacity(sites);
        for s in 0..sites {
            index.insert(tuples[s * m..(s + 1) * m].to_vec(), s);
        }

        let h = 1.0 / n as f64;
        let mut xi = Vec::with_capacity(sites * d);
        let mut boundary = Vec::with_capacity(sites);
        for s in 0..sites {
            let t = &tuples[s * m..(s + 1) * m];
            let mut prev = 0u32;
            let mut is_boundary = false;
            for k in 0..d {
                let cur = if k < m { t[k] } else { n };
                if cur == prev {
                    is_boundary = true;
                }
                xi.push((cur - prev) as f64 * h);
                prev = cur;
            }
            boundary.push(is_boundary);
        }

        let n_pairs = d * (d - 1) / 2;
        let mut up = vec![None; sites * n_pairs];
        let mut dn = vec![None; sites * n_pairs];
        let mut shifted = vec![0u32; m];
        for s in 0..sites {
            let t = &tuples[s * m..(s + 1) * m];
            for i in 0..d {
                for j in (i + 1)..d {
                    let p = pair_rank(d, i, j);
                    // +h e_{i,j} adds 1 to cumulative entries i..j-1
                    // (1-based), i.e. indices i..j-1 exclusive in 0-based
                    if shift_tuple(t, i, j, 1, n, &mut shifted) {
                        up[s * n_pairs + p] = index.get(shifted.as_slice()).map(|&x| x as u32);
                        debug_assert!(up[s * n_pairs + p].is_some());
                    }
                    if shift_tuple(t, i, j, -1, n, &mut shifted) {
                        dn[s * n_pairs + p] = index.get(shifted.as_slice()).map(|&x| x as u32);
                        debug_assert!(dn[s * n_pairs + p].is_some());
                    }
                }
            }
        }

        // nested classification: InteriorH -> Interior2h -> Interior3h
        let both = |s: usize, p: usize, ok: &dyn Fn(usize, usize) -> bool| {
            match (up[s * n_pairs + p], dn[s * n_pairs + p]) {
                (Some(a), Some(b)) => ok(a as usize, p) && ok(b as usize, p),
                _ => false,
            }
        };
        let mut int_h = vec![false; sites * n_pairs];
        for s in 0..sites {
            for p in 0..n_pairs {
                int_h[s * n_pairs + p] =
                    up[s * n_pairs + p].is_some() && dn[s * n_pairs + p].is_some();
            }
        }
        let mut int_2h = vec![false; sites * n_pairs];
        for s in 0..sites {
            for p in 0..n_pairs {
                int_2h[s * n_pairs + p] =
                    int_h[s * n_pairs + p] && both(s, p, &|q, pp| int_h[q * n_pairs + pp]);
            }
        }
        let mut region = vec![Region::BoundaryLayer; sites * n_pairs];
        for s in 0..sites {
            for p in 0..n_pairs {
                let k = s * n_pairs + p;
                region[k] = if int_2h[k] && both(s, p, &|q, pp| int_2h[q * n_pairs + pp]) {
                    Region::Interior3h
                } else if int_2h[k] {
                    Region::Interior2h
                } else if int_h[k] {
                    Region::InteriorH
                } else {
                    Region::BoundaryLayer
                };
            }
        }

        Ok(Arc::new(Self {
            d,
            n,
            h,
            tuples,
            index,
            xi,
            boundary,
            up,
            dn,
            region,
            n_pairs,
        }))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_sites(&self) -> usize {
        self.boundary.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.n_pairs
    }

    /// Quadrature weight of one site: `h^{d-1}`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32 - 1)
    }

    /// Integer cumulative tuple of a site (`d-1` entries in `0..=N`).
    pub fn tuple(&self, site: usize) -> &[u32] {
        &self.tuples[site * (self.d - 1)..(site + 1) * (self.d - 1)]
    }

    /// Probability coordinates of a site.
    pub fn xi(&self, site: usize) -> &[f64] {
        &self.xi[site * self.d..(site + 1) * self.d]
    }

    /// True if some vertex mass vanishes at the site (integer-exact).
    pub fn is_boundary(&self, site: usize) -> bool {
        self.boundary[site]
    }

    pub fn site_at(&self, tuple: &[u32]) -> Option<usize> {
        self.index.get(tuple).copied()
    }

    /// The site at `s + sign * h * m_{i,j}`, or `None` when the shift
    /// leaves the simplex.
    pub fn shift(&self, site: usize, pair: (usize, usize), sign: i32) -> Option<usize> {
        let p = pair_rank(self.d, pair.0, pair.1);
        let slot = if sign > 0 {
            self.up[site * self.n_pairs + p]
        } else {
            self.dn[site * self.n_pairs + p]
        };
        slot.map(|x| x as usize)
    }

    pub(crate) fn shift_by_rank(&self, site: usize, p: usize, sign: i32) -> Option<usize> {
        let slot = if sign > 0 {
            self.up[site * self.n_pairs + p]
        } else {
            self.dn[site * self.n_pairs + p]
        };
        slot.map(|x| x as usize)
    }

    pub fn classify(&self, site: usize, pair: (usize, usize)) -> Region {
        self.region[site * self.n_pairs + pair_rank(self.d, pair.0, pair.1)]
    }
}

/// Advances to the lexicographic successor among nondecreasing tuples
/// over `{0, ..., n}`; returns false after the last tuple `(n, ..., n)`.
fn next_nondecreasing(cur: &mut [u32], n: u32) -> bool {
    for pos in (0..cur.len()).rev() {
        if cur[pos] < n {
            let v = cur[pos] + 1;
            for item in cur.iter_mut().skip(pos) {
                *item = v;
            }
            return true;
        }
    }
    false
}

/// Applies `sign * m_{i,j}` to the integer tuple; returns false when the
/// result leaves the ordered box (including the virtual endpoints
/// `s^0 = 0`, `s^d = N`).
fn shift_tuple(t: &[u32], i: usize, j: usize, sign: i32, n: u32, out: &mut [u32]) -> bool {
    let m = t.len();
    for (k, item) in out.iter_mut().enumerate() {
        let v = t[k] as i64
            + if k >= i && k < j {
                sign as i64
            } else {
                0
            };
        if v < 0 || v > n as i64 {
            return false;
        }
        *item = v as u32;
    }
    let mut prev = 0u32;
    for k in 0..=m {
        let cur = if k < m { out[k] } else { n };
        if cur < prev {
            return false;
        }
        prev = cur;
    }
    true
}

/// Scalar values attached to lattice sites.
#[derive(Debug, Clone)]
pub struct Field {
    lattice: Arc<Lattice>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(lattice: Arc<Lattice>) -> Self {
        let n = lattice.num_sites();
        Self {
            lattice,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(lattice: Arc<Lattice>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), lattice.num_sites());
        Self { lattice, values }
    }

    /// Tabulates `f(xi)` at every site.
    pub fn tabulate(lattice: &Arc<Lattice>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..lattice.num_sites()).map(|s| f(lattice.xi(s))).collect();
        Self {
            lattice: lattice.clone(),
            values,
        }
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_lattice(&self, other: &Field) -> bool {
        self.lattice.dim() == other.lattice.dim() && self.lattice.n() == other.lattice.n()
    }
}

/// Deterministic pairwise (tree) summation; independent of thread count
/// by construction, and more accurate than sequential accumulation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Weighted lattice L1 norm: `sum_sites |v| w h^{d-1}` with deterministic
/// pairwise summation in site order.
pub fn weighted_l1(v: &Field, w: &Field) -> Result<f64, MeshError> {
    if !v.same_lattice(w) {
        return Err(MeshError::LatticeMismatch {
            d0: v.lattice.dim(),
            n0: v.lattice.n(),
            d1: w.lattice.dim(),
            n1: w.lattice.n(),
        });
    }
    let terms: Vec<f64> = v
        .values
        .iter()
        .zip(&w.values)
        .map(|(a, b)| a.abs() * b)
        .collect();
    Ok(pairwise_sum(&terms) * v.lattice.cell_volume())
}
