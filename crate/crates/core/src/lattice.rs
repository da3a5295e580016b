//! Cubic boxes in `Z^d`, site sets and their translations, decay kernels.
//!
//! Sites are ordered lexicographically everywhere. Mode indices, Jordan-Wigner
//! strings and matrix layouts all derive from this order, so it is fixed.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on `d * (2L+1)^d` accepted by [`box_sites`].
pub const DEFAULT_SITE_CAP: usize = 1 << 16;

/// A point of `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn origin(dim: usize) -> Self {
        Site(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn shifted(&self, by: &Site) -> Site {
        debug_assert_eq!(self.dim(), by.dim());
        Site(self.0.iter().zip(&by.0).map(|(a, b)| a + b).collect())
    }

    pub fn neg(&self) -> Site {
        Site(self.0.iter().map(|a| -a).collect())
    }

    pub fn minus(&self, other: &Site) -> Site {
        self.shifted(&other.neg())
    }

    /// Euclidean distance.
    pub fn distance(&self, other: &Site) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| ((a - b) * (a - b)) as f64)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<i64>> for Site {
    fn from(v: Vec<i64>) -> Self {
        Site(v)
    }
}

/// A finite, sorted, duplicate-free set of sites.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SiteSet(Vec<Site>);

impl SiteSet {
    pub fn new(sites: impl IntoIterator<Item = Site>) -> Self {
        let set: BTreeSet<Site> = sites.into_iter().collect();
        SiteSet(set.into_iter().collect())
    }

    pub fn singleton(site: Site) -> Self {
        SiteSet(vec![site])
    }

    pub fn sites(&self) -> &[Site] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, site: &Site) -> bool {
        self.0.binary_search(site).is_ok()
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.0.iter().all(|s| other.contains(s))
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        SiteSet::new(self.0.iter().chain(other.0.iter()).cloned())
    }

    pub fn is_disjoint(&self, other: &SiteSet) -> bool {
        self.0.iter().all(|s| !other.contains(s))
    }

    /// Smallest site in lexicographic order.
    pub fn first(&self) -> Option<&Site> {
        self.0.first()
    }

    /// Componentwise minimum and maximum coordinates.
    pub fn bounds(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        let first = self.0.first()?;
        let mut lo = first.0.clone();
        let mut hi = first.0.clone();
        for s in &self.0[1..] {
            for (i, &c) in s.0.iter().enumerate() {
                lo[i] = lo[i].min(c);
                hi[i] = hi[i].max(c);
            }
        }
        Some((lo, hi))
    }
}

impl fmt::Display for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "}}")
    }
}

/// `Λ + x`.
pub fn translate_set(set: &SiteSet, by: &Site) -> SiteSet {
    // Translation preserves lexicographic order.
    SiteSet(set.0.iter().map(|s| s.shifted(by)).collect())
}

/// The cube `Λ_L = {-L..L}^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubicBox {
    pub dim: usize,
    pub radius: usize,
}

impl CubicBox {
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("lattice dimension must be at least 1".into()));
        }
        Ok(CubicBox { dim, radius })
    }

    pub fn width(&self) -> usize {
        2 * self.radius + 1
    }

    /// `|Λ_L| = (2L+1)^d`.
    pub fn volume(&self) -> usize {
        self.width().pow(self.dim as u32)
    }

    pub fn contains(&self, site: &Site) -> bool {
        let l = self.radius as i64;
        site.dim() == self.dim && site.0.iter().all(|&c| -l <= c && c <= l)
    }

    pub fn contains_set(&self, set: &SiteSet) -> bool {
        set.sites().iter().all(|s| self.contains(s))
    }

    /// Position of `site` in the lexicographic site list.
    pub fn rank(&self, site: &Site) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let w = self.width() as i64;
        let l = self.radius as i64;
        Some(site.0.iter().fold(0i64, |acc, &c| acc * w + (c + l)) as usize)
    }

    pub fn site_at(&self, mut rank: usize) -> Site {
        let w = self.width();
        let mut coords = vec![0i64; self.dim];
        for c in coords.iter_mut().rev() {
            *c = (rank % w) as i64 - self.radius as i64;
            rank /= w;
        }
        Site(coords)
    }

    pub fn sites(&self) -> Vec<Site> {
        (0..self.volume()).map(|r| self.site_at(r)).collect()
    }

    pub fn site_set(&self) -> SiteSet {
        SiteSet(self.sites())
    }
}

impl fmt::Display for CubicBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Λ_{} in Z^{}", self.radius, self.dim)
    }
}

/// All sites of `Λ_L` in lexicographic order.
pub fn box_sites(dim: usize, radius: usize, site_cap: usize) -> Result<Vec<Site>> {
    let cube = CubicBox::new(dim, radius)?;
    let cost = (cube.width() as u128).checked_pow(dim as u32).map(|v| v * dim as u128);
    match cost {
        Some(c) if c <= site_cap as u128 => Ok(cube.sites()),
        _ => Err(Error::ResourceLimit(format!(
            "box with d={dim}, L={radius} exceeds the site cap {site_cap}"
        ))),
    }
}

/// Symmetric decay kernel `F` with `F(x,x) = 1` and values in `(0,1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DecayFunction {
    /// `exp(-κ |x-y|)`.
    Exponential { kappa: f64 },
    /// `(1 + |x-y|)^(-p)`.
    Polynomial { power: f64 },
}

impl Default for DecayFunction {
    fn default() -> Self {
        DecayFunction::Polynomial { power: 4.0 }
    }
}

impl DecayFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecayFunction::Exponential { kappa } if kappa.is_finite() && kappa >= 0.0 => Ok(()),
            DecayFunction::Polynomial { power } if power.is_finite() && power >= 0.0 => Ok(()),
            other => Err(Error::Invalid(format!("bad decay parameters {other:?}"))),
        }
    }

    pub fn eval(&self, x: &Site, y: &Site) -> f64 {
        let r = x.distance(y);
        match *self {
            DecayFunction::Exponential { kappa } => (-kappa * r).exp(),
            DecayFunction::Polynomial { power } => (1.0 + r).powf(-power),
        }
    }
}

/// Box-restricted summability constants of a decay kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    /// `max_y Σ_x F(x,y)` over the box.
    pub norm_f1: f64,
    /// `max_{x,y} Σ_z F(x,z) F(z,y) / F(x,y)` over the box.
    pub const_d: f64,
}

pub fn decay_constants(decay: &DecayFunction, cube: &CubicBox) -> DecayConstants {
    let sites = cube.sites();
    let n = sites.len();
    let mut f = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            f[i * n + j] = decay.eval(&sites[i], &sites[j]);
        }
    }
    let norm_f1 = (0..n)
        .map(|y| (0..n).map(|x| f[x * n + y]).sum::<f64>())
        .fold(0.0, f64::max);
    let mut const_d: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            let s: f64 = (0..n).map(|z| f[x * n + z] * f[z * n + y]).sum();
            const_d = const_d.max(s / f[x * n + y]);
        }
    }
    DecayConstants { norm_f1, const_d }
}

/// Period vector `ℓ` of a periodic state; generates `Z^d_ℓ = ℓ_1 Z × ... × ℓ_d Z`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodVector(Vec<usize>);

impl PeriodVector {
    pub fn new(periods: Vec<usize>) -> Result<Self> {
        if periods.is_empty() || periods.contains(&0) {
            return Err(Error::Invalid(format!(
                "period vector entries must be >= 1, got {periods:?}"
            )));
        }
        Ok(PeriodVector(periods))
    }

    pub fn ones(dim: usize) -> Self {
        PeriodVector(vec![1; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// `ℓ_1 ⋯ ℓ_d`.
    pub fn volume(&self) -> usize {
        self.0.iter().product()
    }

    /// The unit cell `{x : 0 <= x_i < ℓ_i}` in lexicographic order.
    pub fn cell_sites(&self) -> Vec<Site> {
        let mut out = vec![Site(vec![])];
        for &p in &self.0 {
            out = out
                .into_iter()
                .flat_map(|s| {
                    (0..p as i64).map(move |c| {
                        let mut v = s.0.clone();
                        v.push(c);
                        Site(v)
                    })
                })
                .collect();
        }
        out
    }

    /// `Z^d_self ⊆ Z^d_other`, i.e. each `other_i` divides `self_i`.
    pub fn is_sublattice_of(&self, other: &PeriodVector) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a % b == 0)
    }

    pub fn contains(&self, x: &Site) -> bool {
        x.0.iter().zip(&self.0).all(|(&c, &p)| c.rem_euclid(p as i64) == 0)
    }

    /// `Λ_L ∩ Z^d_ℓ` in lexicographic order.
    pub fn points_in(&self, cube: &CubicBox) -> Vec<Site> {
        cube.sites().into_iter().filter(|s| self.contains(s)).collect()
    }
}
