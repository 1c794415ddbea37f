//! Finite measures on `[0, H)`: sums of unit atoms (the age and
//! potential-queue measures of a finite system) and absolutely continuous
//! measures (their fluid counterparts).

use std::fmt::Write as _;

use thiserror::Error;

use crate::dist::Distribution;
use crate::numeric::bisect_first;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("no atom at {0}")]
    AbsentAtom(f64),
    #[error("level {level} exceeds total mass {mass}")]
    LevelAboveMass { level: f64, mass: f64 },
    #[error("invalid atom position {0}")]
    InvalidAtom(f64),
    #[error("invalid density grid: {0}")]
    InvalidGrid(String),
}

/// A finite sum of unit Dirac masses, kept sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointMeasure {
    atoms: Vec<f64>,
}

impl PointMeasure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_atoms<I: IntoIterator<Item = f64>>(atoms: I) -> Result<Self, MeasureError> {
        let mut atoms: Vec<f64> = atoms.into_iter().collect();
        if let Some(&bad) = atoms.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(MeasureError::InvalidAtom(bad));
        }
        atoms.sort_by(f64::total_cmp);
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// `⟨1, m⟩`.
    pub fn mass(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Translates every atom by `dt`.
    pub fn shift(&self, dt: f64) -> Self {
        Self {
            atoms: self.atoms.iter().map(|x| x + dt).collect(),
        }
    }

    pub fn add_atom(&mut self, x: f64) -> Result<(), MeasureError> {
        if !(x.is_finite() && x >= 0.0) {
            return Err(MeasureError::InvalidAtom(x));
        }
        let i = self.atoms.partition_point(|&a| a <= x);
        self.atoms.insert(i, x);
        Ok(())
    }

    pub fn remove_atom(&mut self, x: f64) -> Result<(), MeasureError> {
        let i = self.atoms.partition_point(|&a| a < x);
        if self.atoms.get(i) == Some(&x) {
            self.atoms.remove(i);
            Ok(())
        } else {
            Err(MeasureError::AbsentAtom(x))
        }
    }

    /// Number of atoms in `[c, ∞)`.
    pub fn tail_mass(&self, c: f64) -> usize {
        self.atoms.len() - self.atoms.partition_point(|&a| a < c)
    }

    /// `m[0, x]`.
    pub fn cumulative(&self, x: f64) -> usize {
        self.atoms.partition_point(|&a| a <= x)
    }

    /// `inf{x ≥ 0 : m[0, x] ≥ q}`; zero for `q = 0`.
    pub fn quantile(&self, q: f64) -> Result<f64, MeasureError> {
        if q <= 0.0 {
            return Ok(0.0);
        }
        let mass = self.atoms.len() as f64;
        if q > mass {
            return Err(MeasureError::LevelAboveMass { level: q, mass });
        }
        Ok(self.atoms[q.ceil() as usize - 1])
    }

    /// `⟨f, m⟩`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|&x| f(x)).sum()
    }

    /// Counts per bin for the given increasing edges; atoms outside are dropped.
    pub fn histogram(&self, edges: &[f64]) -> Vec<usize> {
        edges
            .windows(2)
            .map(|w| {
                self.atoms.partition_point(|&a| a < w[1]) - self.atoms.partition_point(|&a| a < w[0])
            })
            .collect()
    }

    /// One CSV row: `label,atom1,atom2,...`.
    pub fn to_csv_row(&self, label: &str) -> String {
        let mut s = String::from(label);
        for a in &self.atoms {
            let _ = write!(s, ",{a}");
        }
        s
    }
}

/// Histogram summary CSV (`lo,hi,count`) for a point measure.
pub fn histogram_csv(m: &PointMeasure, edges: &[f64]) -> String {
    let mut s = String::from("lo,hi,count\n");
    for (w, c) in edges.windows(2).zip(m.histogram(edges)) {
        let _ = writeln!(s, "{},{},{}", w[0], w[1], c);
    }
    s
}

/// An absolutely continuous finite measure on `[0, H)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityMeasure {
    /// Density `scale · (1 − G(x))` for a lifetime law `G`.
    Survival { law: Distribution, scale: f64 },
    /// Tabulated density on `[0, dx·(n−1)]`, zero beyond.
    Grid(GridDensity),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    dx: f64,
    density: Vec<f64>,
    /// Trapezoidal cumulative at the nodes.
    cumulative: Vec<f64>,
}

impl GridDensity {
    pub fn new(dx: f64, density: Vec<f64>) -> Result<Self, MeasureError> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(MeasureError::InvalidGrid(format!("step must be positive, got {dx}")));
        }
        if density.len() < 2 {
            return Err(MeasureError::InvalidGrid("need at least two nodes".into()));
        }
        if let Some(v) = density.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(MeasureError::InvalidGrid(format!("negative or non-finite value {v}")));
        }
        let mut cumulative = Vec::with_capacity(density.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in density.windows(2) {
            acc += 0.5 * dx * (w[0] + w[1]);
            cumulative.push(acc);
        }
        Ok(Self { dx, density, cumulative })
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn values(&self) -> &[f64] {
        &self.density
    }

    fn x_max(&self) -> f64 {
        self.dx * (self.density.len() - 1) as f64
    }
}

impl DensityMeasure {
    pub fn survival(law: Distribution, scale: f64) -> Self {
        Self::Survival { law, scale }
    }

    pub fn grid(dx: f64, density: Vec<f64>) -> Result<Self, MeasureError> {
        GridDensity::new(dx, density).map(Self::Grid)
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Self::Survival { law, scale } => scale * law.mean(),
            Self::Grid(g) => *g.cumulative.last().unwrap(),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            Self::Survival { law, scale } => scale * law.survival(x),
            Self::Grid(g) => {
                if x > g.x_max() {
                    return 0.0;
                }
                let pos = x / g.dx;
                let i = (pos.floor() as usize).min(g.density.len() - 2);
                let frac = pos - i as f64;
                g.density[i] * (1.0 - frac) + g.density[i + 1] * frac
            }
        }
    }

    /// `F^μ(x) = μ[0, x]`.
    pub fn cumulative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Survival { law, scale } => scale * law.integrated_survival(x),
            Self::Grid(g) => {
                if x >= g.x_max() {
                    return *g.cumulative.last().unwrap();
                }
                let pos = x / g.dx;
                let i = (pos.floor() as usize).min(g.cumulative.len() - 2);
                let frac = pos - i as f64;
                g.cumulative[i] * (1.0 - frac) + g.cumulative[i + 1] * frac
            }
        }
    }

    /// Generalised inverse `inf{x ≥ 0 : F^μ(x) ≥ q}`.
    pub fn quantile(&self, q: f64) -> Result<f64, MeasureError> {
        if q <= 0.0 {
            return Ok(0.0);
        }
        let mass = self.total_mass();
        if q > mass * (1.0 + 1e-12) + 1e-15 {
            return Err(MeasureError::LevelAboveMass { level: q, mass });
        }
        let q = q.min(mass);
        match self {
            Self::Survival { law, scale } => Ok(law.integrated_survival_inverse(q / scale)),
            Self::Grid(g) => {
                let i = g.cumulative.partition_point(|&c| c < q);
                if i == 0 {
                    return Ok(0.0);
                }
                let (c0, c1) = (g.cumulative[i - 1], g.cumulative[i]);
                let frac = if c1 > c0 { (q - c0) / (c1 - c0) } else { 1.0 };
                Ok(g.dx * ((i - 1) as f64 + frac))
            }
        }
    }

    /// Quantile by plain bisection on [`Self::cumulative`]; used as a
    /// cross-check of the closed-form and table inversions.
    pub fn quantile_bisect(&self, q: f64, hi: f64) -> f64 {
        bisect_first(|x| self.cumulative(x) >= q, 0.0, hi, 1e-13)
    }
}
