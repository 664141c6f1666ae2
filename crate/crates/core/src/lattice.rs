//! Harmonic toy lattices: dynamical matrix, normal modes, and the projection
//! of a ground→excited displacement field onto those modes to obtain
//! partial Huang–Rhys factors.
//!
//! Units are amu for masses, Å for positions and eV/Å² for spring constants,
//! so `√eigenvalue ×` [`HBAR_OMEGA_UNIT_MEV`] is a phonon energy in meV.
//! Toy parameters are illustrative; they do not describe diamond.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::effective_mode::ModeSet;
use crate::error::{Error, Result};
use crate::franck_condon::{huang_rhys_from_displacement, PhononMode};
use crate::units::{EnergyMeV, HBAR_OMEGA_UNIT_MEV};

pub const LATTICE_SCHEMA: &str = "lattice/v1";
pub const MODES_SCHEMA: &str = "modes/v1";
pub const MODES_HEADER: [&str; 4] = ["mode_index", "energy_meV", "deltaQ", "S_k"];
pub const ZERO_MODE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    pub mass: f64,
    pub position: Vec<f64>,
}

/// Central spring between `a` and the periodic image `b + image·cell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Vec<i32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeRepr {
    schema: String,
    dimension: usize,
    boundary: Boundary,
    #[serde(default)]
    cell: Vec<f64>,
    sites: Vec<Site>,
    springs: Vec<Spring>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    displacement: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeRepr", into = "LatticeRepr")]
pub struct ToyLattice {
    dimension: usize,
    boundary: Boundary,
    cell: Vec<f64>,
    sites: Vec<Site>,
    springs: Vec<Spring>,
    displacement: Option<DisplacementField>,
}

impl TryFrom<LatticeRepr> for ToyLattice {
    type Error = Error;
    fn try_from(r: LatticeRepr) -> Result<Self> {
        if r.schema != LATTICE_SCHEMA {
            return Err(Error::Validation(format!("unsupported schema '{}', expected {LATTICE_SCHEMA}", r.schema)));
        }
        let mut lat = ToyLattice::new(r.dimension, r.boundary, r.cell, r.sites, r.springs)?;
        if let Some(d) = r.displacement {
            lat = lat.with_displacement(DisplacementField::new(d)?)?;
        }
        Ok(lat)
    }
}

impl From<ToyLattice> for LatticeRepr {
    fn from(l: ToyLattice) -> Self {
        LatticeRepr {
            schema: LATTICE_SCHEMA.into(),
            dimension: l.dimension,
            boundary: l.boundary,
            cell: l.cell,
            sites: l.sites,
            springs: l.springs,
            displacement: l.displacement.map(|d| d.delta_r),
        }
    }
}

impl ToyLattice {
    pub fn new(dimension: usize, boundary: Boundary, cell: Vec<f64>, sites: Vec<Site>, springs: Vec<Spring>) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return Err(Error::Validation(format!("dimension must be 1, 2 or 3, got {dimension}")));
        }
        if sites.is_empty() {
            return Err(Error::Validation("lattice has no sites".into()));
        }
        match boundary {
            Boundary::Periodic if cell.len() != dimension || cell.iter().any(|&c| !(c.is_finite() && c > 0.0)) => {
                return Err(Error::Validation(format!(
                    "periodic lattice needs {dimension} positive cell lengths, got {cell:?}"
                )))
            }
            _ => {}
        }
        for (i, s) in sites.iter().enumerate() {
            if !(s.mass.is_finite() && s.mass > 0.0) {
                return Err(Error::Validation(format!("site {i}: mass must be > 0, got {}", s.mass)));
            }
            if s.position.len() != dimension || s.position.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("site {i}: position must have {dimension} finite components")));
            }
        }
        for (i, sp) in springs.iter().enumerate() {
            if sp.a >= sites.len() || sp.b >= sites.len() {
                return Err(Error::Validation(format!("spring {i}: site index out of range")));
            }
            // negative constants are legal here; they show up as an instability
            if !sp.k.is_finite() {
                return Err(Error::Validation(format!("spring {i}: constant must be finite, got {}", sp.k)));
            }
            if let Some(img) = &sp.image {
                if img.len() != dimension {
                    return Err(Error::Validation(format!("spring {i}: image must have {dimension} components")));
                }
                if boundary == Boundary::Free && img.iter().any(|&n| n != 0) {
                    return Err(Error::Validation(format!("spring {i}: periodic image on a free lattice")));
                }
            }
        }
        let lat = ToyLattice {
            dimension,
            boundary,
            cell,
            sites,
            springs,
            displacement: None,
        };
        for i in 0..lat.springs.len() {
            lat.spring_direction(i)?;
        }
        Ok(lat)
    }

    /// `n` equal masses spaced `a` apart, nearest-neighbour springs, periodic.
    pub fn periodic_chain(n: usize, mass: f64, k: f64, a: f64) -> Result<Self> {
        Self::chain(n, &[mass], k, a)
    }

    /// Alternating masses `m1, m2`, one spring constant, periodic; the
    /// repeat cell holds two sites and has length `2a`.
    pub fn diatomic_chain(n_cells: usize, m1: f64, m2: f64, k: f64, a: f64) -> Result<Self> {
        Self::chain(2 * n_cells, &[m1, m2], k, a)
    }

    fn chain(n: usize, masses: &[f64], k: f64, a: f64) -> Result<Self> {
        let sites = (0..n)
            .map(|i| Site {
                mass: masses[i % masses.len()],
                position: vec![i as f64 * a],
            })
            .collect();
        let springs = (0..n)
            .map(|i| Spring {
                a: i,
                b: (i + 1) % n,
                k,
                image: Some(vec![if i + 1 == n { 1 } else { 0 }]),
            })
            .collect();
        ToyLattice::new(1, Boundary::Periodic, vec![n as f64 * a], sites, springs)
    }

    pub fn with_displacement(mut self, d: DisplacementField) -> Result<Self> {
        self.check_field(&d)?;
        self.displacement = Some(d);
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn displacement(&self) -> Option<&DisplacementField> {
        self.displacement.as_ref()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn spring_direction(&self, i: usize) -> Result<Vec<f64>> {
        let sp = &self.springs[i];
        let (ra, rb) = (&self.sites[sp.a].position, &self.sites[sp.b].position);
        let mut d: Vec<f64> = (0..self.dimension).map(|j| rb[j] - ra[j]).collect();
        if let Some(img) = &sp.image {
            for j in 0..self.dimension {
                d[j] += img[j] as f64 * self.cell.get(j).copied().unwrap_or(0.0);
            }
        }
        let len = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(len > 0.0) {
            return Err(Error::Validation(format!("spring {i}: zero rest length, direction undefined")));
        }
        Ok(d.into_iter().map(|x| x / len).collect())
    }

    fn check_field(&self, d: &DisplacementField) -> Result<()> {
        if d.delta_r.len() != self.sites.len() {
            return Err(Error::Validation(format!(
                "displacement has {} sites, lattice has {}",
                d.delta_r.len(),
                self.sites.len()
            )));
        }
        if d.delta_r.iter().any(|v| v.len() != self.dimension) {
            return Err(Error::Validation(format!("displacement vectors must have {} components", self.dimension)));
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.sites.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for sp in self.springs.iter().filter(|s| s.k != 0.0) {
            let (ra, rb) = (find(&mut parent, sp.a), find(&mut parent, sp.b));
            parent[ra] = rb;
        }
        let root = find(&mut parent, 0);
        if let Some(lonely) = (0..n).find(|&i| find(&mut parent, i) != root) {
            return Err(Error::Structural(format!("lattice is disconnected: site {lonely} is not reachable from site 0")));
        }
        Ok(())
    }
}

/// Mass-weighted force-constant matrix `Φ_{mα,nβ}/√(M_m M_n)` with
/// `Φ = -∂F/∂R`, so a stable lattice is positive semidefinite.
pub fn build_dynamical_matrix(lat: &ToyLattice) -> Result<DMatrix<f64>> {
    lat.check_connected()?;
    let d = lat.dimension;
    let n = lat.sites.len() * d;
    let mut phi = DMatrix::<f64>::zeros(n, n);
    for (i, sp) in lat.springs.iter().enumerate() {
        let e = lat.spring_direction(i)?;
        for x in 0..d {
            for y in 0..d {
                let v = sp.k * e[x] * e[y];
                phi[(sp.a * d + x, sp.a * d + y)] += v;
                phi[(sp.b * d + x, sp.b * d + y)] += v;
                phi[(sp.a * d + x, sp.b * d + y)] -= v;
                phi[(sp.b * d + x, sp.a * d + y)] -= v;
            }
        }
    }
    let inv_sqrt_m: Vec<f64> = (0..n).map(|i| 1.0 / lat.sites[i / d].mass.sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |r, c| phi[(r, c)] * inv_sqrt_m[r] * inv_sqrt_m[c]))
}

#[derive(Debug, Clone)]
pub struct NormalModes {
    /// `ω²` in eV/(Å²·amu), ascending; zero modes are set to exactly 0.
    pub eigenvalues: Vec<f64>,
    pub energies: Vec<EnergyMeV>,
    /// Column `k` is the mass-weighted eigenvector `η^k`.
    pub eigenvectors: DMatrix<f64>,
    pub zero_mode: Vec<bool>,
}

impl NormalModes {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn n_zero_modes(&self) -> usize {
        self.zero_mode.iter().filter(|&&z| z).count()
    }

    /// Angular frequency in √(eV/(Å²·amu)).
    pub fn omega(&self, k: usize) -> f64 {
        self.eigenvalues[k].sqrt()
    }
}

pub fn solve_modes(d: &DMatrix<f64>) -> Result<NormalModes> {
    if !d.is_square() {
        return Err(Error::Validation("dynamical matrix must be square".into()));
    }
    let n = d.nrows();
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for r in 0..n {
        for c in r + 1..n {
            if (d[(r, c)] - d[(c, r)]).abs() > 1e-12 * scale {
                return Err(Error::Validation(format!("dynamical matrix is not symmetric at ({r}, {c})")));
            }
        }
    }
    let eig = SymmetricEigen::new(d.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let tolerance = ZERO_MODE_TOLERANCE * scale;
    let mut eigenvalues = Vec::with_capacity(n);
    let mut zero_mode = Vec::with_capacity(n);
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        let lam = eig.eigenvalues[j];
        if lam < -tolerance {
            return Err(Error::Instability {
                index: k,
                eigenvalue: lam,
                tolerance,
            });
        }
        let zero = lam.abs() <= tolerance;
        eigenvalues.push(if zero { 0.0 } else { lam });
        zero_mode.push(zero);
        vectors.set_column(k, &eig.eigenvectors.column(j));
    }
    Ok(NormalModes {
        energies: eigenvalues.iter().map(|&l| EnergyMeV(HBAR_OMEGA_UNIT_MEV * l.sqrt())).collect(),
        eigenvalues,
        eigenvectors: vectors,
        zero_mode,
    })
}

/// Excited-minus-ground equilibrium positions per site, Å.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DisplacementField {
    pub delta_r: Vec<Vec<f64>>,
}

impl DisplacementField {
    pub fn new(delta_r: Vec<Vec<f64>>) -> Result<Self> {
        if delta_r.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Validation("displacement components must be finite".into()));
        }
        Ok(DisplacementField { delta_r })
    }

    pub fn zeros(n_sites: usize, dimension: usize) -> Self {
        DisplacementField {
            delta_r: vec![vec![0.0; dimension]; n_sites],
        }
    }
}

/// `ΔQ_k = Σ_m √M_m ΔR_m · η^k_m`, in √amu·Å.
pub fn project_displacement(modes: &NormalModes, lat: &ToyLattice, d: &DisplacementField) -> Result<Vec<f64>> {
    lat.check_field(d)?;
    let dim = lat.dimension;
    let n = lat.sites.len() * dim;
    if modes.eigenvectors.nrows() != n {
        return Err(Error::Validation(format!(
            "modes have {} coordinates, lattice has {n}",
            modes.eigenvectors.nrows()
        )));
    }
    let weighted = DVector::from_fn(n, |i, _| lat.sites[i / dim].mass.sqrt() * d.delta_r[i / dim][i % dim]);
    Ok((modes.eigenvectors.transpose() * weighted).iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoupling {
    pub mode_index: usize,
    pub energy: EnergyMeV,
    pub delta_q: f64,
    pub huang_rhys: f64,
}

/// One row per mode; zero modes carry `S_k = 0`.
pub fn mode_couplings(modes: &NormalModes, delta_q: &[f64]) -> Vec<ModeCoupling> {
    (0..modes.len())
        .map(|k| ModeCoupling {
            mode_index: k,
            energy: modes.energies[k],
            delta_q: delta_q[k],
            huang_rhys: if modes.zero_mode[k] {
                0.0
            } else {
                huang_rhys_from_displacement(modes.energies[k], delta_q[k]).expect("positive mode energy")
            },
        })
        .collect()
}

/// Partial Huang–Rhys factors of all non-zero modes, labelled `mode-<k>`.
pub fn huang_rhys_spectrum(modes: &NormalModes, delta_q: &[f64]) -> Result<Vec<PhononMode>> {
    mode_couplings(modes, delta_q)
        .into_iter()
        .filter(|c| !modes.zero_mode[c.mode_index])
        .map(|c| PhononMode::new(format!("mode-{}", c.mode_index), c.energy, c.huang_rhys))
        .collect()
}

/// The `k` modes with the largest `S_k` (ties by input order), as a mode set.
pub fn top_k_modeset(spectrum: &[PhononMode], k: usize, fwhm: EnergyMeV, scale: f64) -> Result<ModeSet> {
    let mut ranked: Vec<&PhononMode> = spectrum.iter().collect();
    ranked.sort_by(|a, b| b.huang_rhys().total_cmp(&a.huang_rhys()));
    ModeSet::new(ranked.into_iter().take(k).cloned().collect(), fwhm, scale)
}

pub fn write_modes_csv<W: Write>(rows: &[ModeCoupling], out: W) -> Result<()> {
    let mut out = out;
    let io = |e| Error::io("<modes>", e);
    writeln!(out, "# schema={MODES_SCHEMA}").map_err(io)?;
    writeln!(out, "# toy lattice: parameters are illustrative").map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MODES_HEADER).map_err(Error::from_csv)?;
    for r in rows {
        w.write_record(&[
            r.mode_index.to_string(),
            r.energy.0.to_string(),
            r.delta_q.to_string(),
            r.huang_rhys.to_string(),
        ])
        .map_err(Error::from_csv)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}
