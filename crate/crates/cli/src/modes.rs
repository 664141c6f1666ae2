use std::path::{Path, PathBuf};

use anyhow::anyhow;
use log::info;

use phonocycle::lattice::{
    build_dynamical_matrix, huang_rhys_spectrum, mode_couplings, project_displacement, solve_modes, top_k_modeset,
    write_modes_csv, DisplacementField, ToyLattice,
};
use phonocycle::units::EnergyMeV;

use crate::failure::{CliResult, Context, Failure};
use crate::io::{ensure_dir, write_file, write_json};

pub struct ModesArgs<'a> {
    pub lattice: &'a Path,
    pub export_modeset: Option<PathBuf>,
    pub top_k: usize,
    pub fwhm: f64,
    pub scale: f64,
}

pub fn run(args: &ModesArgs<'_>, out_dir: &Path) -> CliResult<()> {
    let lat = ToyLattice::load(args.lattice).at(args.lattice.display())?;
    let d = build_dynamical_matrix(&lat).at("dynamical matrix")?;
    let modes = solve_modes(&d).at("normal modes")?;
    let field = lat
        .displacement()
        .cloned()
        .unwrap_or_else(|| DisplacementField::zeros(lat.n_sites(), lat.dimension()));
    let dq = project_displacement(&modes, &lat, &field).at("projecting displacement")?;
    let rows = mode_couplings(&modes, &dq);

    ensure_dir(out_dir)?;
    write_file(&out_dir.join("modes.csv"), |w| write_modes_csv(&rows, w))?;
    info!("{} modes, {} zero mode(s)", modes.len(), modes.n_zero_modes());

    if let Some(path) = &args.export_modeset {
        if lat.displacement().is_none() {
            return Err(Failure::config(anyhow!(
                "--export-modeset needs a 'displacement' field in the lattice file"
            )));
        }
        let spectrum = huang_rhys_spectrum(&modes, &dq).map_err(Failure::runtime)?;
        let set = top_k_modeset(&spectrum, args.top_k, EnergyMeV(args.fwhm), args.scale).at("--top-k/--fwhm/--scale")?;
        write_json(path, &set)?;
        info!("exported {} mode(s) to {}", set.modes().len(), path.display());
    }
    Ok(())
}
