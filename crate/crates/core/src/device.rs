//! Material and device physics: superconducting gap versus film thickness,
//! junction bilayer orientation, thermal stress, gap-difference tunneling
//! suppression, and the chip–wirebond spring–mass system.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::units::PLANCK_UEV_PER_GHZ;

/// Fractional thermal contraction of Si between 293 K and 4 K.
pub const SI_FRAC_CONTRACTION: f64 = 2.2e-4;

/// Effective athermal quasiparticle energy above the gap at typical base
/// temperatures, in μeV.
pub const TYPICAL_QP_EXCESS_ENERGY_UEV: f64 = 2.0;

/// Diffusion length of a 1.28Δ quasiparticle in Al before relaxing to the
/// gap edge, in mm. Quoted from prior work, not computed here.
pub const AL_DIFFUSION_LENGTH_1P28_GAP_MM: f64 = 0.2;
/// Diffusion lengths of 188 μeV and 195 μeV quasiparticles in a 183 μeV Al
/// film, in mm. Quoted constants.
pub const AL_DIFFUSION_LENGTH_188_UEV_MM: f64 = 4.0;
pub const AL_DIFFUSION_LENGTH_195_UEV_MM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    /// GPa.
    pub youngs_modulus: f64,
    /// ΔL/L between room temperature and 4 K.
    pub frac_contraction_293k_to_4k: f64,
    /// μeV.
    pub gap_bulk: f64,
    /// μeV·nm; the thin-film gap enhancement is `gap_thickness_coeff / d`.
    pub gap_thickness_coeff: f64,
}

impl Material {
    pub fn new(
        name: &str,
        youngs_modulus: f64,
        frac_contraction: f64,
        gap_bulk: f64,
        gap_thickness_coeff: f64,
    ) -> Result<Self> {
        let m = Self {
            name: name.to_string(),
            youngs_modulus,
            frac_contraction_293k_to_4k: frac_contraction,
            gap_bulk,
            gap_thickness_coeff,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0) {
            return domain(format!("{}: Young's modulus must be positive", self.name));
        }
        if !(self.frac_contraction_293k_to_4k >= 0.0) {
            return domain(format!("{}: contraction must be non-negative", self.name));
        }
        if !(self.gap_bulk > 0.0) {
            return domain(format!("{}: bulk gap must be positive", self.name));
        }
        if !(self.gap_thickness_coeff >= 0.0) {
            return domain(format!("{}: gap thickness coefficient must be non-negative", self.name));
        }
        Ok(())
    }

    pub fn aluminum() -> Self {
        Self {
            name: "Al".into(),
            youngs_modulus: 100.0,
            frac_contraction_293k_to_4k: 41.5e-4,
            gap_bulk: 180.0,
            gap_thickness_coeff: 600.0,
        }
    }

    /// Nb film. The gap entries describe bulk Nb and carry no thickness
    /// enhancement; only the mechanical constants are used downstream.
    pub fn niobium() -> Self {
        Self {
            name: "Nb".into(),
            youngs_modulus: 100.0,
            frac_contraction_293k_to_4k: 14.3e-4,
            gap_bulk: 1500.0,
            gap_thickness_coeff: 0.0,
        }
    }

    /// Substrate entry; the gap fields are placeholders (Si is not a superconductor).
    pub fn silicon() -> Self {
        Self {
            name: "Si".into(),
            youngs_modulus: 130.0,
            frac_contraction_293k_to_4k: SI_FRAC_CONTRACTION,
            gap_bulk: f64::MIN_POSITIVE,
            gap_thickness_coeff: 0.0,
        }
    }
}

/// Which electrode of the junction bilayer faces the qubit island.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JunctionOrientation {
    /// Thin, high-gap film on the island side.
    GapEngineered,
    /// Thin, high-gap film on the ground-plane side.
    NonIdealGapEngineered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionBilayer {
    /// nm.
    pub thin_film_thickness: f64,
    /// nm.
    pub thick_film_thickness: f64,
    pub orientation: JunctionOrientation,
}

impl JunctionBilayer {
    pub fn validate(&self) -> Result<()> {
        if !(self.thin_film_thickness > 0.0 && self.thick_film_thickness > 0.0) {
            return domain("junction film thicknesses must be positive");
        }
        if !(self.thin_film_thickness < self.thick_film_thickness) {
            return domain("thin junction film must be thinner than the thick film");
        }
        Ok(())
    }

    /// Gap difference between the two electrodes of the bilayer, μeV.
    pub fn gap_difference(&self, m: &Material) -> Result<f64> {
        let thin = gap_from_thickness(m, self.thin_film_thickness)?;
        let thick = gap_from_thickness(m, self.thick_film_thickness)?;
        Ok(thin - thick)
    }
}

impl Default for JunctionBilayer {
    fn default() -> Self {
        Self {
            thin_film_thickness: 40.0,
            thick_film_thickness: 80.0,
            orientation: JunctionOrientation::GapEngineered,
        }
    }
}

/// Chip extent, mm. Positions are measured from the lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChipGeometry {
    pub width: f64,
    pub height: f64,
}

impl Default for ChipGeometry {
    fn default() -> Self {
        Self {
            width: 8.0,
            height: 8.0,
        }
    }
}

impl ChipGeometry {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0.0..=self.width).contains(&p[0]) && (0.0..=self.height).contains(&p[1])
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitSpec {
    pub id: String,
    /// μeV.
    pub island_gap: f64,
    /// μeV.
    pub ground_plane_gap: f64,
    #[serde(default)]
    pub junction: JunctionBilayer,
    /// Parity-mapping fidelity F ∈ (0, 1].
    pub mapping_fidelity: f64,
    /// Charge dispersion δf, MHz.
    pub charge_dispersion: f64,
    /// mm.
    pub position: [f64; 2],
    /// ω01, rad/s.
    pub f01: f64,
}

impl QubitSpec {
    pub fn validate(&self, chip: &ChipGeometry) -> Result<()> {
        if !(self.mapping_fidelity > 0.0 && self.mapping_fidelity <= 1.0) {
            return Err(Error::Config(format!(
                "qubit {}: mapping fidelity must lie in (0, 1]",
                self.id
            )));
        }
        if !(self.charge_dispersion > 0.0) {
            return Err(Error::Config(format!(
                "qubit {}: charge dispersion must be positive",
                self.id
            )));
        }
        if !chip.contains(self.position) {
            return Err(Error::Config(format!(
                "qubit {}: position {:?} lies outside the chip",
                self.id, self.position
            )));
        }
        if !(self.island_gap > 0.0 && self.ground_plane_gap > 0.0 && self.f01 > 0.0) {
            return Err(Error::Config(format!(
                "qubit {}: gaps and ω01 must be positive",
                self.id
            )));
        }
        self.junction.validate()
    }

    /// Idle time of the parity-mapping sequence, 1/(4δf), in seconds.
    pub fn parity_idle_time(&self) -> f64 {
        1.0 / (4.0 * self.charge_dispersion * 1e6)
    }

    /// Idle time of the charge-tomography sequence, 1/(2δf), in seconds.
    pub fn tomography_idle_time(&self) -> f64 {
        1.0 / (2.0 * self.charge_dispersion * 1e6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspensionModel {
    /// g.
    pub chip_mass: f64,
    pub bonds_per_side: u32,
    /// N/m.
    pub k_x: f64,
    pub k_y: f64,
    pub k_z: f64,
}

impl Default for SuspensionModel {
    fn default() -> Self {
        Self {
            chip_mass: 0.08,
            bonds_per_side: 40,
            k_x: 100.0,
            k_y: 1000.0,
            k_z: 200.0,
        }
    }
}

impl SuspensionModel {
    pub fn validate(&self) -> Result<()> {
        if self.chip_mass > 0.0
            && self.bonds_per_side > 0
            && self.k_x > 0.0
            && self.k_y > 0.0
            && self.k_z > 0.0
        {
            Ok(())
        } else {
            domain("suspension parameters must all be positive")
        }
    }

    /// Bonds loaded in the mode and the stiffness of each, N/m.
    fn mode_springs(&self, mode: SuspensionMode) -> (f64, f64) {
        let n = self.bonds_per_side as f64;
        match mode {
            // Only the two sides parallel to the motion stretch their bonds.
            SuspensionMode::SideToSide => (2.0 * n, self.k_y),
            SuspensionMode::InAndOut => (4.0 * n, self.k_z),
        }
    }

    /// Total spring constant of the mode, N/m.
    pub fn total_stiffness(&self, mode: SuspensionMode) -> f64 {
        let (n, k) = self.mode_springs(mode);
        n * k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuspensionMode {
    /// Displacement in the chip plane.
    SideToSide,
    /// Displacement along the chip normal.
    InAndOut,
}

/// Thin-film gap `Δ(d) = Δ_bulk + a/d`, μeV, for thickness `d` in nm.
pub fn gap_from_thickness(m: &Material, thickness_nm: f64) -> Result<f64> {
    if !(thickness_nm > 0.0) {
        return domain(format!("film thickness must be positive, got {thickness_nm}"));
    }
    Ok(m.gap_bulk + m.gap_thickness_coeff / thickness_nm)
}

/// `|Δ1 − Δ2| / h` in GHz.
pub fn gap_difference_frequency(gap_a_uev: f64, gap_b_uev: f64) -> f64 {
    (gap_a_uev - gap_b_uev).abs() / PLANCK_UEV_PER_GHZ
}

/// Options for [`thermal_stress`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StressOptions {
    /// Use the film-minus-substrate contraction instead of the film's own.
    pub subtract_substrate: bool,
}

/// `σ = E·ΔL/L` in MPa.
///
/// By default the film's full contraction is used. With
/// `subtract_substrate` the Si contraction is removed first.
pub fn thermal_stress(m: &Material, opts: StressOptions) -> f64 {
    let mut strain = m.frac_contraction_293k_to_4k;
    if opts.subtract_substrate {
        strain -= SI_FRAC_CONTRACTION;
    }
    m.youngs_modulus * 1e3 * strain
}

/// Arrhenius-type suppression `exp(−δΔ/δE)` of tunneling across a gap step.
pub fn tunneling_suppression(gap_step_uev: f64, excess_energy_uev: f64) -> Result<f64> {
    if !(excess_energy_uev > 0.0) {
        return domain("quasiparticle excess energy must be positive");
    }
    Ok((-gap_step_uev.max(0.0) / excess_energy_uev).exp())
}

/// Resonance of the chip on its wirebonds, kHz: `(1/2π)·sqrt(N·k/m)`.
pub fn suspension_mode_frequency(s: &SuspensionModel, mode: SuspensionMode) -> f64 {
    let k_total = s.total_stiffness(mode);
    let mass_kg = s.chip_mass * 1e-3;
    (k_total / mass_kg).sqrt() / (2.0 * std::f64::consts::PI) / 1e3
}

/// Elastic energy `½·k·x²` in J for a displacement in nm.
pub fn suspension_elastic_energy(s: &SuspensionModel, displacement_nm: f64, mode: SuspensionMode) -> Result<f64> {
    if !(displacement_nm >= 0.0) {
        return domain("displacement must be non-negative");
    }
    let x = displacement_nm * 1e-9;
    Ok(0.5 * s.total_stiffness(mode) * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn aluminum_film_gaps() {
        let al = Material::aluminum();
        assert_relative_eq!(gap_from_thickness(&al, 185.0).unwrap(), 183.243, epsilon = 1e-3);
        assert_relative_eq!(gap_from_thickness(&al, 80.0).unwrap(), 187.5, epsilon = 1e-12);
        assert_relative_eq!(gap_from_thickness(&al, 40.0).unwrap(), 195.0, epsilon = 1e-12);
        assert_relative_eq!(gap_from_thickness(&al, 1e12).unwrap(), 180.0, epsilon = 1e-6);
        assert!(gap_from_thickness(&al, 0.0).is_err());
        assert!(gap_from_thickness(&al, -3.0).is_err());
    }

    #[test]
    fn gap_differences() {
        assert!((gap_difference_frequency(195.0, 187.5) - 1.81).abs() < 0.01);
        assert_eq!(gap_difference_frequency(190.0, 190.0), 0.0);
        assert!((gap_difference_frequency(183.2, 180.0) - 0.774).abs() < 0.001);
        let bilayer = JunctionBilayer::default();
        assert_relative_eq!(bilayer.gap_difference(&Material::aluminum()).unwrap(), 7.5);
    }

    #[test]
    fn stress_values() {
        let opts = StressOptions::default();
        assert_relative_eq!(thermal_stress(&Material::aluminum(), opts), 415.0, epsilon = 1e-9);
        assert_relative_eq!(thermal_stress(&Material::niobium(), opts), 143.0, epsilon = 1e-9);
        let mut flat = Material::aluminum();
        flat.frac_contraction_293k_to_4k = 0.0;
        assert_eq!(thermal_stress(&flat, opts), 0.0);
        let diff = thermal_stress(&Material::aluminum(), StressOptions { subtract_substrate: true });
        assert_relative_eq!(diff, 393.0, epsilon = 1e-9);
    }

    #[test]
    fn suppression_values() {
        assert_eq!(tunneling_suppression(0.0, 2.0).unwrap(), 1.0);
        assert!((tunneling_suppression(7.5, 2.0).unwrap() - 0.0235).abs() < 1e-4);
        assert!(tunneling_suppression(500.0, 2.0).unwrap() < 1e-100);
        assert!(tunneling_suppression(1.0, 0.0).is_err());
    }

    #[test]
    fn suspension_modes() {
        let s = SuspensionModel::default();
        let f_z = suspension_mode_frequency(&s, SuspensionMode::InAndOut);
        let f_y = suspension_mode_frequency(&s, SuspensionMode::SideToSide);
        assert!((f_z - 3.183).abs() < 0.01, "{f_z}");
        assert!((f_y - 5.033).abs() < 0.01, "{f_y}");
        let heavy = SuspensionModel {
            chip_mass: 4.0 * s.chip_mass,
            ..s.clone()
        };
        assert_relative_eq!(
            suspension_mode_frequency(&heavy, SuspensionMode::InAndOut),
            f_z / 2.0,
            max_relative = 1e-14
        );
        let e1 = suspension_elastic_energy(&s, 1.0, SuspensionMode::SideToSide).unwrap();
        assert_relative_eq!(e1, 4e-14, max_relative = 1e-12);
        assert_eq!(suspension_elastic_energy(&s, 0.0, SuspensionMode::SideToSide).unwrap(), 0.0);
        let e2 = suspension_elastic_energy(&s, 2.0, SuspensionMode::SideToSide).unwrap();
        assert_relative_eq!(e2, 4.0 * e1, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn gap_strictly_decreasing(a in 1.0f64..1e4, b in 1.0f64..1e4) {
            prop_assume!((a - b).abs() > 1e-6);
            let al = Material::aluminum();
            let (ga, gb) = (gap_from_thickness(&al, a).unwrap(), gap_from_thickness(&al, b).unwrap());
            prop_assert_eq!(a < b, ga > gb);
        }

        #[test]
        fn suppression_in_unit_interval(step in 0.0f64..1e3, e in 1e-3f64..1e3) {
            let v = tunneling_suppression(step, e).unwrap();
            prop_assert!(v > 0.0 || step / e > 700.0);
            prop_assert!(v <= 1.0);
        }

        #[test]
        fn frequency_scaling(k in 1.0f64..1e4, m in 1e-3f64..1.0, factor in 1.1f64..10.0) {
            let base = SuspensionModel { chip_mass: m, bonds_per_side: 40, k_x: k, k_y: k, k_z: k };
            let stiff = SuspensionModel { k_z: k * factor, ..base.clone() };
            let heavy = SuspensionModel { chip_mass: m * factor, ..base.clone() };
            let f0 = suspension_mode_frequency(&base, SuspensionMode::InAndOut);
            let ratio_k = suspension_mode_frequency(&stiff, SuspensionMode::InAndOut) / f0;
            let ratio_m = suspension_mode_frequency(&heavy, SuspensionMode::InAndOut) / f0;
            prop_assert!((ratio_k - factor.sqrt()).abs() < 1e-12 * factor);
            prop_assert!((ratio_m - 1.0 / factor.sqrt()).abs() < 1e-12);
        }

        #[test]
        fn stress_is_bilinear(e in 1.0f64..500.0, c in 0.0f64..0.01, s in 0.1f64..5.0) {
            let m = Material { name: "x".into(), youngs_modulus: e, frac_contraction_293k_to_4k: c, gap_bulk: 1.0, gap_thickness_coeff: 0.0 };
            let me = Material { youngs_modulus: e * s, ..m.clone() };
            let mc = Material { frac_contraction_293k_to_4k: c * s, ..m.clone() };
            let base = thermal_stress(&m, StressOptions::default());
            prop_assert!((thermal_stress(&me, StressOptions::default()) - s * base).abs() <= 1e-9 * (1.0 + base * s));
            prop_assert!((thermal_stress(&mc, StressOptions::default()) - s * base).abs() <= 1e-9 * (1.0 + base * s));
        }
    }
}
