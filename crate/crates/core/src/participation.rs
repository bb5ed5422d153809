//! Participation matrices, loss channels and the analytic loss-factor
//! formulas (conductor surface resistance, seam admittance, surface
//! composition) that need no field simulation.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::domain::CONSTANTS;
use crate::error::{Error, Result};

pub const KNOWN_CHANNELS: [&str; 8] = ["surf", "surf_ta", "surf_al", "bulk", "pkg_cond", "pkg_ma", "seam", "seam_ta_al"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    DielectricParticipation,
    ConductorParticipation,
    SeamAdmittance,
}

impl ChannelKind {
    /// Conventional kind of a known channel id.
    pub fn for_id(id: &str) -> Option<ChannelKind> {
        match id {
            "surf" | "surf_ta" | "surf_al" | "bulk" | "pkg_ma" => Some(ChannelKind::DielectricParticipation),
            "pkg_cond" => Some(ChannelKind::ConductorParticipation),
            "seam" | "seam_ta_al" => Some(ChannelKind::SeamAdmittance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossChannel {
    pub id: String,
    pub kind: ChannelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub id: String,
    pub freq_hz: f64,
}

/// Participation of each mode (rows) in each loss channel (columns).
/// Seam columns hold admittances per unit length in (Ohm m)^-1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct ParticipationMatrix {
    modes: Vec<ModeSpec>,
    channels: Vec<LossChannel>,
    values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    modes: Vec<ModeSpec>,
    channels: Vec<LossChannel>,
    values: Vec<Vec<f64>>,
}

impl TryFrom<RawMatrix> for ParticipationMatrix {
    type Error = Error;
    fn try_from(r: RawMatrix) -> Result<Self> {
        ParticipationMatrix::new(r.modes, r.channels, r.values)
    }
}

impl From<ParticipationMatrix> for RawMatrix {
    fn from(m: ParticipationMatrix) -> Self {
        RawMatrix {
            modes: m.modes,
            channels: m.channels,
            values: m.values,
        }
    }
}

impl ParticipationMatrix {
    pub fn new(modes: Vec<ModeSpec>, channels: Vec<LossChannel>, values: Vec<Vec<f64>>) -> Result<Self> {
        if modes.is_empty() || channels.is_empty() {
            return Err(Error::InvalidInput("participation matrix needs at least one mode and one channel".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if !KNOWN_CHANNELS.contains(&c.id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "unknown channel id '{}' (expected one of {})",
                    c.id,
                    KNOWN_CHANNELS.join(", ")
                )));
            }
            if channels[..i].iter().any(|o| o.id == c.id) {
                return Err(Error::InvalidInput(format!("duplicate channel id '{}'", c.id)));
            }
        }
        for (i, m) in modes.iter().enumerate() {
            if !(m.freq_hz > 0.0) || !m.freq_hz.is_finite() {
                return Err(Error::InvalidInput(format!("mode '{}' has invalid frequency {}", m.id, m.freq_hz)));
            }
            if modes[..i].iter().any(|o| o.id == m.id) {
                return Err(Error::InvalidInput(format!("duplicate mode id '{}'", m.id)));
            }
        }
        if values.len() != modes.len() {
            return Err(Error::DimensionMismatch(format!("{} modes but {} value rows", modes.len(), values.len())));
        }
        for (row, m) in values.iter().zip(&modes) {
            if row.len() != channels.len() {
                return Err(Error::DimensionMismatch(format!(
                    "mode '{}' has {} values for {} channels",
                    m.id,
                    row.len(),
                    channels.len()
                )));
            }
            for (v, c) in row.iter().zip(&channels) {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::InvalidInput(format!("negative or non-finite value {v} for mode '{}', channel '{}'", m.id, c.id)));
                }
                if c.kind == ChannelKind::DielectricParticipation && *v > 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "dielectric participation {v} > 1 for mode '{}', channel '{}'",
                        m.id, c.id
                    )));
                }
            }
        }
        Ok(ParticipationMatrix { modes, channels, values })
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn channels(&self) -> &[LossChannel] {
        &self.channels
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, mode: usize, channel: usize) -> f64 {
        self.values[mode][channel]
    }

    pub fn channel_index(&self, id: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.id == id)
    }

    pub fn mode_index(&self, id: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.id == id)
    }

    pub fn channel_ids(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.id.clone()).collect()
    }

    /// Keeps only the named modes, in the given order.
    pub fn select_modes(&self, ids: &[&str]) -> Result<ParticipationMatrix> {
        let mut modes = Vec::new();
        let mut values = Vec::new();
        for id in ids {
            let i = self
                .mode_index(id)
                .ok_or_else(|| Error::InvalidInput(format!("mode '{id}' not in matrix")))?;
            modes.push(self.modes[i].clone());
            values.push(self.values[i].clone());
        }
        ParticipationMatrix::new(modes, self.channels.clone(), values)
    }
}

/// A loss factor for one channel, possibly frequency dependent.
///
/// In files this is written as one of
/// `{"value": .., "sigma": ..}`,
/// `{"surface_resistance": .., "surface_resistance_sigma": .., "penetration_depth": ..}` or
/// `{"contact_resistance": .., "contact_resistance_sigma": .., "contact_width": ..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorModel {
    Constant { value: f64, sigma: f64 },
    SurfaceResistance {
        surface_resistance: f64,
        surface_resistance_sigma: f64,
        penetration_depth: f64,
    },
    /// Seam loss factor 1/g = R w in Ohm m from a contact resistance R over a
    /// contact of width w.
    ContactResistance {
        contact_resistance: f64,
        contact_resistance_sigma: f64,
        contact_width: f64,
    },
}

impl FactorModel {
    pub fn constant(value: f64, sigma: f64) -> Self {
        FactorModel::Constant { value, sigma }
    }

    /// Loss factor and sigma at mode frequency `f`.
    pub fn at(&self, f: f64) -> (f64, f64) {
        match *self {
            FactorModel::Constant { value, sigma } => (value, sigma),
            FactorModel::SurfaceResistance {
                surface_resistance,
                surface_resistance_sigma,
                penetration_depth,
            } => {
                let k = 1.0 / (CONSTANTS.mu0 * TAU * f * penetration_depth);
                (surface_resistance * k, surface_resistance_sigma * k)
            }
            FactorModel::ContactResistance {
                contact_resistance,
                contact_resistance_sigma,
                contact_width,
            } => (contact_resistance * contact_width, contact_resistance_sigma * contact_width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FactorModel::Constant { value, sigma } => value.is_finite() && sigma >= 0.0,
            FactorModel::SurfaceResistance {
                surface_resistance,
                surface_resistance_sigma,
                penetration_depth,
            } => surface_resistance >= 0.0 && surface_resistance_sigma >= 0.0 && penetration_depth > 0.0,
            FactorModel::ContactResistance {
                contact_resistance,
                contact_resistance_sigma,
                contact_width,
            } => contact_resistance >= 0.0 && contact_resistance_sigma >= 0.0 && contact_width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid loss-factor specification {self:?}")))
        }
    }
}

/// Conductor loss factor R_s / (mu0 * 2 pi f * lambda).
pub fn conductor_loss_factor(surface_resistance: f64, f: f64, penetration_depth: f64) -> Result<f64> {
    if !(surface_resistance >= 0.0) || !(f > 0.0) || !(penetration_depth > 0.0) {
        return Err(Error::InvalidInput("surface resistance must be >= 0, frequency and penetration depth > 0".into()));
    }
    Ok(surface_resistance / (CONSTANTS.mu0 * TAU * f * penetration_depth))
}

/// Seam admittance per unit length of a line segmented by contacts, assuming
/// a half-wave sinusoidal current distribution:
/// y = (2/pi) * sum_i sin^2(pi z_i / l) / (w Z0).
pub fn segmented_seam_admittance(length: f64, width: f64, z0: f64, contact_positions: &[f64]) -> Result<f64> {
    if !(length > 0.0) || !(width > 0.0) || !(z0 > 0.0) {
        return Err(Error::InvalidInput("length, width and Z0 must be positive".into()));
    }
    if let Some(z) = contact_positions.iter().find(|z| !(**z >= 0.0 && **z <= length)) {
        return Err(Error::InvalidInput(format!("contact position {z} m lies outside [0, {length}] m")));
    }
    let s: f64 = contact_positions.iter().map(|z| (PI * z / length).sin().powi(2)).sum();
    Ok(2.0 / PI * s / (width * z0))
}

/// Contacts spaced uniformly at the centers of `n` equal cells of a line.
pub fn uniform_contacts(length: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) * length / n as f64).collect()
}

/// Lumped contact admittance 2 / (Z0 w) for a single junction-lead contact.
pub fn lumped_contact_admittance(z0: f64, seam_length: f64) -> Result<f64> {
    if !(z0 > 0.0) || !(seam_length > 0.0) {
        return Err(Error::InvalidInput("Z0 and seam length must be positive".into()));
    }
    Ok(2.0 / (z0 * seam_length))
}

/// Split of the surface participation over the SA, MS and MA interfaces
/// together with the thickness and permittivity assumed when the
/// participation was simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceComposition {
    /// (p_SA, p_MS, p_MA) / p_surf.
    pub weights: [f64; 3],
    pub assumed_thickness: f64,
    pub assumed_eps_r: f64,
}

impl Default for SurfaceComposition {
    /// Equal weights over the three interfaces. This split is a placeholder
    /// convention, not a measured or simulated one.
    fn default() -> Self {
        SurfaceComposition {
            weights: [1.0 / 3.0; 3],
            assumed_thickness: 3e-9,
            assumed_eps_r: 10.0,
        }
    }
}

impl SurfaceComposition {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("surface weights {:?} must be non-negative and sum to 1", self.weights)));
        }
        if !(self.assumed_thickness > 0.0) || !(self.assumed_eps_r > 0.0) {
            return Err(Error::InvalidInput("assumed thickness and permittivity must be positive".into()));
        }
        Ok(())
    }
}

/// Effective surface loss factor from per-interface loss tangents, rescaled
/// from the true interface thicknesses and permittivities to the assumed ones:
/// sum_k w_k (t_k / t_surf) (eps_surf / eps_k) tan(delta_k).
pub fn compose_surface_factor(
    composition: &SurfaceComposition,
    tan_deltas: [f64; 3],
    true_thicknesses: [f64; 3],
    true_eps_r: [f64; 3],
) -> Result<f64> {
    composition.validate()?;
    if true_thicknesses.iter().chain(&true_eps_r).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("true thicknesses and permittivities must be positive".into()));
    }
    Ok((0..3)
        .map(|k| {
            composition.weights[k] * (true_thicknesses[k] / composition.assumed_thickness)
                * (composition.assumed_eps_r / true_eps_r[k])
                * tan_deltas[k]
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(id: &str) -> LossChannel {
        LossChannel {
            id: id.into(),
            kind: ChannelKind::for_id(id).unwrap(),
        }
    }

    #[test]
    fn matrix_validation() {
        let modes = vec![ModeSpec { id: "a".into(), freq_hz: 5e9 }];
        assert!(ParticipationMatrix::new(modes.clone(), vec![ch("surf")], vec![vec![0.5]]).is_ok());
        assert!(ParticipationMatrix::new(modes.clone(), vec![ch("surf")], vec![vec![-1e-9]]).is_err());
        assert!(ParticipationMatrix::new(modes.clone(), vec![ch("bulk")], vec![vec![1.2]]).is_err());
        assert!(ParticipationMatrix::new(modes.clone(), vec![ch("seam")], vec![vec![9.4e4]]).is_ok());
        assert!(ParticipationMatrix::new(modes.clone(), vec![ch("surf"), ch("surf")], vec![vec![0.1, 0.1]]).is_err());
        assert!(ParticipationMatrix::new(modes, vec![ch("surf")], vec![vec![0.1, 0.2]]).is_err());
    }

    #[test]
    fn conductor_factor() {
        let g = conductor_loss_factor(0.61e-6, 7.13e9, 50e-9).unwrap();
        assert!((g - 2.1667e-4).abs() < 1e-7, "{g}");
        let g2 = conductor_loss_factor(0.61e-6, 2.0 * 7.13e9, 50e-9).unwrap();
        assert!((g2 * 2.0 - g).abs() < 1e-18);
        assert_eq!(conductor_loss_factor(0.0, 5e9, 50e-9).unwrap(), 0.0);
    }

    #[test]
    fn seam_admittances() {
        assert_eq!(segmented_seam_admittance(1e-2, 1e-5, 50.0, &[0.0]).unwrap(), 0.0);
        let y1 = lumped_contact_admittance(271.05, 10e-6).unwrap();
        assert!((y1 - 737.87).abs() < 0.05);
        assert!((lumped_contact_admittance(2.0 * 271.05, 10e-6).unwrap() * 2.0 - y1).abs() < 1e-9);
        for n in [100usize, 1000, 10000] {
            let z = uniform_contacts(1.0, n);
            let s: f64 = z.iter().map(|z| (PI * z).sin().powi(2)).sum();
            assert!((s / n as f64 - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn surface_composition() {
        let c = SurfaceComposition::default();
        let g = compose_surface_factor(&c, [2e-3; 3], [3e-9; 3], [10.0; 3]).unwrap();
        assert!((g - 2e-3).abs() < 1e-15);
        let single = SurfaceComposition {
            weights: [0.0, 0.0, 1.0],
            ..c
        };
        let g = compose_surface_factor(&single, [1e-3, 5e-3, 2e-3], [3e-9, 3e-9, 2e-9], [10.0, 10.0, 5.0]).unwrap();
        assert!((g - 2e-3 * (2.0 / 3.0) * 2.0).abs() < 1e-15);
        let g = compose_surface_factor(&c, [1e-3, 2e-3, 3e-3], [6e-9; 3], [10.0; 3]).unwrap();
        assert!((g - 4e-3).abs() < 1e-15);
    }

    #[test]
    fn factor_model_file_forms() {
        let c: FactorModel = serde_json::from_str(r#"{"value": 1e-3, "sigma": 1e-4}"#).unwrap();
        assert_eq!(c, FactorModel::constant(1e-3, 1e-4));
        let s: FactorModel =
            serde_json::from_str(r#"{"surface_resistance": 0.61e-6, "surface_resistance_sigma": 0.28e-6, "penetration_depth": 5e-8}"#)
                .unwrap();
        assert!((s.at(7.13e9).0 - 2.1667e-4).abs() < 1e-7);
        let r: FactorModel =
            serde_json::from_str(r#"{"contact_resistance": 260e-9, "contact_resistance_sigma": 47e-9, "contact_width": 1e-5}"#).unwrap();
        assert!((r.at(5e9).0 - 2.6e-12).abs() < 1e-24);
    }
}
