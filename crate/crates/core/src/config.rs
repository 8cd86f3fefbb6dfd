//! Versioned JSON run configuration.
//!
//! All quantities are SI. Nothing physical has a default: the wavelength,
//! every distance, every grid and the seed must be present.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "scenario": "lensless-fourier",
//!   "seed": 7,
//!   "wavelength": 5e-7,
//!   "geometry": { "d1": 0.1, "d2": 0.1, "dr": 0.2 },
//!   "source": { "n": 2048, "dx": 9.765625e-7,
//!               "profile": { "kind": "flat-top", "width": 2e-3, "edge_taper": 0.3, "peak_intensity": 1.0 } },
//!   "object": { "n": 512, "dx": 1.171875e-6,
//!               "transmittance": { "kind": "double-slit", "width": 2e-5, "separation": 1e-4 } },
//!   "reference": { "n": 257, "dx": 2.3346303501945526e-5 },
//!   "test": { "n": 257, "dx": 2.3346303501945526e-5 },
//!   "realizations": 20000,
//!   "analysis_half_width": 7.5e-4
//! }
//! ```
//!
//! Every grid is centered on the optical axis. `analysis_half_width` is
//! required for `lensless-fourier`; `shots_per_gate` is required for
//! `detector-integration` and rejected elsewhere.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fields::Grid1D;
use crate::propagation::{Geometry, ObjectSpec};
use crate::scenarios::LenslessConfig;
use crate::source::{flat_top_profile, SourceSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    LenslessFourier,
    RawCorrelation,
    CoherentControl,
    DetectorIntegration,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LenslessFourier => "lensless-fourier",
            Self::RawCorrelation => "raw-correlation",
            Self::CoherentControl => "coherent-control",
            Self::DetectorIntegration => "detector-integration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub wavelength: f64,
    pub geometry: DistancesConfig,
    pub source: SourceConfig,
    pub object: ObjectConfig,
    pub reference: GridConfig,
    pub test: GridConfig,
    pub realizations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots_per_gate: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistancesConfig {
    pub d1: f64,
    pub d2: f64,
    pub dr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub n: usize,
    pub dx: f64,
    pub profile: ProfileConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileConfig {
    /// Uniform over `width`, with a raised-cosine roll-off over the outer
    /// `edge_taper` fraction of each half-width (0 gives a hard edge).
    FlatTop {
        width: f64,
        edge_taper: f64,
        peak_intensity: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub n: usize,
    pub dx: f64,
    pub transmittance: TransmittanceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TransmittanceConfig {
    DoubleSlit { width: f64, separation: f64 },
    SingleSlit { width: f64 },
    Slits { slits: Vec<SlitConfig> },
    Transparent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlitConfig {
    pub center: f64,
    pub width: f64,
}

/// Configuration problem with its location: a dotted field path, and for
/// syntax or schema errors also the line and column in the JSON text.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.to_string()),
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "line {l}, column {c}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "field `{field}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::at(field, format!("must be a positive finite number, got {v}")))
    }
}

fn grid(field: &str, n: usize, dx: f64) -> Result<Grid1D, ConfigError> {
    if n < 2 {
        return Err(ConfigError::at(&format!("{field}.n"), format!("need at least 2 samples, got {n}")));
    }
    positive(&format!("{field}.dx"), dx)?;
    Grid1D::centered(n, dx).map_err(|e| ConfigError::at(field, e.to_string()))
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ConfigError {
                field: (path != ".").then_some(path),
                line: Some(inner.line()),
                column: Some(inner.column()),
                message: strip_position(&inner.to_string()),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            field: None,
            line: None,
            column: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json_str(&text)
    }

    /// Checks everything the schema cannot express; `to_lensless` relies on it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::at(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        self.to_lensless().map(|_| ())?;
        if self.realizations == 0 {
            return Err(ConfigError::at("realizations", "must be at least 1"));
        }
        match (self.scenario, self.analysis_half_width) {
            (ScenarioKind::LenslessFourier, None) => {
                return Err(ConfigError::at("analysis_half_width", "required for lensless-fourier"));
            }
            (_, Some(h)) => {
                positive("analysis_half_width", h)?;
            }
            _ => {}
        }
        match (self.scenario, self.shots_per_gate) {
            (ScenarioKind::DetectorIntegration, None) => {
                Err(ConfigError::at("shots_per_gate", "required for detector-integration"))
            }
            (ScenarioKind::DetectorIntegration, Some(0)) => Err(ConfigError::at("shots_per_gate", "must be at least 1")),
            (ScenarioKind::DetectorIntegration, Some(_)) => Ok(()),
            (_, Some(_)) => Err(ConfigError::at("shots_per_gate", "only valid for detector-integration")),
            (_, None) => Ok(()),
        }
    }

    /// Builds the experiment layout. For scenarios without an analysis region
    /// the metric region defaults to a quarter of the reference span.
    pub fn to_lensless(&self) -> Result<LenslessConfig, ConfigError> {
        let wavelength = positive("wavelength", self.wavelength)?;
        let g = &self.geometry;
        let geometry = Geometry::new(
            wavelength,
            positive("geometry.d1", g.d1)?,
            positive("geometry.d2", g.d2)?,
            positive("geometry.dr", g.dr)?,
        )
        .map_err(|e| ConfigError::at("geometry", e.to_string()))?;

        let grid_src = grid("source", self.source.n, self.source.dx)?;
        let ProfileConfig::FlatTop {
            width,
            edge_taper,
            peak_intensity,
        } = self.source.profile;
        positive("source.profile.width", width)?;
        positive("source.profile.peak_intensity", peak_intensity)?;
        if !(0.0..=1.0).contains(&edge_taper) {
            return Err(ConfigError::at("source.profile.edge_taper", format!("must lie in [0, 1], got {edge_taper}")));
        }
        let profile = flat_top_profile(grid_src, width, edge_taper, peak_intensity)
            .map_err(|e| ConfigError::at("source.profile", e.to_string()))?;
        let source = SourceSpec::incoherent(profile).map_err(|e| ConfigError::at("source", e.to_string()))?;

        let grid_obj = grid("object", self.object.n, self.object.dx)?;
        let field = "object.transmittance";
        let object = match &self.object.transmittance {
            TransmittanceConfig::DoubleSlit { width, separation } => {
                positive(&format!("{field}.width"), *width)?;
                positive(&format!("{field}.separation"), *separation)?;
                ObjectSpec::double_slit(grid_obj, *width, *separation)
            }
            TransmittanceConfig::SingleSlit { width } => {
                positive(&format!("{field}.width"), *width)?;
                ObjectSpec::single_slit(grid_obj, *width)
            }
            TransmittanceConfig::Slits { slits } => {
                for (i, s) in slits.iter().enumerate() {
                    positive(&format!("{field}.slits[{i}].width"), s.width)?;
                    if !s.center.is_finite() {
                        return Err(ConfigError::at(&format!("{field}.slits[{i}].center"), "must be finite"));
                    }
                }
                let v: Vec<(f64, f64)> = slits.iter().map(|s| (s.center, s.width)).collect();
                ObjectSpec::slits(grid_obj, &v)
            }
            TransmittanceConfig::Transparent => Ok(ObjectSpec::transparent(grid_obj)),
        }
        .map_err(|e| ConfigError::at(field, e.to_string()))?;

        let grid_ref = grid("reference", self.reference.n, self.reference.dx)?;
        let grid_test = grid("test", self.test.n, self.test.dx)?;
        let analysis_half_width = self.analysis_half_width.unwrap_or(grid_ref.span() / 4.0);
        let cfg = LenslessConfig {
            geometry,
            source,
            object,
            grid_ref,
            grid_test,
            realizations: self.realizations,
            master_seed: self.seed,
            analysis_half_width,
            x_t_target: 0.0,
        };
        cfg.validate().map_err(|e| ConfigError::at("test", e.to_string()))?;
        Ok(cfg)
    }

    /// Canonical serialization, used for echoes and hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, lowercase hex.
    pub fn scenario_hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"{
  "schema_version": 1,
  "scenario": "lensless-fourier",
  "seed": 7,
  "wavelength": 5e-7,
  "geometry": { "d1": 0.1, "d2": 0.1, "dr": 0.2 },
  "source": { "n": 2048, "dx": 9.765625e-7,
              "profile": { "kind": "flat-top", "width": 2e-3, "edge_taper": 0.3, "peak_intensity": 1.0 } },
  "object": { "n": 512, "dx": 1.171875e-6,
              "transmittance": { "kind": "double-slit", "width": 2e-5, "separation": 1e-4 } },
  "reference": { "n": 257, "dx": 2.3346303501945526e-5 },
  "test": { "n": 257, "dx": 2.3346303501945526e-5 },
  "realizations": 20000,
  "analysis_half_width": 7.5e-4
}"#;

    #[test]
    fn example_matches_desk_scenario() {
        let cfg = RunConfig::from_json_str(EXAMPLE).unwrap();
        let l = cfg.to_lensless().unwrap();
        let desk = LenslessConfig::desk_double_slit(20000, 7).unwrap();
        assert_eq!(l.geometry, desk.geometry);
        assert_eq!(l.grid_ref, desk.grid_ref);
        assert_eq!(l.source, desk.source);
        assert_eq!(l.object, desk.object);
        assert_eq!(l, desk);
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        let cfg = RunConfig::from_json_str(EXAMPLE).unwrap();
        let again = RunConfig::from_json_str(&cfg.canonical_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.scenario_hash(), again.scenario_hash());
        assert_eq!(cfg.scenario_hash().len(), 64);
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(cfg.scenario_hash(), other.scenario_hash());
    }

    fn err(text: &str) -> ConfigError {
        RunConfig::from_json_str(text).unwrap_err()
    }

    #[test]
    fn missing_seed_is_reported_with_position() {
        let text = EXAMPLE.replace("  \"seed\": 7,\n", "");
        let e = err(&text);
        assert!(e.message.contains("seed"), "{e}");
        assert!(e.line.is_some());
    }

    #[test]
    fn unknown_and_mistyped_fields_name_their_path() {
        let e = err(&EXAMPLE.replace("\"d2\": 0.1", "\"d2\": 0.1, \"d3\": 1"));
        assert_eq!(e.field.as_deref(), Some("geometry.d3"));
        assert!(e.message.contains("unknown field"));
        let e = err(&EXAMPLE.replace("\"d1\": 0.1", "\"d1\": \"far\""));
        assert_eq!(e.field.as_deref(), Some("geometry.d1"));
        assert_eq!(e.line, Some(6));
        let e = err(&EXAMPLE.replace("\"double-slit\"", "\"triple-slit\""));
        assert!(e.field.as_deref().unwrap().starts_with("object.transmittance"));
    }

    #[test]
    fn semantic_errors_name_their_field() {
        let cases = [
            (EXAMPLE.replace("\"wavelength\": 5e-7", "\"wavelength\": -5e-7"), "wavelength"),
            (EXAMPLE.replace("\"d1\": 0.1", "\"d1\": 0"), "geometry.d1"),
            (EXAMPLE.replace("\"schema_version\": 1", "\"schema_version\": 2"), "schema_version"),
            (EXAMPLE.replace("\"n\": 512", "\"n\": 1"), "object.n"),
            (EXAMPLE.replace("\"edge_taper\": 0.3", "\"edge_taper\": 1.5"), "source.profile.edge_taper"),
            (EXAMPLE.replace("\"realizations\": 20000", "\"realizations\": 0"), "realizations"),
            (EXAMPLE.replace(",\n  \"analysis_half_width\": 7.5e-4", ""), "analysis_half_width"),
            (EXAMPLE.replace("\"realizations\"", "\"shots_per_gate\": 4,\n  \"realizations\""), "shots_per_gate"),
        ];
        for (text, field) in cases {
            let e = err(&text);
            assert_eq!(e.field.as_deref(), Some(field), "{e}");
        }
    }

    #[test]
    fn detector_integration_needs_shots() {
        let base = EXAMPLE.replace("lensless-fourier", "detector-integration");
        assert_eq!(err(&base).field.as_deref(), Some("shots_per_gate"));
        let ok = base.replace("\"realizations\"", "\"shots_per_gate\": 4,\n  \"realizations\"");
        assert_eq!(RunConfig::from_json_str(&ok).unwrap().shots_per_gate, Some(4));
    }

    #[test]
    fn syntax_error_has_line() {
        let e = err("{\n  \"schema_version\": 1,\n  oops\n}");
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().starts_with("line 3"));
    }
}
