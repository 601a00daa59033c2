//! Physical parameters, their unit conversions and the named scenario presets.
//!
//! Internally everything is expressed in millimetres, hours and mmHg. VEGF
//! concentrations are carried in units of 1e-13 kg/mm³.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// One mmHg expressed in kg/(mm·h²).
pub const MMHG_IN_KG_MM_H2: f64 = 133.322_387_415 * 1e-3 * 3600.0 * 3600.0;
/// One Pa·s expressed in mmHg·h.
pub const PA_S_IN_MMHG_H: f64 = 1.0 / 133.322_387_415 / 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub radius: f64,
    pub young_modulus: f64,
    pub motility: f64,
    pub phi_max: f64,
    pub phi_0: f64,
    pub gamma: f64,
    pub c_ref: f64,
    pub kappa: f64,
    pub viscosity: f64,
    pub beta_p0: f64,
    pub r_p: f64,
    pub dp_onc: f64,
    pub beta_ls: f64,
    pub p_ls: f64,
    pub p_in: f64,
    pub p_out: f64,
    pub beta_c0: f64,
    pub r_c: f64,
    pub d_c: f64,
    pub d_c_vessel: f64,
    pub c_in: f64,
    pub m_c: f64,
    pub d_g: f64,
    pub sigma: f64,
    pub sigma_tilde: f64,
    pub vegf_rate: f64,
    pub c_star: f64,
    pub b: f64,
    pub g_lim: f64,
    pub g_bar: f64,
    pub g_br: f64,
    pub l_e: f64,
    pub tau: f64,
    pub tau_br: f64,
    pub alpha_br: f64,
    pub d_br: f64,
    pub ecm_perturbation: f64,
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self {
            radius: 5e-3,
            young_modulus: 10.0,
            // 1e-4 mm²/(MPa·s) in mm²/(kPa·h)
            motility: 1e-4 * 1e-3 * 3600.0,
            phi_max: 1.0,
            phi_0: 0.5,
            gamma: 1.93e-2,
            c_ref: 10.5,
            kappa: 3.22e-9,
            viscosity: 4e-3 * PA_S_IN_MMHG_H,
            beta_p0: 2.78e-10 * MMHG_IN_KG_MM_H2,
            r_p: 21.38,
            dp_onc: 25.0,
            beta_ls: 0.5,
            p_ls: 1.0,
            p_in: 33.75,
            p_out: 35.0,
            beta_c0: 12.6,
            r_c: 1.0,
            d_c: 4.86,
            d_c_vessel: 1.8e3,
            c_in: 95.0,
            m_c: 0.55,
            d_g: 0.18,
            sigma: 0.5,
            sigma_tilde: 1.4,
            vegf_rate: 1.0,
            c_star: 11.5,
            b: 11.5,
            g_lim: 0.25,
            g_bar: 1.0,
            g_br: 1.5,
            l_e: 0.04,
            tau: 36.0,
            tau_br: 48.0,
            alpha_br: 0.3,
            d_br: 0.04,
            ecm_perturbation: 0.2,
        }
    }
}

impl ParameterSet {
    /// Product E·M in mm²/h.
    pub fn em(&self) -> f64 {
        self.young_modulus * self.motility
    }

    /// Tissue hydraulic conductivity κ/μ in mm²/(mmHg·h).
    pub fn kappa_over_mu(&self) -> f64 {
        self.kappa / self.viscosity
    }

    /// Poiseuille conductance πR⁴/(8μ) in mm⁴/(mmHg·h).
    pub fn vessel_conductance(&self) -> f64 {
        std::f64::consts::PI * self.radius.powi(4) / (8.0 * self.viscosity)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        let spec = spec(key)?;
        let mut copy = self.clone();
        Some(*(spec.field)(&mut copy))
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ConfigError> {
        let spec = spec(key).ok_or_else(|| ConfigError::Invalid {
            key: key.to_string(),
            msg: "unknown parameter".into(),
        })?;
        if !value.is_finite() {
            return Err(ConfigError::Invalid {
                key: key.to_string(),
                msg: format!("value {value} is not finite"),
            });
        }
        *(spec.field)(self) = value;
        Ok(())
    }

    /// Hard consistency checks; violations are errors.
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| {
            Err(ConfigError::Invalid {
                key: key.to_string(),
                msg: msg.to_string(),
            })
        };
        for s in SCHEMA {
            let mut copy = self.clone();
            let v = *(s.field)(&mut copy);
            if !v.is_finite() {
                return bad(s.key, "not finite");
            }
            if s.positive && !(v > 0.0) {
                return bad(s.key, "must be positive");
            }
        }
        if !(self.phi_0 < self.phi_max && self.phi_max <= 1.0) {
            return bad("phi_0", "requires 0 < phi_0 < phi_max <= 1");
        }
        if !(self.g_lim < self.g_bar && self.g_bar <= self.g_br) {
            return bad("g_br", "requires g_lim < g_bar <= g_br");
        }
        if !(self.alpha_br > 0.0 && self.alpha_br < 1.0) {
            return bad("alpha_br", "must lie in (0, 1)");
        }
        if !(0.0..0.5).contains(&self.ecm_perturbation) {
            return bad("ecm_perturbation", "must lie in [0, 0.5)");
        }
        if self.r_p < 1.0 || self.r_c < 1.0 {
            return bad("r_p", "permeability scale factors must be >= 1");
        }
        Ok(())
    }

    /// Soft checks against the documented physical ranges.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in SCHEMA {
            if let Some((lo, hi)) = s.range {
                let mut copy = self.clone();
                let v = *(s.field)(&mut copy);
                let tol = 1e-9 * lo.abs().max(hi.abs());
                if v < lo - tol || v > hi + tol {
                    out.push(format!(
                        "parameter `{}` = {v:e} {} is outside the documented range [{lo:e}, {hi:e}]",
                        s.key, s.unit
                    ));
                }
            }
        }
        out
    }
}

/// Solver and discretization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Absolute Newton tolerance per mesh node.
    pub newton_tol_abs: f64,
    pub newton_tol_rel: f64,
    pub newton_max_iter: usize,
    /// Maximum number of step halvings in the tumor step.
    pub max_halvings: u32,
    /// Saturation guard below `phi_max`.
    pub phi_eps: f64,
    /// Primary 1D nodes per crossed tetrahedron.
    pub refinement: f64,
    /// Auxiliary 1D nodes relative to primary nodes.
    pub aux_ratio: f64,
    pub kkt_tol: f64,
    /// Re-solves with updated exchange cases within a step (1 = lagged cases only).
    pub case_iterations: usize,
    /// Artificial diffusion factor for 3D advection (0 disables it).
    pub stabilization: f64,
    /// Prescribe zero oxygen at outlets instead of zero flux.
    pub oxygen_outlet_dirichlet: bool,
    /// Scale vessel oxygen advection by the cross-section area.
    pub vessel_advection_area: bool,
    /// Start from a steady pressure field instead of the lymphatic pressure.
    pub pressure_presolve: bool,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            newton_tol_abs: 1e-10,
            newton_tol_rel: 1e-8,
            newton_max_iter: 30,
            max_halvings: 8,
            phi_eps: 1e-6,
            refinement: 1.0,
            aux_ratio: 0.5,
            kkt_tol: 1e-9,
            case_iterations: 1,
            stabilization: 0.0,
            oxygen_outlet_dirichlet: false,
            vessel_advection_area: true,
            pressure_presolve: true,
        }
    }
}

impl Numerics {
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| {
            Err(ConfigError::Invalid {
                key: format!("numerics.{key}"),
                msg: msg.to_string(),
            })
        };
        if !(self.newton_tol_abs > 0.0 && self.newton_tol_rel > 0.0) {
            return bad("newton_tol_abs", "tolerances must be positive");
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter", "must be at least 1");
        }
        if !(self.phi_eps > 0.0 && self.phi_eps < 0.1) {
            return bad("phi_eps", "must lie in (0, 0.1)");
        }
        if !(self.refinement > 0.0) {
            return bad("refinement", "must be positive");
        }
        if !(self.aux_ratio > 0.0 && self.aux_ratio <= 4.0) {
            return bad("aux_ratio", "must lie in (0, 4]");
        }
        if !(self.kkt_tol > 0.0) {
            return bad("kkt_tol", "must be positive");
        }
        if self.case_iterations == 0 {
            return bad("case_iterations", "must be at least 1");
        }
        if !(self.stabilization >= 0.0) {
            return bad("stabilization", "must be non-negative");
        }
        Ok(())
    }
}

/// Physical dimension of a parameter, used for unit parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    None,
    Length,
    Area,
    Time,
    Rate,
    Pressure,
    Stiffness,
    Diffusivity,
    Viscosity,
    WallPermeability,
    Velocity,
    LymphaticRate,
    Motility,
    Vegf,
    Oxygen,
}

/// Conversion factors into the internal unit of `dim`.
fn unit_factor(dim: Dim, unit: &str) -> Option<f64> {
    let u: String = unit.chars().filter(|c| !c.is_whitespace()).collect::<String>().replace('µ', "u");
    if u.is_empty() {
        return Some(1.0);
    }
    let f = match dim {
        Dim::Stiffness => match u.as_str() {
            "kPa" => 1.0,
            "Pa" => 1e-3,
            "MPa" => 1e3,
            _ => return None,
        },
        Dim::None => match u.as_str() {
            "-" | "1" => 1.0,
            "%" => 0.01,
            _ => return None,
        },
        Dim::Length => match u.as_str() {
            "mm" => 1.0,
            "um" => 1e-3,
            "cm" => 10.0,
            "m" => 1e3,
            _ => return None,
        },
        Dim::Area => match u.as_str() {
            "mm2" | "mm^2" => 1.0,
            "um2" | "um^2" => 1e-6,
            "cm2" | "cm^2" => 1e2,
            "m2" | "m^2" => 1e6,
            _ => return None,
        },
        Dim::Time => match u.as_str() {
            "h" => 1.0,
            "min" => 1.0 / 60.0,
            "s" => 1.0 / 3600.0,
            "d" | "day" | "days" => 24.0,
            _ => return None,
        },
        Dim::Rate => match u.as_str() {
            "1/h" | "h^-1" => 1.0,
            "1/s" | "s^-1" => 3600.0,
            "1/min" => 60.0,
            "1/d" | "1/day" => 1.0 / 24.0,
            _ => return None,
        },
        Dim::Pressure | Dim::Oxygen => match u.as_str() {
            "mmHg" | "mmhg" => 1.0,
            "Pa" => 1.0 / 133.322_387_415,
            "kPa" => 1e3 / 133.322_387_415,
            _ => return None,
        },
        Dim::Diffusivity => match u.as_str() {
            "mm2/h" | "mm^2/h" => 1.0,
            "mm2/s" | "mm^2/s" => 3600.0,
            "cm2/s" | "cm^2/s" => 3.6e5,
            "um2/s" | "um^2/s" => 3.6e-3,
            "m2/s" | "m^2/s" => 3.6e9,
            _ => return None,
        },
        Dim::Viscosity => match u.as_str() {
            "mmHg*h" | "mmHg.h" => 1.0,
            "Pa*s" | "Pa.s" | "Pas" => PA_S_IN_MMHG_H,
            "cP" | "mPa*s" => 1e-3 * PA_S_IN_MMHG_H,
            _ => return None,
        },
        Dim::WallPermeability => match u.as_str() {
            "mm/(mmHg*h)" => 1.0,
            "mm2*h/kg" | "mm^2*h/kg" | "mm2h/kg" => MMHG_IN_KG_MM_H2,
            _ => return None,
        },
        Dim::Velocity => match u.as_str() {
            "mm/h" => 1.0,
            "mm/s" => 3600.0,
            "um/s" => 3.6,
            "cm/s" => 3.6e4,
            _ => return None,
        },
        Dim::LymphaticRate => match u.as_str() {
            "1/(mmHg*h)" | "mmHg/h" => 1.0,
            _ => return None,
        },
        Dim::Motility => match u.as_str() {
            "mm2/(kPa*h)" | "mm^2/(kPa*h)" => 1.0,
            "mm2/(MPa*s)" | "mm^2/(MPa*s)" => 1e-3 * 3600.0,
            _ => return None,
        },
        Dim::Vegf => match u.as_str() {
            "1e-13kg/mm3" | "1e-13kg/mm^3" => 1.0,
            "kg/mm3" | "kg/mm^3" => 1e13,
            _ => return None,
        },
    };
    Some(f)
}

/// Parses a `"value unit"` string into the internal unit of `dim`.
pub fn parse_quantity(text: &str, dim: Dim) -> Result<f64, String> {
    let t = text.trim();
    let (num, unit) = t.split_once(char::is_whitespace).unwrap_or((t, ""));
    let v: f64 = num.trim().parse().map_err(|_| format!("cannot read a number from `{text}`"))?;
    let f = unit_factor(dim, unit.trim()).ok_or_else(|| format!("unit `{}` is not valid here", unit.trim()))?;
    Ok(v * f)
}

pub struct ParamSpec {
    pub key: &'static str,
    pub dim: Dim,
    pub unit: &'static str,
    pub doc: &'static str,
    pub range: Option<(f64, f64)>,
    pub positive: bool,
    pub field: fn(&mut ParameterSet) -> &mut f64,
}

macro_rules! p {
    ($key:ident, $dim:ident, $unit:expr, $doc:expr, $range:expr, $pos:expr) => {
        ParamSpec {
            key: stringify!($key),
            dim: Dim::$dim,
            unit: $unit,
            doc: $doc,
            range: $range,
            positive: $pos,
            field: |p| &mut p.$key,
        }
    };
}

pub static SCHEMA: &[ParamSpec] = &[
    p!(radius, Length, "mm", "vessel radius R", None, true),
    p!(young_modulus, Stiffness, "kPa", "Young modulus E", None, true),
    p!(motility, Motility, "mm2/(kPa*h)", "motility M", None, true),
    p!(phi_max, None, "-", "maximum tumor cell fraction", None, true),
    p!(phi_0, None, "-", "stress-free tumor cell fraction", None, true),
    p!(gamma, Rate, "1/h", "tumor proliferation rate", Some((1.16e-2, 3.46e-2)), true),
    p!(c_ref, Oxygen, "mmHg", "oxygen threshold for proliferation", Some((8.5, 10.5)), true),
    p!(kappa, Area, "mm2", "tissue hydraulic permeability", Some((1e-12, 1e-7)), true),
    p!(viscosity, Viscosity, "mmHg*h", "blood viscosity", None, true),
    p!(beta_p0, WallPermeability, "mm/(mmHg*h)", "wall hydraulic permeability", None, false),
    p!(r_p, None, "-", "permeability scale of new vessels (fluid)", Some((1.0, 100.0)), true),
    p!(dp_onc, Pressure, "mmHg", "oncotic pressure jump", None, false),
    p!(beta_ls, LymphaticRate, "1/(mmHg*h)", "lymphatic effective permeability", None, false),
    p!(p_ls, Pressure, "mmHg", "lymphatic pressure", None, false),
    p!(p_in, Pressure, "mmHg", "pressure at inlet markers", None, false),
    p!(p_out, Pressure, "mmHg", "pressure at outlet markers", None, false),
    p!(beta_c0, Velocity, "mm/h", "wall oxygen permeability", None, false),
    p!(r_c, None, "-", "permeability scale of new vessels (oxygen)", Some((1.0, 100.0)), true),
    p!(d_c, Diffusivity, "mm2/h", "oxygen diffusivity in tissue", None, true),
    p!(d_c_vessel, Diffusivity, "mm2/h", "oxygen diffusivity in vessels", None, true),
    p!(c_in, Oxygen, "mmHg", "inlet oxygen concentration", None, false),
    p!(m_c, Rate, "1/h", "oxygen metabolization rate", Some((0.45, 0.55)), false),
    p!(d_g, Diffusivity, "mm2/h", "VEGF diffusivity", None, true),
    p!(sigma, Rate, "1/h", "VEGF decay", None, false),
    p!(sigma_tilde, Rate, "1/h", "endothelial VEGF consumption", Some((0.2, 2.0)), false),
    p!(vegf_rate, Rate, "1/h", "VEGF production rate G", Some((0.25, 1.0)), false),
    p!(c_star, Oxygen, "mmHg", "reference oxygen of the VEGF switch", None, true),
    p!(b, None, "-", "steepness of the VEGF switch", None, true),
    p!(g_lim, Vegf, "1e-13kg/mm3", "minimum VEGF for sprouting", None, true),
    p!(g_bar, Vegf, "1e-13kg/mm3", "VEGF for doubled cycle time", Some((0.75, 1.25)), true),
    p!(g_br, Vegf, "1e-13kg/mm3", "VEGF for near-certain branching", Some((0.75, 2.5)), true),
    p!(l_e, Length, "mm", "endothelial cell length", None, true),
    p!(tau, Time, "h", "endothelial proliferation time", Some((12.0, 48.0)), true),
    p!(tau_br, Time, "h", "sprout age required to branch", Some((24.0, 96.0)), true),
    p!(alpha_br, None, "-", "perpendicular velocity ratio required to branch", Some((0.2, 0.5)), true),
    p!(d_br, Length, "mm", "branching distance", Some((4e-2, 8e-2)), true),
    p!(ecm_perturbation, None, "-", "magnitude of the matrix anisotropy", None, false),
];

pub fn spec(key: &str) -> Option<&'static ParamSpec> {
    SCHEMA.iter().find(|s| s.key == key)
}

/// Named parameter overrides for reproducing the published scenarios.
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub values: &'static [(&'static str, f64)],
}

const SET1: &[(&str, f64)] = &[
    ("gamma", 1.93e-2),
    ("c_ref", 10.5),
    ("vegf_rate", 1.0),
    ("sigma_tilde", 1.4),
    ("tau", 36.0),
    ("r_p", 21.38),
    ("r_c", 1.0),
    ("kappa", 3.22e-9),
    ("m_c", 0.55),
];

pub static PRESETS: &[Preset] = &[
    Preset {
        name: "set1",
        description: "first sensitivity study, Set 1",
        values: SET1,
    },
    Preset {
        name: "set2",
        description: "first sensitivity study, Set 2",
        values: &[
            ("gamma", 2.70e-2),
            ("c_ref", 9.83),
            ("vegf_rate", 0.75),
            ("sigma_tilde", 2.0),
            ("tau", 24.0),
            ("r_p", 100.0),
            ("r_c", 21.38),
            ("kappa", 3.22e-9),
            ("m_c", 0.45),
        ],
    },
    Preset {
        name: "set1a",
        description: "network geometry study, Set 1.a (Set 1 plus growth overrides)",
        values: &[
            ("d_br", 6.67e-2),
            ("tau_br", 48.0),
            ("g_bar", 1.08),
            ("g_br", 1.81),
            ("alpha_br", 0.3),
        ],
    },
    Preset {
        name: "set1b",
        description: "network geometry study, Set 1.b (Set 1 plus growth overrides)",
        values: &[
            ("d_br", 6.67e-2),
            ("tau_br", 96.0),
            ("g_bar", 1.08),
            ("g_br", 1.81),
            ("alpha_br", 0.5),
        ],
    },
];

pub fn preset(name: &str) -> Result<&'static Preset, ConfigError> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        ConfigError::UnknownPreset(format!("{name}` (available: {}", names.join(", ")))
    })
}

impl Preset {
    /// Applies the preset on top of `base`. The geometry presets build on Set 1.
    pub fn apply(&self, base: &mut ParameterSet) {
        if self.name.starts_with("set1") && self.name != "set1" {
            for &(k, v) in SET1 {
                base.set(k, v).expect("preset keys exist");
            }
        }
        for &(k, v) in self.values {
            base.set(k, v).expect("preset keys exist");
        }
    }

    pub fn parameters(&self) -> ParameterSet {
        let mut p = ParameterSet::default();
        self.apply(&mut p);
        p
    }
}
