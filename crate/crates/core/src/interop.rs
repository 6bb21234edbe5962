//! Import of 3D Gaussian Splatting checkpoints.

use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use rayon::prelude::*;

use crate::formats::ply::VertexTable;
use crate::gmm::{logit, sigmoid, Gaussian3D, Mat3, Mixture, Vec3};
use crate::{Error, Result};

/// Zeroth-order spherical-harmonics basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatRecord {
    pub position: Vec3,
    /// Per-axis log standard deviations.
    pub log_scales: Vec3,
    /// `(w, x, y, z)`, unnormalized as stored.
    pub rotation: [f64; 4],
    pub logit_opacity: f64,
    pub sh_dc: Vec3,
}

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

pub fn parse_splats(bytes: &[u8]) -> Result<Vec<SplatRecord>> {
    let t = VertexTable::parse(bytes)?;
    let cols = REQUIRED.iter().map(|n| t.column(n)).collect::<Result<Vec<_>>>()?;
    Ok((0..t.len())
        .map(|i| {
            let v: Vec<f64> = cols.iter().map(|c| c.get(i)).collect();
            SplatRecord {
                position: Vec3::new(v[0], v[1], v[2]),
                sh_dc: Vec3::new(v[3], v[4], v[5]),
                logit_opacity: v[6],
                log_scales: Vec3::new(v[7], v[8], v[9]),
                rotation: [v[10], v[11], v[12], v[13]],
            }
        })
        .collect())
}

pub fn load_splat_ply(path: impl AsRef<Path>) -> Result<Vec<SplatRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_splats(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightMode {
    /// Every kept record gets this stored log-weight.
    Fixed(f64),
    /// `λ = −C·ln(1 − α)`, stored as `ln λ`.
    AlphaLog { c: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvertOptions {
    pub opacity_cutoff: f64,
    pub weight: WeightMode,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self {
            opacity_cutoff: 0.5,
            weight: WeightMode::Fixed(80f64.ln()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConvertReport {
    pub total: usize,
    pub kept: usize,
    pub below_cutoff: usize,
    pub non_finite: usize,
}

/// Colors are clamped this far inside (0, 1) so their logit stays finite.
const COLOR_MARGIN: f64 = 1e-6;

/// `R·diag(exp(−log_scales))·Rᵀ` from a possibly unnormalized quaternion.
pub fn splat_root_precision(rotation: [f64; 4], log_scales: &Vec3) -> Option<Mat3> {
    let q = Quaternion::new(rotation[0], rotation[1], rotation[2], rotation[3]);
    let norm = q.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let r = *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix();
    let inv_s = log_scales.map(|l| (-l).exp());
    if !inv_s.iter().all(|x| x.is_finite() && *x > 0.0) {
        return None;
    }
    Some(r * Mat3::from_diagonal(&inv_s) * r.transpose())
}

enum Outcome {
    Kept(Gaussian3D),
    Below,
    NonFinite,
}

fn convert_one(rec: &SplatRecord, opts: &ConvertOptions) -> Outcome {
    let finite = rec.position.iter().all(|x| x.is_finite())
        && rec.log_scales.iter().all(|x| x.is_finite())
        && rec.rotation.iter().all(|x| x.is_finite())
        && rec.logit_opacity.is_finite()
        && rec.sh_dc.iter().all(|x| x.is_finite());
    if !finite {
        return Outcome::NonFinite;
    }
    let alpha = sigmoid(rec.logit_opacity);
    if !(alpha >= opts.opacity_cutoff) {
        return Outcome::Below;
    }
    let Some(root) = splat_root_precision(rec.rotation, &rec.log_scales) else {
        return Outcome::NonFinite;
    };
    let log_weight = match opts.weight {
        WeightMode::Fixed(v) => v,
        WeightMode::AlphaLog { c } => (-c * (-alpha).ln_1p()).ln(),
    };
    if !log_weight.is_finite() {
        return Outcome::NonFinite;
    }
    let color_raw = rec
        .sh_dc
        .map(|dc| logit((0.5 + SH_C0 * dc).clamp(COLOR_MARGIN, 1.0 - COLOR_MARGIN)));
    Outcome::Kept(Gaussian3D::new(rec.position, root, log_weight, color_raw))
}

/// Converts splat records into a mixture, dropping low-opacity and
/// non-finite records.
pub fn convert_splats(records: &[SplatRecord], opts: &ConvertOptions) -> Result<(Mixture, ConvertReport)> {
    let outcomes: Vec<Outcome> = records.par_iter().map(|r| convert_one(r, opts)).collect();
    let mut report = ConvertReport {
        total: records.len(),
        ..Default::default()
    };
    let mut comps = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Kept(g) => comps.push(g),
            Outcome::Below => report.below_cutoff += 1,
            Outcome::NonFinite => report.non_finite += 1,
        }
    }
    report.kept = comps.len();
    if report.non_finite > 0 {
        log::warn!("dropped {} splat records with non-finite values", report.non_finite);
    }
    log::info!(
        "kept {} of {} splats ({:.1}%)",
        report.kept,
        report.total,
        100.0 * report.kept as f64 / report.total.max(1) as f64
    );
    Ok((Mixture::new(comps, 1.0)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::ply::{write_vertex_header, Property, ScalarKind};

    fn encode(records: &[SplatRecord], extra: bool) -> Vec<u8> {
        let mut names: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
        names.insert(3, "nx".into());
        if extra {
            names.push("f_rest_0".into());
            names.push("mystery".into());
        }
        let props: Vec<Property> = names
            .iter()
            .map(|n| Property::new(n.clone(), ScalarKind::F32))
            .collect();
        let mut out = Vec::new();
        write_vertex_header(&mut out, &[], records.len(), &props).unwrap();
        for r in records {
            let mut vals = vec![r.position.x, r.position.y, r.position.z, 0.0];
            vals.extend(r.sh_dc.iter());
            vals.push(r.logit_opacity);
            vals.extend(r.log_scales.iter());
            vals.extend(r.rotation);
            if extra {
                vals.extend([9.0, -9.0]);
            }
            for v in vals {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    fn record() -> SplatRecord {
        SplatRecord {
            position: Vec3::new(0.5, -0.25, 2.0),
            log_scales: Vec3::new(-1.0, -2.0, -0.5),
            rotation: [1.0, 0.5, 0.0, -0.25],
            logit_opacity: 1.5,
            sh_dc: Vec3::new(0.25, -0.5, 1.0),
        }
    }

    #[test]
    fn one_record_round_trip() {
        let r = record();
        let back = parse_splats(&encode(&[r], true)).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn missing_property_and_truncation() {
        let mut bytes = encode(&[record()], false);
        let split = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let header = String::from_utf8(bytes[..split].to_vec()).unwrap();
        let mut renamed = header
            .replace("property float rot_3\n", "property float rot_x\n")
            .into_bytes();
        renamed.extend_from_slice(&bytes[split..]);
        assert!(matches!(parse_splats(&renamed), Err(Error::PlyMissingProperty(p)) if p == "rot_3"));
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            parse_splats(&bytes),
            Err(Error::PlyTruncated {
                expected: 60,
                actual: 59
            })
        ));
    }

    #[test]
    fn isotropic_identity_rotation() {
        let s = 0.2f64;
        let rec = SplatRecord {
            log_scales: Vec3::repeat(s.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            ..record()
        };
        let (mix, _) = convert_splats(&[rec], &ConvertOptions::default()).unwrap();
        assert!((mix.components[0].root_precision - Mat3::identity() / s).abs().max() < 1e-12);
        assert_eq!(mix.components[0].log_weight, 80f64.ln());
    }

    #[test]
    fn opacity_boundary_is_kept() {
        let rec = SplatRecord {
            logit_opacity: 0.0,
            ..record()
        };
        let (mix, rep) = convert_splats(&[rec], &ConvertOptions::default()).unwrap();
        assert_eq!((mix.len(), rep.below_cutoff), (1, 0));
        let rec = SplatRecord {
            logit_opacity: -1e-9,
            ..record()
        };
        assert_eq!(
            convert_splats(&[rec], &ConvertOptions::default())
                .unwrap()
                .1
                .below_cutoff,
            1
        );
    }

    #[test]
    fn non_finite_records_are_counted() {
        let rec = SplatRecord {
            log_scales: Vec3::new(f64::NAN, 0.0, 0.0),
            ..record()
        };
        let zero_q = SplatRecord {
            rotation: [0.0; 4],
            ..record()
        };
        let (mix, rep) = convert_splats(&[rec, zero_q, record()], &ConvertOptions::default()).unwrap();
        assert_eq!((mix.len(), rep.non_finite), (1, 2));
    }

    #[test]
    fn alpha_log_weight() {
        let opts = ConvertOptions {
            weight: WeightMode::AlphaLog { c: 2.0 },
            ..Default::default()
        };
        let (mix, _) = convert_splats(&[record()], &opts).unwrap();
        let alpha = sigmoid(1.5);
        assert!((mix.components[0].log_weight - (-2.0 * (1.0 - alpha).ln()).ln()).abs() < 1e-12);
    }

    #[test]
    fn color_from_dc() {
        let (mix, _) = convert_splats(&[record()], &ConvertOptions::default()).unwrap();
        let c = mix.components[0].color();
        assert!((c.x - (0.5 + SH_C0 * 0.25)).abs() < 1e-12);
        assert!((c.z - (0.5 + SH_C0)).abs() < 1e-12);
    }
}
