//! Native mixture files (`.fmb`): a binary little-endian PLY with one vertex
//! per component.
//!
//! Properties, all `double`: `x y z`, `u00 u01 u02 u10 u11 u12 u20 u21 u22`
//! (row-major root precision), `log_weight`, `color_r color_g color_b`
//! (unconstrained color, displayed through a sigmoid). The scene scale is
//! kept in a `comment scene_scale <value>` header line.

use std::fs;
use std::path::Path;

use crate::formats::ply::{self, Property, ScalarKind, VertexTable};
use crate::gmm::{Gaussian3D, Mixture, PARAMS_PER_COMPONENT};
use crate::{Error, Result};

pub const PROPERTY_NAMES: [&str; PARAMS_PER_COMPONENT] = [
    "x",
    "y",
    "z",
    "u00",
    "u01",
    "u02",
    "u10",
    "u11",
    "u12",
    "u20",
    "u21",
    "u22",
    "log_weight",
    "color_r",
    "color_g",
    "color_b",
];

pub fn encode_mixture(mix: &Mixture) -> Vec<u8> {
    let props: Vec<Property> = PROPERTY_NAMES
        .iter()
        .map(|n| Property::new(*n, ScalarKind::F64))
        .collect();
    let mut out = Vec::new();
    // `{:e}` of an f64 round-trips exactly through `parse`
    let comments = vec![format!("scene_scale {:e}", mix.scene_scale)];
    ply::write_vertex_header(&mut out, &comments, mix.len(), &props).expect("write to Vec");
    let mut buf = [0.0; PARAMS_PER_COMPONENT];
    for g in &mix.components {
        g.write_params(&mut buf);
        for v in buf {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_mixture(bytes: &[u8]) -> Result<Mixture> {
    let table = VertexTable::parse(bytes)?;
    let scale = table
        .header
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("scene_scale "))
        .map(|s| s.trim().parse::<f64>())
        .transpose()
        .map_err(|_| Error::PlyHeader("unparseable scene_scale comment".into()))?
        .unwrap_or(1.0);
    let cols = PROPERTY_NAMES
        .iter()
        .map(|n| table.column(n))
        .collect::<Result<Vec<_>>>()?;
    let mut buf = [0.0; PARAMS_PER_COMPONENT];
    let comps = (0..table.len())
        .map(|row| {
            for (b, c) in buf.iter_mut().zip(&cols) {
                *b = c.get(row);
            }
            Gaussian3D::from_params(&buf)
        })
        .collect();
    Mixture::new(comps, scale)
}

pub fn write_mixture(path: impl AsRef<Path>, mix: &Mixture) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mixture(mix)).map_err(|e| Error::io(path, e))
}

pub fn read_mixture(path: impl AsRef<Path>) -> Result<Mixture> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mixture(&bytes)
}
