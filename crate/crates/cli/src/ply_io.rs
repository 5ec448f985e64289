//! PLY vertex clouds: ASCII and binary, read and write.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ply_rs::parser::Parser;
use ply_rs::ply::{
    Addable, DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType,
    ScalarType,
};
use ply_rs::writer::Writer;
use raht_core::RawCloud;

const SCALAR_NAMES: [&str; 4] = ["reflectance", "intensity", "scalar", "value"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttributeKind {
    Rgb,
    Scalar(String),
}

impl AttributeKind {
    pub fn channels(&self) -> usize {
        match self {
            AttributeKind::Rgb => 3,
            AttributeKind::Scalar(_) => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlyCloud {
    pub raw: RawCloud,
    /// `None` for geometry-only files, which carry one zero channel.
    pub kind: Option<AttributeKind>,
}

fn as_f64(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v.into(),
        Property::UChar(v) => v.into(),
        Property::Short(v) => v.into(),
        Property::UShort(v) => v.into(),
        Property::Int(v) => v.into(),
        Property::UInt(v) => v.into(),
        Property::Float(v) => v.into(),
        Property::Double(v) => v,
        _ => return None,
    })
}

fn get(e: &DefaultElement, name: &str, row: usize) -> Result<f64> {
    let p = e.get(name).ok_or_else(|| anyhow!("vertex {row} lacks property '{name}'"))?;
    as_f64(p).ok_or_else(|| anyhow!("property '{name}' is a list"))
}

/// Reads vertex positions plus RGB (`red green blue`) or one scalar attribute, if present.
pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(f);
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut r)
        .with_context(|| format!("parsing {}", path.display()))?;
    let def = ply.header.elements.get("vertex").ok_or_else(|| anyhow!("no vertex element"))?;
    let has = |n: &str| def.properties.contains_key(n);
    for c in ["x", "y", "z"] {
        if !has(c) {
            bail!("vertex element lacks '{c}'");
        }
    }
    let kind = if has("red") && has("green") && has("blue") {
        Some(AttributeKind::Rgb)
    } else {
        SCALAR_NAMES.iter().find(|n| has(n)).map(|n| AttributeKind::Scalar((*n).to_string()))
    };
    let channels = kind.as_ref().map_or(1, AttributeKind::channels);
    let verts = ply.payload.get("vertex").map(Vec::as_slice).unwrap_or(&[]);
    let mut positions = Vec::with_capacity(verts.len());
    let mut attributes = Vec::with_capacity(verts.len() * channels);
    for (i, v) in verts.iter().enumerate() {
        positions.push([get(v, "x", i)?, get(v, "y", i)?, get(v, "z", i)?]);
        match &kind {
            Some(AttributeKind::Rgb) => {
                for c in ["red", "green", "blue"] {
                    attributes.push(get(v, c, i)?);
                }
            }
            Some(AttributeKind::Scalar(n)) => attributes.push(get(v, n, i)?),
            None => attributes.push(0.0),
        }
    }
    Ok(PlyCloud { raw: RawCloud { positions, attributes, channels }, kind })
}

/// Writes voxel positions as floats and attributes as `uchar` RGB (rounded,
/// clamped) or a `double` scalar.
pub fn write_ply(
    path: &Path,
    positions: &[[u32; 3]],
    attributes: &[f64],
    kind: &AttributeKind,
    encoding: Encoding,
) -> Result<()> {
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = encoding;
    let mut def = ElementDef::new("vertex".to_string());
    for c in ["x", "y", "z"] {
        def.properties.add(PropertyDef::new(c.to_string(), PropertyType::Scalar(ScalarType::Float)));
    }
    match kind {
        AttributeKind::Rgb => {
            for c in ["red", "green", "blue"] {
                def.properties.add(PropertyDef::new(c.to_string(), PropertyType::Scalar(ScalarType::UChar)));
            }
        }
        AttributeKind::Scalar(n) => {
            def.properties.add(PropertyDef::new(n.clone(), PropertyType::Scalar(ScalarType::Double)));
        }
    }
    ply.header.elements.add(def);
    let ch = kind.channels();
    let verts = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut e = DefaultElement::new();
            for (a, c) in ["x", "y", "z"].iter().enumerate() {
                e.insert(c.to_string(), Property::Float(p[a] as f32));
            }
            let row = &attributes[i * ch..(i + 1) * ch];
            match kind {
                AttributeKind::Rgb => {
                    for (v, c) in row.iter().zip(["red", "green", "blue"]) {
                        e.insert(c.to_string(), Property::UChar(v.round().clamp(0.0, 255.0) as u8));
                    }
                }
                AttributeKind::Scalar(n) => {
                    e.insert(n.clone(), Property::Double(row[0]));
                }
            }
            e
        })
        .collect();
    ply.payload.insert("vertex".to_string(), verts);
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    Writer::new()
        .write_ply(&mut w, &mut ply)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
