//! PLY point cloud I/O (ASCII and binary little-endian).
//!
//! Written files carry `x y z` as float32, `red green blue` as uint8 and
//! `nx ny nz` as float32 when the cloud has those attributes. The reader
//! accepts any scalar property type and ignores unknown properties and
//! elements after `vertex`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, bytes: &[u8], enc: Encoding) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut buf = [0u8; $n];
                buf.copy_from_slice(&bytes[..$n]);
                (if enc == Encoding::Big { <$t>::from_be_bytes(buf) } else { <$t>::from_le_bytes(buf) }) as f64
            }};
        }
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug)]
struct Property {
    name: String,
    scalar: Scalar,
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    vertex_count: usize,
    properties: Vec<Property>,
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply_from(BufReader::new(file), path)
}

/// Reads a cloud from any buffered source; `origin` only labels errors.
pub fn read_ply_from<R: BufRead>(mut reader: R, origin: &Path) -> Result<PointCloud> {
    let fail = |reason: String| Error::parse(origin, reason);
    let header = read_header(&mut reader).map_err(fail)?;

    let col = |name: &str| header.properties.iter().position(|p| p.name == name);
    let xyz = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(fail("vertex element lacks x/y/z".into())),
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let nxyz = match (col("nx"), col("ny"), col("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        _ => None,
    };

    let n = header.vertex_count;
    let mut row = vec![0.0f64; header.properties.len()];
    let mut points = Vec::with_capacity(n);
    let mut colors = rgb.map(|_| Vec::with_capacity(n));
    let mut normals = nxyz.map(|_| Vec::with_capacity(n));

    let record_len: usize = header.properties.iter().map(|p| p.scalar.size()).sum();
    let mut record = vec![0u8; record_len];
    let mut line = String::new();
    for v in 0..n {
        match header.encoding {
            Encoding::Ascii => {
                line.clear();
                if reader.read_line(&mut line).map_err(|e| fail(e.to_string()))? == 0 {
                    return Err(fail(format!("unexpected end of file at vertex {v}")));
                }
                let mut fields = line.split_whitespace();
                for (slot, prop) in row.iter_mut().zip(&header.properties) {
                    let tok = fields
                        .next()
                        .ok_or_else(|| fail(format!("vertex {v}: too few values")))?;
                    let value = tok
                        .parse::<f64>()
                        .map_err(|_| fail(format!("vertex {v}: bad number {tok:?}")))?;
                    *slot = if matches!(prop.scalar, Scalar::F32) { value as f32 as f64 } else { value };
                }
            }
            enc => {
                reader
                    .read_exact(&mut record)
                    .map_err(|_| fail(format!("unexpected end of file at vertex {v}")))?;
                let mut off = 0;
                for (slot, prop) in row.iter_mut().zip(&header.properties) {
                    *slot = prop.scalar.decode(&record[off..], enc);
                    off += prop.scalar.size();
                }
            }
        }
        let p = Vector3::new(row[xyz[0]], row[xyz[1]], row[xyz[2]]);
        points.push(p);
        if let (Some(cols), Some(idx)) = (colors.as_mut(), rgb) {
            let c = Vector3::from_fn(|i, _| {
                let prop = &header.properties[idx[i]];
                let raw = row[idx[i]];
                if prop.scalar.is_integer() { raw / 255.0 } else { raw }
            });
            cols.push(c);
        }
        if let (Some(ns), Some(idx)) = (normals.as_mut(), nxyz) {
            let nv = Vector3::new(row[idx[0]], row[idx[1]], row[idx[2]]);
            let len = nv.norm();
            // float32 storage leaves normals slightly off unit length.
            ns.push(if len > 0.0 { nv / len } else { nv });
        }
    }

    PointCloud::from_parts(points, colors, normals).map_err(|e| fail(e.to_string()))
}

fn read_header<R: BufRead>(reader: &mut R) -> std::result::Result<Header, String> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> std::result::Result<String, String> {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| e.to_string())?;
        if read == 0 {
            return Err("unexpected end of header".into());
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    };

    if next_line(reader)?.trim() != "ply" {
        return Err("missing `ply` magic".into());
    }
    let mut encoding = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut in_vertex = false;
    let mut seen_vertex = false;
    loop {
        let l = next_line(reader)?;
        let mut words = l.split_whitespace();
        match words.next() {
            Some("format") => {
                encoding = Some(match words.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::Little,
                    Some("binary_big_endian") => Encoding::Big,
                    other => return Err(format!("unsupported format {other:?}")),
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words.next().unwrap_or_default();
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| format!("bad element line {l:?}"))?;
                if name == "vertex" {
                    if seen_vertex {
                        return Err("duplicate vertex element".into());
                    }
                    if vertex_count.is_none() && !properties.is_empty() {
                        return Err("vertex element must come first".into());
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                    seen_vertex = true;
                } else {
                    if !seen_vertex {
                        return Err(format!("element {name:?} precedes vertex"));
                    }
                    in_vertex = false;
                }
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                let ty = words.next().unwrap_or_default();
                if ty == "list" {
                    return Err("list properties on vertex are not supported".into());
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| format!("unknown property type {ty:?}"))?;
                let name = words.next().ok_or_else(|| format!("bad property line {l:?}"))?;
                properties.push(Property { name: name.to_string(), scalar });
            }
            Some("end_header") => break,
            Some(other) => return Err(format!("unexpected header keyword {other:?}")),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or("missing format line")?,
        vertex_count: vertex_count.ok_or("missing vertex element")?,
        properties,
    })
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(&mut w, cloud, format)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_ply_to<W: Write>(w: &mut W, cloud: &PointCloud, format: PlyFormat) -> std::io::Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if cloud.has_colors() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if cloud.has_normals() {
        writeln!(w, "property float nx\nproperty float ny\nproperty float nz")?;
    }
    writeln!(w, "end_header")?;

    let colors = cloud.colors();
    let normals = cloud.normals();
    for (i, p) in cloud.points().iter().enumerate() {
        let c = colors.map(|c| c[i].map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        let n = normals.map(|n| n[i]);
        match format {
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
                if let Some(c) = c {
                    write!(w, " {} {} {}", c.x, c.y, c.z)?;
                }
                if let Some(n) = n {
                    write!(w, " {} {} {}", n.x as f32, n.y as f32, n.z as f32)?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p.iter() {
                    w.write_all(&(*v as f32).to_le_bytes())?;
                }
                if let Some(c) = c {
                    w.write_all(&[c.x, c.y, c.z])?;
                }
                if let Some(n) = n {
                    for v in n.iter() {
                        w.write_all(&(*v as f32).to_le_bytes())?;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample() -> PointCloud {
        PointCloud::from_parts(
            vec![Vector3::new(0.1, -0.25, 3.0), Vector3::new(1e-3, 2.0, -0.5)],
            Some(vec![Vector3::new(1.0, 0.0, 0.5), Vector3::new(0.2, 0.4, 0.6)]),
            Some(vec![Vector3::z(), Vector3::new(0.6, 0.8, 0.0)]),
        )
        .unwrap()
    }

    fn roundtrip(cloud: &PointCloud, format: PlyFormat) -> PointCloud {
        let mut buf = Vec::new();
        write_ply_to(&mut buf, cloud, format).unwrap();
        read_ply_from(Cursor::new(buf), Path::new("mem")).unwrap()
    }

    #[test]
    fn binary_roundtrip_is_float32_exact() {
        let c = sample();
        for format in [PlyFormat::BinaryLittleEndian, PlyFormat::Ascii] {
            let back = roundtrip(&c, format);
            assert_eq!(back.len(), 2);
            for (a, b) in c.points().iter().zip(back.points()) {
                assert_eq!(a.map(|v| v as f32 as f64), *b);
            }
            for (a, b) in c.colors().unwrap().iter().zip(back.colors().unwrap()) {
                assert!((a - b).abs().max() <= 0.5 / 255.0 + 1e-12);
            }
            for (a, b) in c.normals().unwrap().iter().zip(back.normals().unwrap()) {
                assert!((a - b).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn reads_foreign_layouts() {
        let text = "ply\nformat ascii 1.0\ncomment made elsewhere\nelement vertex 2\n\
                    property double x\nproperty double y\nproperty double z\nproperty float intensity\n\
                    element face 0\nproperty list uchar int vertex_indices\nend_header\n\
                    1 2 3 0.5\n4 5 6 0.1\n";
        let c = read_ply_from(Cursor::new(text), Path::new("mem")).unwrap();
        assert_eq!(c.points()[1], Vector3::new(4.0, 5.0, 6.0));
        assert!(!c.has_colors() && !c.has_normals());
    }

    #[test]
    fn rejects_corrupt_input() {
        let bad = [
            "plx\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n",
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 nope\n",
            "ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n\x00\x00",
        ];
        for text in bad {
            let err = read_ply_from(Cursor::new(text.as_bytes()), Path::new("bad.ply")).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{text:?} -> {err}");
        }
    }
}
