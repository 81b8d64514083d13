//! OBJ and PLY (ASCII / binary little-endian) reading and writing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{MotionSequence, TriMesh};
use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let (vertices, faces) = match extension(path).as_str() {
        "obj" => read_obj(&mut reader, path)?,
        "ply" => read_ply(&mut reader, path)?,
        other => {
            return Err(Error::validation(format!(
                "{}: unsupported mesh extension `{other}` (expected obj or ply)",
                path.display()
            )))
        }
    };
    let name = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned);
    let mesh = TriMesh::new(vertices, faces).map_err(|e| match e {
        Error::Validation(msg) => Error::validation(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok(match name {
        Some(n) => mesh.with_name(n),
        None => mesh,
    })
}

/// Writes OBJ for `.obj` paths and binary little-endian PLY for `.ply` paths.
pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "obj" => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            write_obj(mesh, &mut w).map_err(|e| Error::io(path, e))
        }
        "ply" => save_ply(mesh, path, PlyEncoding::BinaryLittleEndian),
        other => Err(Error::validation(format!(
            "{}: unsupported mesh extension `{other}` (expected obj or ply)",
            path.display()
        ))),
    }
}

pub fn save_ply(mesh: &TriMesh, path: impl AsRef<Path>, encoding: PlyEncoding) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(mesh, &mut w, encoding).map_err(|e| Error::io(path, e))
}

fn write_obj(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    if let Some(name) = mesh.name() {
        writeln!(w, "o {name}")?;
    }
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()
}

fn write_ply(mesh: &TriMesh, w: &mut impl Write, encoding: PlyEncoding) -> std::io::Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    writeln!(w, "element vertex {}", mesh.num_vertices())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property double {c}")?;
    }
    writeln!(w, "element face {}", mesh.num_faces())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    match encoding {
        PlyEncoding::Ascii => {
            for v in mesh.vertices() {
                writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
            }
            for f in mesh.faces() {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for v in mesh.vertices() {
                for &c in v {
                    w.write_f64::<LittleEndian>(c)?;
                }
            }
            for f in mesh.faces() {
                w.write_u8(3)?;
                for &i in f {
                    w.write_i32::<LittleEndian>(i as i32)?;
                }
            }
        }
    }
    w.flush()
}

fn format_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_owned(),
        location,
        message: message.into(),
    }
}

type Parsed = (Vec<Vec3>, Vec<[usize; 3]>);

fn read_obj(reader: &mut impl BufRead, path: &Path) -> Result<Parsed> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let loc = || format!("line {}", lineno + 1);
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| format_err(path, loc(), "vertex needs 3 coordinates"))?;
                    *c = tok.parse().map_err(|_| {
                        format_err(path, loc(), format!("bad coordinate `{tok}`"))
                    })?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let idx: Vec<&str> = tokens.collect();
                if idx.len() != 3 {
                    return Err(format_err(
                        path,
                        loc(),
                        format!("only triangles are supported, face has {} vertices", idx.len()),
                    ));
                }
                let mut f = [0usize; 3];
                for (slot, tok) in f.iter_mut().zip(idx) {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| {
                        format_err(path, loc(), format!("bad face index `{tok}`"))
                    })?;
                    *slot = if i > 0 {
                        (i - 1) as usize
                    } else if i < 0 {
                        let r = vertices.len() as i64 + i;
                        if r < 0 {
                            return Err(format_err(
                                path,
                                loc(),
                                format!("relative face index {i} before any vertex"),
                            ));
                        }
                        r as usize
                    } else {
                        return Err(format_err(
                            path,
                            loc(),
                            "face index 0 is invalid (OBJ indices are 1-based)",
                        ));
                    };
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[derive(Clone, Copy, Debug)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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

    fn read_le(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Wraps a reader to track the byte offset for error messages.
struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

fn read_ply(reader: &mut impl BufRead, path: &Path) -> Result<Parsed> {
    let mut header_line = 0usize;
    let mut header_bytes = 0u64;
    let mut next_line = |reader: &mut dyn BufRead| -> Result<String> {
        let mut s = String::new();
        let n = reader.read_line(&mut s).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(format_err(
                path,
                format!("line {}", header_line + 1),
                "unexpected end of header",
            ));
        }
        header_line += 1;
        header_bytes += n as u64;
        Ok(s.trim_end().to_owned())
    };

    if next_line(reader)? != "ply" {
        return Err(format_err(path, "line 1".into(), "missing `ply` magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_no = 1;
    loop {
        let line = next_line(reader)?;
        line_no += 1;
        let loc = format!("line {line_no}");
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => {
                encoding = Some(PlyEncoding::BinaryLittleEndian)
            }
            ["format", other, ..] => {
                return Err(format_err(path, loc, format!("unsupported PLY format `{other}`")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| format_err(path, loc.clone(), "bad element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", ct, it, name] => {
                let (ct, it) = match (Scalar::parse(ct), Scalar::parse(it)) {
                    (Some(c), Some(i)) => (c, i),
                    _ => return Err(format_err(path, loc, "bad list property types")),
                };
                elements
                    .last_mut()
                    .ok_or_else(|| format_err(path, loc.clone(), "property before element"))?
                    .props
                    .push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| format_err(path, loc.clone(), format!("bad type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| format_err(path, loc.clone(), "property before element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(format_err(path, loc, format!("unrecognized header line `{line}`"))),
        }
    }
    let encoding =
        encoding.ok_or_else(|| format_err(path, "header".into(), "missing format line"))?;

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    match encoding {
        PlyEncoding::Ascii => {
            let mut lines = reader.lines();
            let mut line_no = header_line;
            for el in &elements {
                for _ in 0..el.count {
                    line_no += 1;
                    let loc = format!("line {line_no}");
                    let line = lines
                        .next()
                        .ok_or_else(|| format_err(path, loc.clone(), "unexpected end of file"))?
                        .map_err(|e| Error::io(path, e))?;
                    let mut toks = line.split_whitespace().map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| format_err(path, loc.clone(), format!("bad number `{t}`")))
                    });
                    let mut next = || {
                        toks.next().unwrap_or_else(|| {
                            Err(format_err(path, loc.clone(), "too few values"))
                        })
                    };
                    let rec = read_record(el, &mut next)?;
                    store_record(el, rec, &mut vertices, &mut faces, path, &loc)?;
                }
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut r = Counting {
                inner: reader,
                offset: header_bytes,
            };
            for el in &elements {
                for _ in 0..el.count {
                    let offset = r.offset;
                    let loc = format!("byte offset {offset}");
                    let rec = {
                        let mut next_scalar = |ty: Scalar| {
                            ty.read_le(&mut r).map_err(|_| {
                                format_err(path, loc.clone(), "unexpected end of binary data")
                            })
                        };
                        read_binary_record(el, &mut next_scalar)?
                    };
                    store_record(el, rec, &mut vertices, &mut faces, path, &loc)?;
                }
            }
        }
    }
    Ok((vertices, faces))
}

/// One decoded element record: scalar properties in order, then the list (if any).
struct Record {
    scalars: Vec<(String, f64)>,
    list: Option<(String, Vec<f64>)>,
}

fn read_record(el: &Element, next: &mut dyn FnMut() -> Result<f64>) -> Result<Record> {
    let mut rec = Record {
        scalars: Vec::new(),
        list: None,
    };
    for p in &el.props {
        match p {
            Property::Scalar(name, _) => rec.scalars.push((name.clone(), next()?)),
            Property::List(name, _, _) => {
                let n = next()? as usize;
                let items = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
                rec.list = Some((name.clone(), items));
            }
        }
    }
    Ok(rec)
}

fn read_binary_record(
    el: &Element,
    next: &mut dyn FnMut(Scalar) -> Result<f64>,
) -> Result<Record> {
    let mut rec = Record {
        scalars: Vec::new(),
        list: None,
    };
    for p in &el.props {
        match p {
            Property::Scalar(name, ty) => rec.scalars.push((name.clone(), next(*ty)?)),
            Property::List(name, ct, it) => {
                let n = next(*ct)? as usize;
                let items = (0..n).map(|_| next(*it)).collect::<Result<Vec<_>>>()?;
                rec.list = Some((name.clone(), items));
            }
        }
    }
    Ok(rec)
}

fn store_record(
    el: &Element,
    rec: Record,
    vertices: &mut Vec<Vec3>,
    faces: &mut Vec<[usize; 3]>,
    path: &Path,
    loc: &str,
) -> Result<()> {
    match el.name.as_str() {
        "vertex" => {
            let mut p = [f64::NAN; 3];
            for (name, v) in rec.scalars {
                match name.as_str() {
                    "x" => p[0] = v,
                    "y" => p[1] = v,
                    "z" => p[2] = v,
                    _ => {}
                }
            }
            if p.iter().any(|c| c.is_nan()) {
                return Err(format_err(path, loc.into(), "vertex lacks x/y/z"));
            }
            vertices.push(p);
        }
        "face" => {
            let (_, items) = rec
                .list
                .ok_or_else(|| format_err(path, loc.into(), "face element without index list"))?;
            if items.len() != 3 {
                return Err(format_err(
                    path,
                    loc.into(),
                    format!("only triangles are supported, face has {} vertices", items.len()),
                ));
            }
            let mut f = [0usize; 3];
            for (slot, &i) in f.iter_mut().zip(&items) {
                if i < 0.0 {
                    return Err(format_err(path, loc.into(), "negative face index"));
                }
                *slot = i as usize;
            }
            faces.push(f);
        }
        _ => {}
    }
    Ok(())
}

/// File name of frame `t` inside a sequence directory.
pub fn frame_file_name(t: usize, extension: &str) -> String {
    format!("frame_{t:04}.{extension}")
}

/// Loads every `*.obj` / `*.ply` file of a directory in lexicographic order.
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<MotionSequence> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if matches!(extension(&path).as_str(), "obj" | "ply") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::validation(format!(
            "{}: no .obj or .ply frames found",
            dir.display()
        )));
    }
    paths.sort();
    MotionSequence::new(paths.iter().map(load_mesh).collect::<Result<_>>()?)
}

/// Writes `frame_0000.<ext>`, `frame_0001.<ext>`, ... into `dir`, creating it if needed.
pub fn save_sequence(seq: &MotionSequence, dir: impl AsRef<Path>, extension: &str) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, f) in seq.frames.iter().enumerate() {
        save_mesh(f, dir.join(frame_file_name(t, extension)))?;
    }
    Ok(())
}
