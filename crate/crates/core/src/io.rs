//! Strand, parameter, log and trajectory file formats.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alm::{AlmReport, IterationLog};
use crate::error::{Error, Result};
use crate::sim::Trajectory;
use crate::strand::{RestParams, StrandConfig, StrandState, Vec3};

/// A coefficient given either once for the whole strand or per element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coeff {
    Scalar(f64),
    PerElement(Vec<f64>),
}

impl Coeff {
    fn broadcast(&self, len: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            Coeff::Scalar(v) => Ok(vec![*v; len]),
            Coeff::PerElement(v) if v.len() == len => Ok(v.clone()),
            Coeff::PerElement(v) => Err(Error::Parse(format!(
                "{what} has {} entries, expected {len}",
                v.len()
            ))),
        }
    }
}

fn default_radius() -> f64 {
    1e-3
}
fn default_density() -> f64 {
    1.0
}
fn default_coeff() -> Coeff {
    Coeff::Scalar(1e9)
}
fn default_gravity() -> [f64; 3] {
    [0.0, -9.81, 0.0]
}
fn default_dt() -> f64 {
    1.0 / 240.0
}

/// On-disk strand description. Missing `thetas` default to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrandFile {
    pub vertices: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_coeff")]
    pub c_st: Coeff,
    #[serde(default = "default_coeff")]
    pub c_be: Coeff,
    #[serde(default = "default_coeff")]
    pub c_tw: Coeff,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// First-edge reference director; chosen automatically when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d1_root: Option<[f64; 3]>,
}

impl StrandFile {
    pub fn from_parts(config: &StrandConfig, state: &StrandState) -> Self {
        Self {
            vertices: state.x.iter().map(|v| (*v).into()).collect(),
            thetas: Some(state.theta.clone()),
            radius: config.radius,
            density: config.density,
            c_st: Coeff::PerElement(config.c_st.clone()),
            c_be: Coeff::PerElement(config.c_be.clone()),
            c_tw: Coeff::PerElement(config.c_tw.clone()),
            gravity: config.gravity,
            dt: config.dt,
            d1_root: state.d1.first().map(|d| (*d).into()),
        }
    }

    pub fn into_parts(self) -> Result<(StrandConfig, StrandState)> {
        let n = self.vertices.len();
        if n < 4 {
            return Err(Error::Parse(format!("strand needs at least 4 vertices, got {n}")));
        }
        let config = StrandConfig {
            n,
            radius: self.radius,
            density: self.density,
            c_st: self.c_st.broadcast(n - 1, "c_st")?,
            c_be: self.c_be.broadcast(n, "c_be")?,
            c_tw: self.c_tw.broadcast(n, "c_tw")?,
            gravity: self.gravity,
            dt: self.dt,
        };
        config.validate()?;
        let x: Vec<Vec3> = self.vertices.iter().map(|v| Vec3::from(*v)).collect();
        let theta = self.thetas.unwrap_or_else(|| vec![0.0; n - 1]);
        let state = match self.d1_root {
            Some(d) => StrandState::with_root_director(x, theta, Vec3::from(d))?,
            None => StrandState::new(x, theta)?,
        };
        Ok((config, state))
    }
}

/// Parses a JSON strand file holding one strand object or an array of them.
pub fn read_strands_json<R: Read>(input: R) -> Result<Vec<(StrandConfig, StrandState)>> {
    let value: serde_json::Value = serde_json::from_reader(input)?;
    let files = match value {
        serde_json::Value::Array(_) => serde_json::from_value::<Vec<StrandFile>>(value)?,
        _ => vec![serde_json::from_value::<StrandFile>(value)?],
    };
    files.into_iter().map(StrandFile::into_parts).collect()
}

pub fn write_strands_json<W: Write>(strands: &[(StrandConfig, StrandState)], out: W) -> Result<()> {
    let files: Vec<StrandFile> = strands.iter().map(|(c, s)| StrandFile::from_parts(c, s)).collect();
    if files.len() == 1 {
        serde_json::to_writer_pretty(out, &files[0])?;
    } else {
        serde_json::to_writer_pretty(out, &files)?;
    }
    Ok(())
}

/// Parses headerless or headed `x,y,z` vertex rows; every other material
/// setting comes from `template`.
pub fn read_vertices_csv<R: Read>(input: R, template: &StrandFile) -> Result<(StrandConfig, StrandState)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut vertices = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Parse(format!("row {row}: expected 3 columns, found {}", rec.len())));
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => vertices.push([v[0], v[1], v[2]]),
            Err(_) if row == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {row}: {e}"))),
        }
    }
    StrandFile {
        vertices,
        thetas: None,
        d1_root: None,
        ..template.clone()
    }
    .into_parts()
}

/// Loads a strand file, choosing the parser by extension (`.csv` or JSON).
pub fn load_strands(path: &Path, template: &StrandFile) -> Result<Vec<(StrandConfig, StrandState)>> {
    let file = BufReader::new(File::open(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => Ok(vec![read_vertices_csv(file, template)?]),
        _ => read_strands_json(file),
    }
}

/// Optimized parameters in the two-slot curvature form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub s: f64,
    pub rest_len: Vec<f64>,
    pub rest_curv_2d: Vec<[f64; 2]>,
    pub rest_twist: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AlmReport>,
}

impl ParamsFile {
    pub fn new(rest: &RestParams, report: Option<&AlmReport>) -> Self {
        Self {
            s: rest.s,
            rest_len: rest.rest_len.clone(),
            rest_curv_2d: rest.rest_curv.iter().map(|k| [k[0], k[1]]).collect(),
            rest_twist: rest.rest_twist.clone(),
            alpha: rest.alpha.clone(),
            beta: rest.beta.clone(),
            gamma: rest.gamma.clone(),
            report: report.cloned(),
        }
    }

    /// Rest parameters with both curvature slot pairs set from the stored pair.
    pub fn to_rest(&self, n: usize) -> Result<RestParams> {
        let check = |what: &str, len: usize, expected: usize| {
            if len == expected {
                Ok(())
            } else {
                Err(Error::Parse(format!("{what} has {len} entries, expected {expected}")))
            }
        };
        check("rest_len", self.rest_len.len(), n - 1)?;
        check("alpha", self.alpha.len(), n - 1)?;
        check("rest_curv_2d", self.rest_curv_2d.len(), n)?;
        check("rest_twist", self.rest_twist.len(), n)?;
        check("beta", self.beta.len(), n)?;
        check("gamma", self.gamma.len(), n)?;
        Ok(RestParams {
            rest_len: self.rest_len.clone(),
            rest_curv: self.rest_curv_2d.iter().map(|k| [k[0], k[1], k[0], k[1]]).collect(),
            rest_twist: self.rest_twist.clone(),
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
            s: self.s,
        })
    }
}

pub fn write_params_json<W: Write>(params: &[ParamsFile], out: W) -> Result<()> {
    if params.len() == 1 {
        serde_json::to_writer_pretty(out, &params[0])?;
    } else {
        serde_json::to_writer_pretty(out, params)?;
    }
    Ok(())
}

pub fn read_params_json<R: Read>(input: R) -> Result<Vec<ParamsFile>> {
    let value: serde_json::Value = serde_json::from_reader(input)?;
    Ok(match value {
        serde_json::Value::Array(_) => serde_json::from_value(value)?,
        _ => vec![serde_json::from_value(value)?],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub norm_dp: f64,
    pub norm_c: f64,
    pub mprgp_iters: usize,
    pub wall_ns: u128,
}

impl From<&IterationLog> for ConvergenceRow {
    fn from(l: &IterationLog) -> Self {
        Self {
            k: l.k,
            norm_dp: l.norm_dp,
            norm_c: l.norm_c,
            mprgp_iters: l.mprgp_iters,
            wall_ns: l.wall_ns,
        }
    }
}

pub fn write_convergence_csv<W: Write>(log: &[IterationLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if log.is_empty() {
        w.write_record(["k", "norm_dp", "norm_c", "mprgp_iters", "wall_ns"])?;
    }
    for l in log {
        w.serialize(ConvergenceRow::from(l))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_convergence_csv<R: Read>(input: R) -> Result<Vec<ConvergenceRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Csv,
    Obj,
}

impl std::str::FromStr for TrajectoryFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "obj" => Ok(Self::Obj),
            other => Err(Error::Config(format!("unknown trajectory format '{other}'"))),
        }
    }
}

pub fn frame_file_name(frame: usize) -> String {
    format!("frame_{frame:05}.csv")
}

/// `vertex,x,y,z` rows for one frame.
pub fn write_frame_csv<W: Write>(x: &[Vec3], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vertex", "x", "y", "z"])?;
    for (i, v) in x.iter().enumerate() {
        w.write_record([i.to_string(), v.x.to_string(), v.y.to_string(), v.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frame_csv<R: Read>(input: R) -> Result<Vec<Vec3>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (row, rec) in r.deserialize::<(usize, f64, f64, f64)>().enumerate() {
        let (i, x, y, z) = rec?;
        if i != row {
            return Err(Error::Parse(format!("vertex index {i} at row {row}")));
        }
        out.push(Vec3::new(x, y, z));
    }
    Ok(out)
}

/// Every frame as its own `o` group with one polyline through its vertices.
pub fn write_obj<W: Write>(frames: &[Vec<Vec3>], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let mut base = 1;
    for (f, x) in frames.iter().enumerate() {
        writeln!(w, "o frame_{f:05}")?;
        for v in x {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        write!(w, "l")?;
        for i in 0..x.len() {
            write!(w, " {}", base + i)?;
        }
        writeln!(w)?;
        base += x.len();
    }
    w.flush()?;
    Ok(())
}

pub fn read_obj<R: Read>(input: R) -> Result<Vec<Vec<Vec3>>> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut frames: Vec<Vec<Vec3>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("o") => frames.push(Vec::new()),
            Some("v") => {
                let c: std::result::Result<Vec<f64>, _> = it.map(str::parse).collect();
                let c = c.map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))?;
                let frame = frames
                    .last_mut()
                    .ok_or_else(|| Error::Parse(format!("line {}: vertex before any object", ln + 1)))?;
                if c.len() != 3 {
                    return Err(Error::Parse(format!("line {}: expected 3 coordinates", ln + 1)));
                }
                frame.push(Vec3::new(c[0], c[1], c[2]));
            }
            _ => {}
        }
    }
    Ok(frames)
}

/// Writes the trajectory as per-frame CSVs into `dir` or one OBJ file at `dir/trajectory.obj`.
pub fn write_trajectory(traj: &Trajectory, dir: &Path, format: TrajectoryFormat) -> Result<()> {
    fs::create_dir_all(dir)?;
    match format {
        TrajectoryFormat::Csv => {
            for (f, x) in traj.frames.iter().enumerate() {
                write_frame_csv(x, BufWriter::new(File::create(dir.join(frame_file_name(f)))?))?;
            }
        }
        TrajectoryFormat::Obj => write_obj(&traj.frames, File::create(dir.join("trajectory.obj"))?)?,
    }
    Ok(())
}

/// `frame,time,kinetic` rows.
pub fn write_kinetic_csv<W: Write>(kinetic: &[f64], frame_dt: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "time", "kinetic"])?;
    for (f, k) in kinetic.iter().enumerate() {
        w.write_record([f.to_string(), (f as f64 * frame_dt).to_string(), k.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kinetic_csv<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<(usize, f64, f64)>()
        .map(|rec| rec.map(|(_, _, k)| k).map_err(Error::from))
        .collect()
}

/// Tab-separated table with a header row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(|c| c.to_string()).collect());
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c].as_str()).collect())
    }

    pub fn write_tsv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(input);
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(Error::from))
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }
}
