//! CSV tables and the binary array layout.
//!
//! CSV files start with `# key=value` lines (manifest hash, command and
//! physical parameters), then one header row, then data. Floats use 17
//! significant digits so values round-trip exactly.
//!
//! Binary files hold one or more blocks, each little-endian:
//!
//! | field      | type        |
//! |------------|-------------|
//! | magic      | `b"SSNB"`   |
//! | version    | u32 = 1     |
//! | run hash   | 32 bytes    |
//! | kind       | u32         |
//! | grid_n     | u64         |
//! | grid_h     | f64         |
//! | dt         | f64         |
//! | seed       | u64         |
//! | stream     | u64         |
//! | t          | f64         |
//! | aux_len    | u64         |
//! | rows, cols | u64, u64    |
//! | aux        | aux_len f64 |
//! | payload    | rows·cols f64, row-major |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::LabError;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(n) => n.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

/// Ordered `# key=value` lines.
pub type Header = Vec<(String, String)>;

pub fn write_csv(path: &Path, header: &Header, columns: &[&str], rows: &[Vec<Cell>]) -> Result<(), LabError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in header {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(LabError::Config(format!("row has {} cells for {} columns", row.len(), columns.len())));
        }
        let line: Vec<String> = row.iter().map(Cell::render).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        self.column(name)?.into_iter().map(|s| s.parse().ok()).collect()
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable, LabError> {
    let r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    let mut columns = None;
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        if let Some(meta) = line.strip_prefix("# ") {
            if let Some((k, v)) = meta.split_once('=') {
                header.push((k.to_string(), v.to_string()));
            }
        } else if columns.is_none() {
            columns = Some(line.split(',').map(str::to_string).collect());
        } else if !line.is_empty() {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    let columns = columns.ok_or_else(|| LabError::Config(format!("{}: no header row", path.display())))?;
    Ok(CsvTable { header, columns, rows })
}

pub const MAGIC: &[u8; 4] = b"SSNB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum BlockKind {
    /// Noise realization: rows = steps, cols = points, aux = radii.
    Noise = 1,
    /// Radial state u = rψ: one row of interleaved (re, im).
    State = 2,
    /// Density matrix rows flattened with interleaved (re, im); aux = radii.
    Density = 3,
}

impl BlockKind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(BlockKind::Noise),
            2 => Some(BlockKind::State),
            3 => Some(BlockKind::Density),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    /// Input hash of the run that wrote the block.
    pub run_hash: [u8; 32],
    pub grid_n: u64,
    pub grid_h: f64,
    pub dt: f64,
    pub seed: u64,
    pub stream: u64,
    pub t: f64,
    pub rows: u64,
    pub cols: u64,
    pub aux: Vec<f64>,
    pub data: Vec<f64>,
}

impl Block {
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), LabError> {
        if self.data.len() as u64 != self.rows * self.cols {
            return Err(LabError::Config("block payload does not match rows × cols".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.run_hash)?;
        w.write_all(&(self.kind as u32).to_le_bytes())?;
        w.write_all(&self.grid_n.to_le_bytes())?;
        w.write_all(&self.grid_h.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.stream.to_le_bytes())?;
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&(self.aux.len() as u64).to_le_bytes())?;
        w.write_all(&self.rows.to_le_bytes())?;
        w.write_all(&self.cols.to_le_bytes())?;
        for x in self.aux.iter().chain(&self.data) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read the next block, or `None` at a clean end of input.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Block>, LabError> {
        let mut magic = [0u8; 4];
        match r.read_exact(&mut magic) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        if &magic != MAGIC {
            return Err(LabError::Config("not a stochsn binary block".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(LabError::Config(format!("unsupported block version {version}")));
        }
        let mut run_hash = [0u8; 32];
        r.read_exact(&mut run_hash)?;
        let kind = BlockKind::from_u32(read_u32(r)?).ok_or_else(|| LabError::Config("unknown block kind".into()))?;
        let grid_n = read_u64(r)?;
        let grid_h = read_f64(r)?;
        let dt = read_f64(r)?;
        let seed = read_u64(r)?;
        let stream = read_u64(r)?;
        let t = read_f64(r)?;
        let aux_len = read_u64(r)?;
        let rows = read_u64(r)?;
        let cols = read_u64(r)?;
        let aux = (0..aux_len).map(|_| read_f64(r)).collect::<Result<_, _>>()?;
        let data = (0..rows * cols).map(|_| read_f64(r)).collect::<Result<_, _>>()?;
        Ok(Some(Block { kind, run_hash, grid_n, grid_h, dt, seed, stream, t, rows, cols, aux, data }))
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_blocks(path: &Path, blocks: &[Block]) -> Result<(), LabError> {
    let mut w = BufWriter::new(File::create(path)?);
    for b in blocks {
        b.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_blocks(path: &Path) -> Result<Vec<Block>, LabError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(b) = Block::read_from(&mut r)? {
        out.push(b);
    }
    Ok(out)
}
