//! File emission. Every file opens with a provenance header and reals are
//! printed with 17 significant digits, so equal bytes mean equal numbers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use siv_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

#[inline]
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with a provenance line, a column line, then rows.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(prov: &Provenance, columns: &[&str]) -> Self {
        let mut buf = prov.header();
        buf.push_str(&columns.join(","));
        buf.push('\n');
        Self { buf }
    }

    /// Rows only, for fragments that get concatenated under one header.
    pub fn bare() -> Self {
        Self { buf: String::new() }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        for (k, c) in cells.iter().enumerate() {
            if k > 0 {
                self.buf.push(',');
            }
            match c {
                Cell::R(x) => self.buf.push_str(&real(*x)),
                Cell::U(n) => write!(self.buf, "{n}").unwrap(),
                Cell::S(s) => self.buf.push_str(s),
            }
        }
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

pub enum Cell<'a> {
    R(f64),
    U(u64),
    S(&'a str),
}

/// JSON document with the provenance embedded as a top-level field.
pub fn json_bytes<T: Serialize>(prov: &Provenance, body: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(body).map_err(|e| Error::Numeric(format!("serialize: {e}")))?;
    let tag = serde_json::json!({ "config_hash": prov.config_hash, "seed": prov.seed });
    match &mut v {
        Value::Object(m) => {
            m.insert("provenance".into(), tag);
        }
        _ => v = serde_json::json!({ "provenance": tag, "data": v }),
    }
    let mut out = serde_json::to_vec_pretty(&v).map_err(|e| Error::Numeric(format!("serialize: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| Error::invalid(format!("output_dir: cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.root.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::invalid(format!("output: cannot write {}: {e}", p.display())))?;
        self.written.push(p);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
