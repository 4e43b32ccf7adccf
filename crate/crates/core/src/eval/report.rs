use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Provenance of a run: enough to replay it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub master_seed: u64,
    /// Input path -> SHA-256 of its bytes.
    pub input_hashes: BTreeMap<String, String>,
    pub catalog_version: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = std::fs::File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, headers: &[&str]) -> Self {
        Table {
            title: title.to_string(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("### {}\n\n| {} |\n|", self.title, self.headers.join(" | "));
        for _ in &self.headers {
            s.push_str("---|");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "| {} |", r.join(" | "));
        }
        s
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }
}

/// Formats a score the way tables show it.
pub fn fmt_score(v: f64) -> String {
    format!("{v:.4}")
}

pub fn fmt_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

/// A report body plus its manifest. The body is everything deterministic;
/// the manifest carries timestamps and is excluded from the body hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub manifest: RunManifest,
    pub body_sha256: String,
    pub body: serde_json::Value,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl Report {
    pub fn new<T: Serialize>(kind: &str, manifest: RunManifest, body: &T, tables: Vec<Table>) -> Result<Self> {
        let body = serde_json::to_value(body)?;
        let body_sha256 = sha256_hex(serde_json::to_string(&body)?.as_bytes());
        Ok(Report {
            kind: kind.to_string(),
            manifest,
            body_sha256,
            body,
            tables,
        })
    }

    pub fn to_markdown(&self) -> String {
        let m = &self.manifest;
        let mut s = format!("# {} report\n\n", self.kind);
        let _ = writeln!(s, "- seed: {}", m.master_seed);
        let _ = writeln!(s, "- catalog: {}", m.catalog_version);
        let _ = writeln!(s, "- tool: {}", m.tool_version);
        let _ = writeln!(s, "- command: `{}`", m.command_line.join(" "));
        for (path, hash) in &m.input_hashes {
            let _ = writeln!(s, "- input {path}: {hash}");
        }
        let _ = writeln!(s, "- body sha256: {}\n", self.body_sha256);
        for t in &self.tables {
            s.push_str(&t.to_markdown());
            s.push('\n');
        }
        s
    }

    /// Writes `<prefix>.json`, `<prefix>.md` and one CSV per table
    /// (`<prefix>.csv` for the first, `<prefix>.<n>.csv` after that).
    pub fn write(&self, prefix: &Path) -> Result<Vec<PathBuf>> {
        let with_ext = |ext: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        let mut written = Vec::new();
        let json = with_ext(".json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&json, text)?;
        written.push(json);
        let md = with_ext(".md");
        std::fs::write(&md, self.to_markdown())?;
        written.push(md);
        for (i, t) in self.tables.iter().enumerate() {
            let p = if i == 0 {
                with_ext(".csv")
            } else {
                with_ext(&format!(".{i}.csv"))
            };
            std::fs::write(&p, t.to_csv()?)?;
            written.push(p);
        }
        Ok(written)
    }
}
