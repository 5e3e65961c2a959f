//! On-disk lattice states.
//!
//! Layout: a magic line `GLSTATE <version>`, a line `header_bytes=<count>`, then exactly
//! `count` bytes of UTF-8 `key=value` lines, then the arrays named in `arrays=` as
//! little-endian `f64`, each `n1 * n2` values in grid order (`t1` index fastest).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{GaugePerturbation, GridSpec, QuasiPeriodicField, VectorField};
use crate::gauge::RawLatticeState;
use crate::lattice::LatticeShape;

pub const MAGIC: &str = "GLSTATE";
pub const VERSION: u32 = 1;

/// Keys every header carries; anything else is kept as provenance.
const CORE_KEYS: [&str; 8] = ["tau_re", "tau_im", "n", "kappa", "lambda", "n1", "n2", "arrays"];

#[derive(Clone, Debug, PartialEq)]
pub struct StateFile {
    pub version: u32,
    pub tau: Complex64,
    pub n: u32,
    pub kappa: f64,
    pub lambda: f64,
    pub n1: usize,
    pub n2: usize,
    /// Named arrays in file order: `psi_re`, `psi_im`, `h`, and optionally `A1`, `A2`.
    pub arrays: Vec<(String, Vec<f64>)>,
    /// Free-form `key=value` metadata (command, parameters, residuals).
    pub provenance: BTreeMap<String, String>,
}

impl StateFile {
    fn empty(grid: &GridSpec, kappa: f64, lambda: f64) -> Self {
        Self {
            version: VERSION,
            tau: grid.shape().tau(),
            n: grid.n(),
            kappa,
            lambda,
            n1: grid.n1(),
            n2: grid.n2(),
            arrays: Vec::new(),
            provenance: BTreeMap::new(),
        }
    }

    /// Normal-form state `(psi, A0 + curl* h)`.
    pub fn from_normal_form(psi: &QuasiPeriodicField, h: &GaugePerturbation, kappa: f64, lambda: f64) -> Result<Self> {
        psi.grid().check_same(h.grid())?;
        let mut f = Self::empty(psi.grid(), kappa, lambda);
        f.arrays.push(("psi_re".into(), psi.values().iter().map(|v| v.re).collect()));
        f.arrays.push(("psi_im".into(), psi.values().iter().map(|v| v.im).collect()));
        f.arrays.push(("h".into(), h.stream().to_vec()));
        Ok(f)
    }

    /// Raw state with the full vector potential stored as `A1`, `A2`.
    pub fn from_raw(state: &RawLatticeState, kappa: f64, lambda: f64) -> Self {
        let mut f = Self::empty(state.grid(), kappa, lambda);
        f.arrays.push(("psi_re".into(), state.psi.iter().map(|v| v.re).collect()));
        f.arrays.push(("psi_im".into(), state.psi.iter().map(|v| v.im).collect()));
        f.arrays.push(("A1".into(), state.a.x.clone()));
        f.arrays.push(("A2".into(), state.a.y.clone()));
        f
    }

    pub fn with_provenance(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.insert(key.to_string(), value.to_string());
        self
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let shape = LatticeShape::new(self.tau)?;
        if (shape.tau() - self.tau).norm() > 1e-12 {
            return Err(Error::Format(format!("tau {} is not in normalized form", self.tau)));
        }
        GridSpec::new(shape, self.n, self.n1, self.n2)
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_slice())
    }

    fn require(&self, name: &str) -> Result<&[f64]> {
        self.array(name).ok_or_else(|| Error::Format(format!("missing array {name}")))
    }

    pub fn psi(&self) -> Result<QuasiPeriodicField> {
        let (re, im) = (self.require("psi_re")?, self.require("psi_im")?);
        let values = re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        QuasiPeriodicField::from_values(self.grid()?, values)
    }

    /// `(psi, h)` of a normal-form file.
    pub fn normal_form(&self) -> Result<(QuasiPeriodicField, GaugePerturbation)> {
        let psi = self.psi()?;
        let h = GaugePerturbation::from_stream(*psi.grid(), self.require("h")?.to_vec())?;
        Ok((psi, h))
    }

    /// Raw state: full `A` from `A1`, `A2` when present, otherwise from `h`.
    pub fn raw_state(&self) -> Result<RawLatticeState> {
        match (self.array("A1"), self.array("A2")) {
            (Some(a1), Some(a2)) => {
                let psi = self.psi()?;
                let a = VectorField::from_components(*psi.grid(), a1.to_vec(), a2.to_vec())?;
                RawLatticeState::new(*psi.grid(), psi.into_values(), a)
            }
            (None, None) => {
                let (psi, h) = self.normal_form()?;
                RawLatticeState::from_normal_form(&psi, &h)
            }
            _ => Err(Error::Format("A1 and A2 must appear together".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let mut line = |k: &str, v: String| {
            header.push_str(k);
            header.push('=');
            header.push_str(&v);
            header.push('\n');
        };
        line("tau_re", format!("{:?}", self.tau.re));
        line("tau_im", format!("{:?}", self.tau.im));
        line("n", self.n.to_string());
        line("kappa", format!("{:?}", self.kappa));
        line("lambda", format!("{:?}", self.lambda));
        line("n1", self.n1.to_string());
        line("n2", self.n2.to_string());
        line("arrays", self.arrays.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(","));
        for (k, v) in &self.provenance {
            line(k, v.replace('\n', " "));
        }
        let mut out = format!("{MAGIC} {}\nheader_bytes={}\n", self.version, header.len()).into_bytes();
        out.extend_from_slice(header.as_bytes());
        for (_, values) in &self.arrays {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_line = |what: &str| -> Result<String> {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format(format!("truncated before {what}")))?;
            let s = std::str::from_utf8(&bytes[pos..pos + end])
                .map_err(|_| Error::Format(format!("{what} is not UTF-8")))?
                .to_string();
            pos += end + 1;
            Ok(s)
        };
        let magic = next_line("magic line")?;
        let version = match magic.split_once(' ') {
            Some((m, v)) if m == MAGIC => v.parse::<u32>().map_err(|_| Error::Format(format!("bad version {v:?}")))?,
            _ => return Err(Error::Format(format!("missing {MAGIC} magic"))),
        };
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let len_line = next_line("header length")?;
        let header_len: usize = len_line
            .strip_prefix("header_bytes=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad header length line {len_line:?}")))?;
        if pos + header_len > bytes.len() {
            return Err(Error::Format("header longer than file".into()));
        }
        let header = std::str::from_utf8(&bytes[pos..pos + header_len])
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let body = &bytes[pos + header_len..];
        let mut kv = BTreeMap::new();
        for l in header.lines() {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Format(format!("header line {l:?} lacks '='")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<T> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("missing header key {k}")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for {k}")))
        }
        let (n1, n2): (usize, usize) = (get(&kv, "n1")?, get(&kv, "n2")?);
        let names: String = get(&kv, "arrays")?;
        let names: Vec<&str> = names.split(',').filter(|s| !s.is_empty()).collect();
        let count = n1
            .checked_mul(n2)
            .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
        if body.len() != names.len() * count * 8 {
            return Err(Error::Format(format!(
                "expected {} array bytes for {} arrays of {n1}x{n2}, found {}",
                names.len() * count * 8,
                names.len(),
                body.len()
            )));
        }
        let arrays = names
            .iter()
            .enumerate()
            .map(|(a, name)| {
                let chunk = &body[a * count * 8..(a + 1) * count * 8];
                let values = chunk
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                (name.to_string(), values)
            })
            .collect();
        let provenance = kv
            .iter()
            .filter(|(k, _)| !CORE_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Self {
            version,
            tau: Complex64::new(get(&kv, "tau_re")?, get(&kv, "tau_im")?),
            n: get(&kv, "n")?,
            kappa: get(&kv, "kappa")?,
            lambda: get(&kv, "lambda")?,
            n1,
            n2,
            arrays,
            provenance,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theta::ThetaState;

    fn sample() -> StateFile {
        let shape = LatticeShape::triangular();
        let grid = GridSpec::uniform(shape, 1, 8).unwrap();
        let psi = ThetaState::new(shape, 1).unwrap().sample(&grid).unwrap();
        let h = GaugePerturbation::from_stream(grid, (0..grid.len()).map(|p| (p as f64 * 0.37).sin()).collect()).unwrap();
        StateFile::from_normal_form(&psi, &h, 1.2, 1.01)
            .unwrap()
            .with_provenance("command", "branch")
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample();
        let g = StateFile::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.provenance.get("command").map(String::as_str), Some("branch"));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(StateFile::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(StateFile::from_bytes(&bad), Err(Error::Format(_))));
        // Header dimensions that disagree with the array payload.
        let at = bytes.windows(4).position(|w| w == b"n1=8").unwrap();
        let mut resized = bytes.clone();
        resized[at + 3] = b'9';
        assert!(matches!(StateFile::from_bytes(&resized), Err(Error::Format(_))));
    }
}
