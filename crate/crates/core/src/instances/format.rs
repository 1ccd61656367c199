//! `.lcp.json` instance files.
//!
//! Floats are written in shortest round-trip form and parsed with full
//! precision, so a save/load cycle is bit-exact. Operators are rebuilt on
//! load: from the recorded geometry when present, otherwise from the dense
//! matrices.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{DenseMatrix, Fidelity, MatVecOperator};

use super::lowfi::{DenseF32, LowFiScheme, RoundedF32};
use super::{GeneratorRecord, LcpInstance};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LowFiRecord {
    /// `None` for `Â = A`.
    scheme: Option<String>,
    params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dense: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    version: u64,
    n: usize,
    b: Vec<f64>,
    #[serde(rename = "dense_A", default, skip_serializing_if = "Option::is_none")]
    dense_a: Option<Vec<Vec<f64>>>,
    lowfi: LowFiRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorRecord>,
    #[serde(rename = "L")]
    lipschitz: Option<f64>,
    mu: Option<f64>,
    cost_ratio: f64,
    seed: u64,
}

fn format_err(path: &str, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        message: message.into(),
    }
}

fn dense_from_rows(rows: &[Vec<f64>], n: usize, path: &str) -> Result<DenseMatrix> {
    if rows.len() != n {
        return Err(format_err(path, format!("expected {n} rows, found {}", rows.len())));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return Err(format_err(&format!("{path}[{i}]"), format!("expected {n} entries")));
    }
    DenseMatrix::from_rows(rows)
}

impl InstanceFile {
    fn from_instance(inst: &LcpInstance) -> Self {
        // `Â = A` needs no separate dense copy
        let dense_low = match inst.lowfi_scheme {
            Some(_) => inst.dense_a_low.as_ref().map(DenseMatrix::to_rows),
            None => None,
        };
        Self {
            version: FORMAT_VERSION,
            n: inst.n(),
            b: inst.b.clone(),
            dense_a: inst.dense_a.as_ref().map(DenseMatrix::to_rows),
            lowfi: LowFiRecord {
                scheme: inst.lowfi_scheme.map(|s| s.to_string()),
                params: inst.lowfi_params.clone(),
                dense: dense_low,
            },
            generator: inst.generator.clone(),
            lipschitz: inst.lipschitz,
            mu: inst.mu,
            cost_ratio: inst.cost_ratio,
            seed: inst.seed,
        }
    }

    fn into_instance(self) -> Result<LcpInstance> {
        let n = self.n;
        if self.b.len() != n {
            return Err(format_err("b", format!("expected {n} entries, found {}", self.b.len())));
        }
        if !(self.cost_ratio >= 1.0) {
            return Err(format_err("cost_ratio", "must be at least 1"));
        }
        let dense_a = self.dense_a.as_deref().map(|r| dense_from_rows(r, n, "dense_A")).transpose()?;
        let geometry = self.generator.as_ref().map(GeneratorRecord::geometry).transpose()?;
        let high = match (&geometry, &dense_a) {
            (Some(g), _) => {
                let op = g.operator()?;
                if op.d().cols() != n {
                    return Err(format_err("generator", format!("geometry yields {} contacts, n = {n}", op.d().cols())));
                }
                MatVecOperator::from_map(op, Fidelity::High)
            }
            (None, Some(a)) => MatVecOperator::from_map(a.clone(), Fidelity::High),
            (None, None) if n == 0 => MatVecOperator::from_map(DenseMatrix::zeros(0), Fidelity::High),
            (None, None) => return Err(format_err("dense_A", "needed when no generator geometry is recorded")),
        };

        let scheme = self
            .lowfi
            .scheme
            .as_deref()
            .map(|s| s.parse::<LowFiScheme>().map_err(|e| format_err("lowfi.scheme", e.to_string())))
            .transpose()?;
        let dense_low = self
            .lowfi
            .dense
            .as_deref()
            .map(|r| dense_from_rows(r, n, "lowfi.dense"))
            .transpose()?;
        let same = || (high.with_fidelity(Fidelity::Low), dense_a.clone());
        let (low, dense_low) = match scheme {
            None => same(),
            Some(LowFiScheme::Perturb { .. } | LowFiScheme::PerturbRelative { .. }) => match dense_low {
                Some(d) => (MatVecOperator::from_map(d.clone(), Fidelity::Low), Some(d)),
                None if self.lowfi.params.get("delta") == Some(&0.0) || n == 0 => same(),
                None => return Err(format_err("lowfi.dense", "perturbed operators must be stored densely")),
            },
            Some(LowFiScheme::Precision32) => match dense_low {
                Some(d) => (MatVecOperator::from_map(DenseF32::from_dense(&d), Fidelity::Low), Some(d)),
                None => (
                    MatVecOperator::from_map(RoundedF32(Arc::clone(high.map())), Fidelity::Low),
                    None,
                ),
            },
            Some(LowFiScheme::Sparsify { cutoff }) => {
                let g = geometry
                    .as_ref()
                    .ok_or_else(|| format_err("generator", "`sparsify` needs the recorded geometry"))?;
                let model = match g.model {
                    super::MobilityModel::RpyLike { eta, cutoff: c0 } if cutoff < c0 => {
                        super::MobilityModel::RpyLike { eta, cutoff }
                    }
                    _ => g.model,
                };
                if model == g.model {
                    same()
                } else {
                    let op = super::ContactGeometry { model, ..g.clone() }.operator()?;
                    (MatVecOperator::from_map(op, Fidelity::Low), dense_low)
                }
            }
        };
        Ok(LcpInstance {
            b: self.b,
            a_high: high,
            a_low: low,
            lowfi_scheme: scheme,
            lowfi_params: self.lowfi.params,
            dense_a,
            dense_a_low: dense_low,
            lipschitz: self.lipschitz,
            mu: self.mu,
            cost_ratio: self.cost_ratio,
            seed: self.seed,
            generator: self.generator,
        })
    }
}

pub fn write_instance<W: Write>(inst: &LcpInstance, writer: W) -> Result<()> {
    let mut w = writer;
    serde_json::to_writer(&mut w, &InstanceFile::from_instance(inst))
        .map_err(|e| format_err(".", e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_instance<R: Read>(reader: R) -> Result<LcpInstance> {
    let value: serde_json::Value =
        serde_json::from_reader(reader).map_err(|e| format_err(".", e.to_string()))?;
    match value.get("version") {
        Some(v) => match v.as_u64() {
            Some(FORMAT_VERSION) => {}
            Some(found) => {
                return Err(Error::Version {
                    found,
                    expected: FORMAT_VERSION,
                })
            }
            None => return Err(format_err("version", "expected an unsigned integer")),
        },
        None => return Err(format_err("version", "missing field `version`")),
    }
    let file: InstanceFile = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        format_err(&path, e.into_inner().to_string())
    })?;
    file.into_instance()
}

pub fn save_instance(inst: &LcpInstance, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_instance(inst, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<LcpInstance> {
    read_instance(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_instance, GeneratorParams, MobilityModel};

    fn round_trip(inst: &LcpInstance) -> LcpInstance {
        let mut buf = Vec::new();
        write_instance(inst, &mut buf).unwrap();
        read_instance(buf.as_slice()).unwrap()
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (seed, scheme, model) in [
            (1, "perturb:0.03", MobilityModel::drag()),
            (2, "precision32", MobilityModel::drag()),
            (3, "sparsify:1", MobilityModel::rpy()),
            (4, "perturb-c:0.05", MobilityModel::rpy()),
        ] {
            let p = GeneratorParams {
                model,
                lowfi: Some(scheme.parse().unwrap()),
                ..GeneratorParams::with_defaults(3)
            };
            let inst = generate_instance(&p, seed).unwrap();
            let back = round_trip(&inst);
            assert_eq!(bits(&back.b), bits(&inst.b));
            assert_eq!(back.dense_a, inst.dense_a);
            assert_eq!(back.dense_a_low, inst.dense_a_low);
            assert_eq!(back.generator, inst.generator);
            assert_eq!(back.lowfi_scheme, inst.lowfi_scheme);
            assert_eq!(back.lowfi_params, inst.lowfi_params);
            assert_eq!(back.lipschitz.map(f64::to_bits), inst.lipschitz.map(f64::to_bits));
            assert_eq!(back.mu.map(f64::to_bits), inst.mu.map(f64::to_bits));
            // the rebuilt operators act identically
            let x: Vec<f64> = (0..inst.n()).map(|k| (k as f64 * 0.7).cos()).collect();
            assert_eq!(bits(&back.a_high.apply(&x).unwrap()), bits(&inst.a_high.apply(&x).unwrap()));
            assert_eq!(bits(&back.a_low.apply(&x).unwrap()), bits(&inst.a_low.apply(&x).unwrap()));
        }
    }

    #[test]
    fn awkward_floats_survive() {
        let vals = [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 5e-324, 1.7976931348623157e308, -0.0, 2.0f64.sqrt()];
        let n = vals.len();
        let a = DenseMatrix::from_diagonal(&vec![1.0 + f64::EPSILON; n]);
        let inst = LcpInstance::from_dense(a, vals.to_vec()).unwrap();
        assert_eq!(bits(&round_trip(&inst).b), bits(&vals));
    }

    #[test]
    fn missing_b_names_field() {
        let inst = LcpInstance::from_dense(DenseMatrix::identity(2), vec![1.0, -1.0]).unwrap();
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v.as_object_mut().unwrap().remove("b");
        let err = read_instance(v.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
    }

    #[test]
    fn nested_errors_carry_path() {
        let inst = LcpInstance::from_dense(DenseMatrix::identity(2), vec![1.0, -1.0]).unwrap();
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["dense_A"][1][0] = serde_json::json!("x");
        match read_instance(v.to_string().as_bytes()).unwrap_err() {
            Error::Format { path, .. } => assert_eq!(path, "dense_A[1][0]"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let inst = LcpInstance::from_dense(DenseMatrix::identity(1), vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["version"] = serde_json::json!(2);
        assert!(matches!(
            read_instance(v.to_string().as_bytes()),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn inconsistent_lengths_are_rejected() {
        let inst = LcpInstance::from_dense(DenseMatrix::identity(2), vec![1.0, -1.0]).unwrap();
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["n"] = serde_json::json!(3);
        assert!(matches!(read_instance(v.to_string().as_bytes()), Err(Error::Format { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("lcp-pqn-format-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("one.lcp.json");
        let inst = LcpInstance::from_dense(DenseMatrix::from_diagonal(&[2.0, 3.0]), vec![-1.0, 0.5]).unwrap();
        save_instance(&inst, &path).unwrap();
        let back = load_instance(&path).unwrap();
        assert_eq!(back.dense_a, inst.dense_a);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
