//! Versioned checkpoint container: a UTF-8 manifest (config echo, epoch,
//! RNG state, matrix shapes in order) followed by the raw little-endian
//! f64 payload. Round-trips bit-exactly.

use super::ExperimentError;
use crate::model::{Activation, HyperConfig, ModelState};
use crate::numerics::Matrix;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &str = "ufmlab-checkpoint v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub hyper: HyperConfig,
    pub epoch: usize,
    pub rng_state: [u64; 4],
    pub state: ModelState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut manifest = String::new();
        let _ = writeln!(manifest, "{MAGIC}");
        let _ = writeln!(manifest, "epoch={}", self.epoch);
        let _ = writeln!(
            manifest,
            "rng={:016x},{:016x},{:016x},{:016x}",
            self.rng_state[0], self.rng_state[1], self.rng_state[2], self.rng_state[3]
        );
        let h = &self.hyper;
        let _ = writeln!(manifest, "k={}", h.k);
        let _ = writeln!(manifest, "n={}", h.n);
        let _ = writeln!(manifest, "d={}", h.d);
        let _ = writeln!(manifest, "layers={}", h.layers);
        let _ = writeln!(manifest, "activation={}", h.activation.name());
        let _ = writeln!(manifest, "lambda_h1={}", h.lambda_h1);
        for (i, lam) in h.lambda_w.iter().enumerate() {
            let _ = writeln!(manifest, "lambda_w{}={}", i + 1, lam);
        }
        let _ = writeln!(manifest, "lr={}", h.lr);
        let _ = writeln!(manifest, "max_epochs={}", h.max_epochs);
        let _ = writeln!(manifest, "grad_tol={}", h.grad_tol);
        let _ = writeln!(manifest, "eval_every={}", h.eval_every);
        let _ = writeln!(manifest, "init_std={}", h.init_std);
        let _ = writeln!(manifest, "seed={}", h.seed);
        let _ = writeln!(
            manifest,
            "matrix=h1 {} {}",
            self.state.h1.rows(),
            self.state.h1.cols()
        );
        for (i, w) in self.state.weights.iter().enumerate() {
            let _ = writeln!(manifest, "matrix=w{} {} {}", i + 1, w.rows(), w.cols());
        }
        let _ = writeln!(manifest, "data");

        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(manifest.as_bytes())?;
        let mut write_matrix = |m: &Matrix| -> std::io::Result<()> {
            for x in m.data() {
                file.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        write_matrix(&self.state.h1)?;
        for w in &self.state.weights {
            write_matrix(w)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let bytes = std::fs::read(path)?;
        let data_marker = b"\ndata\n";
        let split = bytes
            .windows(data_marker.len())
            .position(|w| w == data_marker)
            .ok_or_else(|| bad_format("missing data marker"))?;
        let manifest = std::str::from_utf8(&bytes[..split + 1])
            .map_err(|_| bad_format("manifest is not UTF-8"))?;
        let payload = &bytes[split + data_marker.len()..];

        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad_format("bad magic or unsupported version"));
        }
        let mut epoch = None;
        let mut rng_state = None;
        let mut fields: Vec<(String, String)> = Vec::new();
        let mut shapes: Vec<(String, usize, usize)> = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad_format("malformed manifest line"))?;
            match key {
                "epoch" => epoch = Some(parse_num::<usize>(value)?),
                "rng" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() != 4 {
                        return Err(bad_format("rng state needs 4 words"));
                    }
                    let mut st = [0u64; 4];
                    for (s, p) in st.iter_mut().zip(parts) {
                        *s = u64::from_str_radix(p, 16)
                            .map_err(|_| bad_format("bad rng word"))?;
                    }
                    rng_state = Some(st);
                }
                "matrix" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(bad_format("matrix line needs name rows cols"));
                    }
                    shapes.push((
                        parts[0].to_string(),
                        parse_num(parts[1])?,
                        parse_num(parts[2])?,
                    ));
                }
                _ => fields.push((key.to_string(), value.to_string())),
            }
        }
        let epoch = epoch.ok_or_else(|| bad_format("missing epoch"))?;
        let rng_state = rng_state.ok_or_else(|| bad_format("missing rng state"))?;
        let hyper = hyper_from_fields(&fields)?;

        let total: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
        if payload.len() != total * 8 {
            return Err(bad_format("payload size does not match manifest"));
        }
        let mut cursor = payload;
        let mut read_matrix = |rows: usize, cols: usize| -> Result<Matrix, ExperimentError> {
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                cursor.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            Ok(Matrix::new(rows, cols, data)?)
        };
        let mut matrices = Vec::with_capacity(shapes.len());
        for (_, rows, cols) in &shapes {
            matrices.push(read_matrix(*rows, *cols)?);
        }
        if shapes.first().map(|(n, _, _)| n.as_str()) != Some("h1") {
            return Err(bad_format("first matrix must be h1"));
        }
        let h1 = matrices.remove(0);
        let state = ModelState {
            h1,
            weights: matrices,
        };
        if state.weights.len() != hyper.layers {
            return Err(bad_format("weight count does not match layers"));
        }
        Ok(Checkpoint {
            hyper,
            epoch,
            rng_state,
            state,
        })
    }
}

fn bad_format(message: &str) -> ExperimentError {
    ExperimentError::CheckpointFormat {
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, ExperimentError> {
    s.parse().map_err(|_| bad_format("bad numeric field"))
}

fn hyper_from_fields(fields: &[(String, String)]) -> Result<HyperConfig, ExperimentError> {
    let get = |key: &str| -> Result<&str, ExperimentError> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad_format("missing hyperparameter field"))
    };
    let layers: usize = parse_num(get("layers")?)?;
    let mut lambda_w = Vec::with_capacity(layers);
    for l in 1..=layers {
        lambda_w.push(parse_num(get(&format!("lambda_w{l}"))?)?);
    }
    Ok(HyperConfig {
        k: parse_num(get("k")?)?,
        n: parse_num(get("n")?)?,
        d: parse_num(get("d")?)?,
        layers,
        lambda_h1: parse_num(get("lambda_h1")?)?,
        lambda_w,
        activation: match get("activation")? {
            "linear" => Activation::Linear,
            "relu" => Activation::Relu,
            _ => return Err(bad_format("bad activation")),
        },
        lr: parse_num(get("lr")?)?,
        max_epochs: parse_num(get("max_epochs")?)?,
        grad_tol: parse_num(get("grad_tol")?)?,
        eval_every: parse_num(get("eval_every")?)?,
        init_std: parse_num(get("init_std")?)?,
        seed: parse_num(get("seed")?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_state;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut cfg = HyperConfig::new(2, 3, 4, 3, Activation::Relu);
        cfg.seed = 99;
        cfg.lambda_w[1] = 7.25e-4;
        let state = init_state(&cfg);
        let ckpt = Checkpoint {
            hyper: cfg,
            epoch: 123,
            rng_state: [1, 2, u64::MAX, 0xdeadbeef],
            state,
        };
        let dir = std::env::temp_dir().join("ufmlab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.epoch, 123);
        assert_eq!(loaded.rng_state, ckpt.rng_state);
        assert_eq!(loaded.hyper, ckpt.hyper);
        assert_eq!(loaded.state, ckpt.state);
        // Byte-identical re-save.
        let path2 = dir.join("roundtrip2.ckpt");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_truncated_payload() {
        let cfg = HyperConfig::new(2, 2, 3, 2, Activation::Linear);
        let state = init_state(&cfg);
        let ckpt = Checkpoint {
            hyper: cfg,
            epoch: 0,
            rng_state: [0; 4],
            state,
        };
        let dir = std::env::temp_dir().join("ufmlab-ckpt-trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.ckpt");
        ckpt.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(ExperimentError::CheckpointFormat { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
