//! CSV emission. Every file opens with a comment row recording the format
//! version and the config hash, then a header row naming the columns.
//! Floats are printed in Rust's shortest round-trip decimal form, so
//! identical runs produce byte-identical files.

use super::ExperimentError;
use std::path::Path;

pub struct Csv {
    buf: String,
    columns: usize,
}

impl Csv {
    pub fn new(config_hash: u64, columns: &[&str]) -> Self {
        let mut buf = format!("# ufmlab-csv v1 config={config_hash:016x}\n");
        buf.push_str(&columns.join(","));
        buf.push('\n');
        Self {
            buf,
            columns: columns.len(),
        }
    }

    /// Extra comment rows (residual masses, norms) go right below the first.
    pub fn comment(&mut self, text: &str) {
        self.buf.push_str("# ");
        self.buf.push_str(text);
        self.buf.push('\n');
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.columns);
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn into_string(self) -> String {
        self.buf
    }

    pub fn write(self, path: &Path) -> Result<(), ExperimentError> {
        std::fs::write(path, self.buf)?;
        Ok(())
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_roundtrips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -0.0, f64::EPSILON] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn layout_is_stable() {
        let mut csv = Csv::new(0xabcd, &["a", "b"]);
        csv.comment("extra");
        csv.row(&["1".into(), "2".into()]);
        let s = csv.into_string();
        assert_eq!(
            s,
            "# ufmlab-csv v1 config=000000000000abcd\na,b\n# extra\n1,2\n"
        );
    }
}
