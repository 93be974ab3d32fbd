//! Atomic text artifacts: temp-file-plus-rename writes and a float format
//! wide enough to round-trip every f64 exactly.

use std::fs;
use std::io;
use std::path::Path;

/// 17 significant digits in scientific notation; parses back bit-exact.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `bytes` to `path` through a sibling temp file and a rename, so
/// readers never observe a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes)?;
    fs::rename(tmp, path)
}

/// Assemble a CSV with `\n` line endings and write it atomically.
pub fn csv_bytes(header: &str, rows: &[String]) -> Vec<u8> {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, 1.0, -1.0 / 3.0, 1e-300, std::f64::consts::PI, 6.02e23] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn csv_uses_plain_newlines() {
        let bytes = csv_bytes("a,b", &["1,2".into(), "3,4".into()]);
        assert_eq!(bytes, b"a,b\n1,2\n3,4\n");
    }
}
