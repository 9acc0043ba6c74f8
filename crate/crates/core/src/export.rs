//! Byte-level serialization shared by every artifact writer.
//!
//! All CSV goes through `csv::Writer` (RFC 4180 quoting, `\n` terminators,
//! header always present) into memory so callers can digest the exact bytes
//! they write.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Renders a header plus rows as CSV bytes.
pub fn csv_bytes<I, R, S>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(header).expect("in-memory write");
    for row in rows {
        wtr.write_record(row).expect("in-memory write");
    }
    wtr.into_inner().expect("in-memory flush")
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

/// Shortest round-trip decimal form of a float; stable across runs.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // collapses -0.0
        "0".to_string()
    } else {
        format!("{x}")
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_terminates_with_newline() {
        let bytes = csv_bytes(&["a", "b"], vec![vec!["x,y".to_string(), "z".to_string()]]);
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n\"x,y\",z\n");
    }

    #[test]
    fn header_written_for_empty_tables() {
        let rows: Vec<Vec<String>> = Vec::new();
        assert_eq!(csv_bytes(&["bin_lo", "bin_hi", "count"], rows), b"bin_lo,bin_hi,count\n");
    }

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(-0.0), "0");
        assert_eq!(fmt_f64(0.85), "0.85");
        assert_eq!(fmt_f64(100.0), "100");
    }
}
