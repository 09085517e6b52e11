//! CSV output conventions shared by every exporter: comma separated, '.'
//! decimal point, header row, LF line endings, UTF-8.

use std::io::Write;

/// A CSV writer in the shared dialect.
pub fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b',')
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer)
}

/// Shortest representation that round-trips; `inf`/`-inf`/`NaN` for
/// non-finite values.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Empty for `None`, otherwise [`fmt_f64`].
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -2.5e-300, 1.0 / 3.0, 12345678.9] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn writer_uses_lf() {
        let mut buf = Vec::new();
        {
            let mut w = csv_writer(&mut buf);
            w.write_record(["a", "b"]).unwrap();
            w.write_record(["1", "2"]).unwrap();
            w.flush().unwrap();
        }
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n1,2\n");
    }
}
