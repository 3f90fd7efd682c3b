//! CSV text conventions shared by every emitted artifact: UTF-8, LF line
//! endings, a header row, and floats printed with 17 significant digits so
//! round-tripping through text is lossless.

/// Formats one float with 17 significant digits (scientific notation).
///
/// 17 significant digits is the smallest count that distinguishes every
/// f64, making emitted CSVs byte-comparable across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Joins already-formatted fields into one CSV line (no trailing newline).
pub fn join_row<S: AsRef<str>>(fields: &[S]) -> String {
    fields
        .iter()
        .map(|f| f.as_ref())
        .collect::<Vec<_>>()
        .join(",")
}

/// Builds a full CSV document: header plus rows, LF-separated, with a
/// trailing newline.
pub fn document<S: AsRef<str>>(header: &str, rows: &[S]) -> String {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.as_ref().len() + 1).sum::<usize>() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row.as_ref());
        out.push('\n');
    }
    out
}
