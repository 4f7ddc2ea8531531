use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per-frame argmax, collapse repeats, drop blanks. Ties go to the lowest
/// index.
pub fn ctc_greedy_decode(logits: &Matrix, blank: usize) -> Result<Vec<usize>> {
    if logits.rows() == 0 {
        return Err(Error::Empty("ctc logits"));
    }
    if logits.cols() < 2 || blank >= logits.cols() {
        return Err(Error::Config(format!(
            "ctc decoding needs V ≥ 2 and blank < V, got V = {} and blank = {blank}",
            logits.cols()
        )));
    }
    logits.ensure_finite("ctc logits")?;
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let best = (1..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
        if best != blank && prev != Some(best) {
            out.push(best);
        }
        prev = Some(best);
    }
    Ok(out)
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = (diag + usize::from(x != y)).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Word error rate: edit distance over words divided by reference length.
/// May exceed 1.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("wer reference"));
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}
