//! GloVe text vectors: one `token v1 ... vd` line per word.

use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;
use thiserror::Error;

use crate::tensor::Tensor;
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum GloveError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected} values, found {found}")]
    Width { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad number `{value}`")]
    Number { line: usize, value: String },
    #[error("table has {cols} columns but vectors are {dim}-d")]
    Table { cols: usize, dim: usize },
}

/// Reads the vectors of tokens accepted by `wanted`. A leading
/// `count dim` header line, as written by some converters, is skipped.
pub fn read_glove<R: BufRead>(reader: R, dim: usize, wanted: impl Fn(&str) -> bool) -> Result<HashMap<String, Vec<f64>>, GloveError> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split(' ').filter(|p| !p.is_empty());
        let Some(token) = parts.next() else {
            continue;
        };
        let rest: Vec<&str> = parts.collect();
        if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() {
            continue;
        }
        if rest.len() != dim {
            return Err(GloveError::Width {
                line: i + 1,
                expected: dim,
                found: rest.len(),
            });
        }
        if !wanted(token) || out.contains_key(token) {
            continue;
        }
        let values = rest
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| GloveError::Number {
                    line: i + 1,
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(token.to_string(), values);
    }
    Ok(out)
}

/// Overwrites every row of `table`: rows of tokens with a vector get it,
/// the others are drawn from uniform(-0.05, 0.05). Returns how many rows
/// were found.
pub fn fill_embedding<R: Rng>(table: &mut Tensor, vocab: &Vocab, vectors: &HashMap<String, Vec<f64>>, rng: &mut R) -> Result<usize, GloveError> {
    let cols = table.cols();
    if let Some(v) = vectors.values().next() {
        if v.len() != cols {
            return Err(GloveError::Table { cols, dim: v.len() });
        }
    }
    let mut found = 0;
    let data = table.data_mut();
    for (i, tok) in vocab.tokens().iter().enumerate() {
        let row = &mut data[i * cols..(i + 1) * cols];
        match vectors.get(tok) {
            Some(v) => {
                row.copy_from_slice(v);
                found += 1;
            }
            None => row.iter_mut().for_each(|x| *x = rng.gen_range(-0.05..0.05)),
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reads_wanted_rows() {
        let text = "the 0.1 0.2 0.3\ncow -1 0 2.5\nmoo 1 1 1\n";
        let v = read_glove(text.as_bytes(), 3, |t| t != "moo").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v["cow"], vec![-1.0, 0.0, 2.5]);
    }

    #[test]
    fn header_and_errors() {
        let v = read_glove("2 2\na 1 2\nb 3 4\n".as_bytes(), 2, |_| true).unwrap();
        assert_eq!(v.len(), 2);
        assert!(matches!(read_glove("a 1 2\nb 3\n".as_bytes(), 2, |_| true), Err(GloveError::Width { line: 2, .. })));
        assert!(matches!(read_glove("a 1 x\n".as_bytes(), 2, |_| true), Err(GloveError::Number { line: 1, .. })));
    }

    #[test]
    fn fills_missing_rows_in_range() {
        let mut vocab = Vocab::new();
        vocab.add("cow");
        let vectors = read_glove("cow 1 2\n".as_bytes(), 2, |_| true).unwrap();
        let mut table = Tensor::zeros(&[vocab.len(), 2]);
        let n = fill_embedding(&mut table, &vocab, &vectors, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(n, 1);
        assert_eq!(table.row(5), &[1.0, 2.0]);
        assert!(table.data()[..10].iter().all(|x| x.abs() < 0.05));
        let mut wide = Tensor::zeros(&[vocab.len(), 3]);
        assert!(fill_embedding(&mut wide, &vocab, &vectors, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
