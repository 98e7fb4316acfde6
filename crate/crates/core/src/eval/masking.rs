use std::fmt;

use super::EvalError;

/// Marker ↔ literal pairs in order of first occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NumberMap {
    pairs: Vec<(String, String)>,
}

impl NumberMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: Vec<(String, String)>) -> Self {
        NumberMap { pairs }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn literal(&self, marker: &str) -> Option<&str> {
        self.pairs.iter().find(|(m, _)| m == marker).map(|(_, l)| l.as_str())
    }

    pub fn marker(&self, literal: &str) -> Option<&str> {
        self.pairs.iter().find(|(_, l)| l == literal).map(|(m, _)| m.as_str())
    }

    fn insert(&mut self, literal: &str) -> String {
        if let Some(m) = self.marker(literal) {
            return m.to_string();
        }
        let m = format!("n{}", self.pairs.len() + 1);
        self.pairs.push((m.clone(), literal.to_string()));
        m
    }
}

impl fmt::Display for NumberMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.pairs.iter().map(|(m, l)| format!("{m}:{l}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Digits with an optional fractional part, e.g. `12` or `0.5`.
pub fn is_numeric_literal(tok: &str) -> bool {
    let (int, frac) = match tok.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (tok, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    digits(int) && frac.map_or(true, digits)
}

/// `n1`, `n2`, ...
pub fn is_marker(tok: &str) -> bool {
    tok.strip_prefix('n')
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && !d.starts_with('0'))
}

/// Replaces numeric literal tokens with `n1, n2, ...`; equal literals share
/// a marker.
pub fn mask_numbers<S: AsRef<str>>(tokens: &[S]) -> (Vec<String>, NumberMap) {
    let mut map = NumberMap::new();
    let masked = tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if is_numeric_literal(t) {
                map.insert(t)
            } else {
                t.to_string()
            }
        })
        .collect();
    (masked, map)
}

/// Replaces target tokens that equal a literal of `map` by its marker.
pub fn mask_with<S: AsRef<str>>(tokens: &[S], map: &NumberMap) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            map.marker(t).unwrap_or(t).to_string()
        })
        .collect()
}

/// Substitutes markers back with their literals.
pub fn unmask<S: AsRef<str>>(tokens: &[S], map: &NumberMap) -> Result<Vec<String>, EvalError> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if is_marker(t) {
                map.literal(t)
                    .map(str::to_string)
                    .ok_or_else(|| EvalError::UnknownMarker(t.to_string()))
            } else {
                Ok(t.to_string())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn repeated_literal_shares_marker() {
        let (m, map) = mask_numbers(&toks("bought 12 pens and 12 rulers"));
        assert_eq!(m, toks("bought n1 pens and n1 rulers"));
        assert_eq!(map.pairs(), &[("n1".to_string(), "12".to_string())]);
    }

    #[test]
    fn no_numbers() {
        let (m, map) = mask_numbers(&toks("how many cows"));
        assert_eq!(m, toks("how many cows"));
        assert!(map.is_empty());
    }

    #[test]
    fn decimal_literal() {
        let (m, map) = mask_numbers(&toks("0.5 of cows"));
        assert_eq!(m, toks("n1 of cows"));
        assert_eq!(map.literal("n1"), Some("0.5"));
    }

    #[test]
    fn literal_rule() {
        for ok in ["0", "12", "0.5", "100.0"] {
            assert!(is_numeric_literal(ok), "{ok}");
        }
        for bad in ["", ".5", "5.", "1.2.3", "-3", "1e5", "x", "1,000"] {
            assert!(!is_numeric_literal(bad), "{bad}");
        }
        assert!(is_marker("n1") && is_marker("n12"));
        assert!(!is_marker("n") && !is_marker("n0") && !is_marker("no") && !is_marker("x1"));
    }

    #[test]
    fn unmask_substitutes() {
        let map = NumberMap::from_pairs(vec![("n1".into(), "5".into()), ("n2".into(), "7".into())]);
        assert_eq!(unmask(&toks("x = ( n1 + n2 )"), &map).unwrap().join(" "), "x = ( 5 + 7 )");
        assert_eq!(unmask(&toks("x = 3"), &map).unwrap().join(" "), "x = 3");
        assert_eq!(unmask(&toks("x = n3"), &map), Err(EvalError::UnknownMarker("n3".into())));
    }

    #[test]
    fn target_masking_by_literal() {
        let (_, map) = mask_numbers(&toks("in a class of 25 students , 6 received"));
        assert_eq!(mask_with(&toks("x = ( 6 / 25 ) * 100.0"), &map), toks("x = ( n2 / n1 ) * 100.0"));
    }
}
