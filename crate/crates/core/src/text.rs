//! String normalization shared by material, FoM and header matching.

/// Maps Unicode subscript digits to their ASCII counterparts.
pub fn fold_subscripts(c: char) -> char {
    match c {
        '\u{2080}'..='\u{2089}' => char::from(b'0' + (c as u32 - 0x2080) as u8),
        _ => c,
    }
}

/// Normalizes a name for lookup: trim, case-fold, collapse internal
/// whitespace and map subscript digits to ASCII (`CO₂` becomes `co2`).
pub fn normalize(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    for word in input.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars().map(fold_subscripts) {
            out.extend(c.to_lowercase());
        }
    }
    out
}
