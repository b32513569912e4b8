/// Comments longer than this are truncated to their first `MAX_TOKENS` tokens.
pub const MAX_TOKENS: usize = 512;

/// Lowercased word and punctuation tokens.
///
/// Maximal runs of alphanumeric characters (plus any combining marks that
/// follow them) form one word; every other non-whitespace character is a
/// token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || (!word.is_empty() && is_combining_mark(c)) {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(word.to_lowercase());
            word.clear();
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word.to_lowercase());
    }
    tokens
}

fn is_combining_mark(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}
