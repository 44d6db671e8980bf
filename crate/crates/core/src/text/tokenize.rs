/// Punctuation marks emitted as standalone tokens.
pub const PUNCTUATION: [char; 8] = ['.', ',', '!', '?', ';', ':', '\'', '"'];

/// Lowercases, splits on whitespace, and splits off each punctuation mark as
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Joins tokens back into readable text: no space before closing
/// punctuation, apostrophes glued to both neighbours.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = false;
    for tok in tokens {
        let tok = tok.as_ref();
        let attach = matches!(tok, "." | "," | "!" | "?" | ";" | ":" | "'");
        if !out.is_empty() && !attach && !glue_next {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = tok == "'";
    }
    out
}
