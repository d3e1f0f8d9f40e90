/// Splits text into sentences after `.`, `?` or `!` when the mark is followed
/// by whitespace and then an uppercase letter, or ends the text. Pieces are
/// trimmed and empty pieces dropped.
///
/// Abbreviations followed by a capitalised word ("Dr. Smith") are split too.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0;

    for (pos, &(byte, ch)) in chars.iter().enumerate() {
        if !matches!(ch, '.' | '?' | '!') {
            continue;
        }
        let rest = &chars[pos + 1..];
        let ws = rest.iter().take_while(|(_, c)| c.is_whitespace()).count();
        let boundary = if ws == rest.len() {
            true
        } else {
            ws > 0 && rest[ws].1.is_uppercase()
        };
        if boundary {
            let end = byte + ch.len_utf8();
            push_trimmed(&mut sentences, &text[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut sentences, &text[start..]);
    sentences
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
}
