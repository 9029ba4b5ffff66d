//! Text layouts used to fill prompt placeholders, and their inverses.
//!
//! Generators format with these helpers and the mock backend parses with
//! them, so the two sides cannot drift apart.

/// `1. a\n2. b\n...`
pub fn numbered(items: &[impl AsRef<str>]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_numbered(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            let (num, rest) = line.split_once(". ")?;
            num.parse::<usize>().ok()?;
            Some(rest.trim().to_string())
        })
        .collect()
}

/// Blocks of `Caption Pair i:` followed by a two-item numbered list.
pub fn caption_pairs(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b))| format!("Caption Pair {}:\n{}", i + 1, numbered(&[a, b])))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn parse_caption_pairs(text: &str) -> Vec<(String, String)> {
    text.split("Caption Pair ")
        .skip(1)
        .filter_map(|block| {
            let (_, body) = block.split_once(":\n")?;
            let items = parse_numbered(body);
            match items.as_slice() {
                [a, b, ..] => Some((a.clone(), b.clone())),
                _ => None,
            }
        })
        .collect()
}

/// Key under which the reply carries the QA for the `i`-th pair (0-based).
pub fn pair_key(i: usize) -> String {
    format!("caption_pair_{}", i + 1)
}

/// `Question: q` followed by `Answer i: a` lines.
pub fn question_and_answers(question: &str, answers: &[impl AsRef<str>]) -> String {
    let mut out = format!("Question: {question}");
    for (i, a) in answers.iter().enumerate() {
        out.push_str(&format!("\nAnswer {}: {}", i + 1, a.as_ref()));
    }
    out
}

pub fn parse_question_and_answers(text: &str) -> Option<(String, Vec<String>)> {
    let mut question = None;
    let mut answers = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if let Some(q) = line.strip_prefix("Question:") {
            question = Some(q.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("Answer ") {
            if let Some((_, a)) = rest.split_once(':') {
                answers.push(a.trim().to_string());
            }
        }
    }
    Some((question?, answers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_roundtrip() {
        let items = ["A cat.", "A dog. 2. Not a new item"];
        assert_eq!(parse_numbered(&numbered(&items)), items);
        let pairs = vec![("a b.".to_string(), "c d.".to_string()), ("e.".into(), "f.".into())];
        assert_eq!(parse_caption_pairs(&caption_pairs(&pairs)), pairs);
        let qa = question_and_answers("What is it?", &["x", "y: z"]);
        assert_eq!(
            parse_question_and_answers(&qa),
            Some(("What is it?".into(), vec!["x".into(), "y: z".into()]))
        );
    }
}
