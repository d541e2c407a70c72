//! Extraction of final answers from raw model output: the last fenced code
//! block for script roles, the last `\communication{...}` block for message
//! roles.

/// Returns the contents of the last complete fenced code block. A language
/// tag on the opening fence line is stripped.
pub fn extract_code(raw: &str) -> Option<String> {
    let fence = "```";
    let mut positions = Vec::new();
    let mut from = 0;
    while let Some(pos) = raw[from..].find(fence) {
        positions.push(from + pos);
        from += pos + fence.len();
    }
    if positions.len() < 2 {
        return None;
    }
    // Pair fences sequentially; take the last complete pair.
    let pairs = positions.len() / 2;
    let open = positions[(pairs - 1) * 2];
    let close = positions[(pairs - 1) * 2 + 1];
    let mut content = &raw[open + fence.len()..close];
    if let Some(newline) = content.find('\n') {
        let tag = content[..newline].trim();
        if !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric()) {
            content = &content[newline + 1..];
        }
    }
    let trimmed = content.trim_matches('\n');
    if trimmed.trim().is_empty() {
        None
    } else {
        Some(trimmed.to_string())
    }
}

const MARKER: &str = r"\communication{";

/// Returns the contents of the last `\communication{...}` block, scanning
/// for the balancing brace so nested braces survive intact.
pub fn extract_message(raw: &str) -> Option<String> {
    let mut best = None;
    let mut from = 0;
    while let Some(pos) = raw[from..].find(MARKER) {
        let start = from + pos + MARKER.len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, c) in raw[start..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            best = Some(raw[start..end].to_string());
        }
        from = from + pos + MARKER.len();
    }
    best
}

/// Wraps a message the way the policy roles are instructed to.
pub fn embed_message(message: &str) -> String {
    format!(r"\communication{{{message}}}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_fenced_block() {
        let raw = "Reasoning first.\n```python\nx = 1\n```\nDone.";
        assert_eq!(extract_code(raw).unwrap(), "x = 1");
    }

    #[test]
    fn prose_only_fails() {
        assert!(extract_code("no code here").is_none());
        assert!(extract_code("unterminated ``` fence").is_none());
    }

    #[test]
    fn last_of_two_blocks_wins() {
        let raw = "```python\nfirst = 1\n```\nmore words\n```python\nsecond = 2\n```";
        assert_eq!(extract_code(raw).unwrap(), "second = 2");
    }

    #[test]
    fn bare_fence_without_tag() {
        let raw = "```\ny = 2\n```";
        assert_eq!(extract_code(raw).unwrap(), "y = 2");
    }

    #[test]
    fn message_basic() {
        assert_eq!(
            extract_message(r"Here: \communication{Hello}").unwrap(),
            "Hello"
        );
    }

    #[test]
    fn message_nested_braces_preserved() {
        let raw = r"\communication{adopt {margin: 0.5} now}";
        assert_eq!(extract_message(raw).unwrap(), "adopt {margin: 0.5} now");
    }

    #[test]
    fn message_absent_or_unbalanced_fails() {
        assert!(extract_message("plain text").is_none());
        assert!(extract_message(r"\communication{never closed").is_none());
    }

    #[test]
    fn last_message_wins() {
        let raw = r"\communication{draft} then \communication{final}";
        assert_eq!(extract_message(raw).unwrap(), "final");
    }

    proptest! {
        #[test]
        fn extract_after_embed_is_identity(msg in "[ -z]{0,200}") {
            // Printable ASCII below '{' keeps the fuzzed part brace-free;
            // balanced brace pairs are added explicitly.
            let message = format!("{msg}{{inner}}tail");
            let raw = format!("preamble\n{}", embed_message(&message));
            prop_assert_eq!(extract_message(&raw).unwrap(), message);
        }
    }
}
