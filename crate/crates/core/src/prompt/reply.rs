//! Helpers for pulling structured pieces out of free-form model replies.

const SQL_STARTS: [&str; 3] = ["select", "with", "values"];

fn starts_like_sql(line: &str) -> bool {
    let lower = line.trim_start().to_ascii_lowercase();
    SQL_STARTS
        .iter()
        .any(|kw| lower.starts_with(kw) && lower[kw.len()..].starts_with(|c: char| c.is_whitespace() || c == '('))
}

fn clean(sql: &str) -> Option<String> {
    let s = sql.trim().trim_end_matches(';').trim();
    (!s.is_empty()).then(|| s.to_string())
}

/// Value of a `LABEL:` line plus its continuation lines (up to a blank line
/// or the next upper-case label). Labels match case-insensitively; the last
/// occurrence wins.
pub fn labeled(reply: &str, label: &str) -> Option<String> {
    let lines: Vec<&str> = reply.lines().collect();
    let prefix = format!("{}:", label.to_ascii_lowercase());
    let start = lines
        .iter()
        .rposition(|l| l.trim_start().trim_start_matches(['*', '#', ' ']).to_ascii_lowercase().starts_with(&prefix))?;
    let first = lines[start].trim_start().trim_start_matches(['*', '#', ' ']);
    let mut value = vec![first[prefix.len()..].trim_start_matches('*').trim().to_string()];
    for l in &lines[start + 1..] {
        let t = l.trim();
        if t.is_empty() && value.iter().any(|v| !v.is_empty()) {
            break;
        }
        if is_label_line(t) || t.starts_with("```") {
            break;
        }
        value.push(t.to_string());
    }
    let joined = value.join("\n").trim().to_string();
    (!joined.is_empty()).then_some(joined)
}

fn is_label_line(t: &str) -> bool {
    match t.split_once(':') {
        Some((head, _)) => {
            !head.is_empty() && head.len() <= 24 && head.chars().all(|c| c.is_ascii_uppercase() || c == ' ' || c == '_')
        }
        None => false,
    }
}

/// Best-effort extraction of a SQL query from a reply: the last fenced
/// code block, else a `SQL:` line, else the first line that starts like a
/// query, else the whole reply when it parses as SQL.
pub fn extract_sql(reply: &str) -> Option<String> {
    let fences: Vec<&str> = reply.split("```").collect();
    if fences.len() >= 3 {
        let blocks: Vec<&str> = fences.iter().skip(1).step_by(2).copied().collect();
        if let Some(block) = blocks.iter().rev().find(|b| !b.trim().is_empty()) {
            let body = block.strip_prefix("sql").or_else(|| block.strip_prefix("SQL")).unwrap_or(block);
            if let Some(s) = clean(body) {
                return Some(s);
            }
        }
    }
    if let Some(v) = labeled(reply, "sql") {
        return clean(&v);
    }
    let lines: Vec<&str> = reply.lines().collect();
    if let Some(i) = lines.iter().position(|l| starts_like_sql(l)) {
        let body: Vec<&str> = lines[i..].iter().take_while(|l| !l.trim().is_empty()).copied().collect();
        return clean(&body.join("\n"));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_blocks_win() {
        let r = "Here you go:\n```sql\nSELECT 1;\n```\nand finally\n```sql\nSELECT 2\n```";
        assert_eq!(extract_sql(r).as_deref(), Some("SELECT 2"));
    }

    #[test]
    fn labeled_and_bare_replies() {
        assert_eq!(extract_sql("Reasoning...\nSQL: SELECT a\nFROM t;").as_deref(), Some("SELECT a\nFROM t"));
        assert_eq!(extract_sql("select count(*) from singer").as_deref(), Some("select count(*) from singer"));
        assert_eq!(extract_sql("I cannot answer."), None);
        assert_eq!(extract_sql("Selecting is hard"), None);
    }

    #[test]
    fn labels_stop_at_next_label() {
        let r = "SUBQUESTION: Which singers are French?\nSQL: SELECT name FROM singer\nWHERE country = 'France'";
        assert_eq!(labeled(r, "subquestion").as_deref(), Some("Which singers are French?"));
        assert_eq!(labeled(r, "SQL").as_deref(), Some("SELECT name FROM singer\nWHERE country = 'France'"));
        assert_eq!(labeled("**CHOICE:** 2", "choice").as_deref(), Some("2"));
    }
}
