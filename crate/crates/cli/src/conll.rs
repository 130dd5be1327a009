//! Column text with the tag in the last column and blank lines between
//! sentences.

use anyhow::{bail, Result};

use dner::tagging::Scheme;

struct Line<'a> {
    prefix: &'a str,
    tag: &'a str,
}

fn split(line: &str, lineno: usize) -> Result<Line<'_>> {
    let line = line.trim_end();
    match line.rfind(char::is_whitespace) {
        Some(i) if !line[..i].trim().is_empty() => Ok(Line {
            prefix: &line[..=i],
            tag: &line[i + 1..],
        }),
        _ => bail!("line {lineno}: expected a token and a tag"),
    }
}

/// IOBES when any tag uses `E-` or `S-`.
pub fn guess_scheme<S: AsRef<str>>(tags: &[S]) -> Scheme {
    if tags
        .iter()
        .any(|t| t.as_ref().starts_with("E-") || t.as_ref().starts_with("S-"))
    {
        Scheme::Iobes
    } else {
        Scheme::Iob2
    }
}

/// Rewrites the tag column of every sentence with `relabel`, which receives
/// the tags and their scheme (`from`, or guessed). Other columns and blank
/// lines are kept as they are.
pub fn convert_stream<F>(text: &str, from: Option<Scheme>, mut relabel: F) -> Result<String>
where
    F: FnMut(&[String], Scheme) -> dner::Result<Vec<String>>,
{
    let mut out = String::with_capacity(text.len());
    let mut block: Vec<(usize, &str)> = Vec::new();
    let mut flush = |block: &mut Vec<(usize, &str)>, out: &mut String| -> Result<()> {
        if block.is_empty() {
            return Ok(());
        }
        let lines = block.iter().map(|&(n, l)| split(l, n)).collect::<Result<Vec<_>>>()?;
        let tags: Vec<String> = lines.iter().map(|l| l.tag.to_string()).collect();
        let scheme = from.unwrap_or_else(|| guess_scheme(&tags));
        let first = block[0].0;
        let new = relabel(&tags, scheme).map_err(|e| anyhow::anyhow!("sentence at line {first}: {e}"))?;
        for (l, t) in lines.iter().zip(new) {
            out.push_str(l.prefix);
            out.push_str(&t);
            out.push('\n');
        }
        block.clear();
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut block, &mut out)?;
            out.push('\n');
        } else {
            block.push((i + 1, line));
        }
    }
    flush(&mut block, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upper(tags: &[String], _: Scheme) -> dner::Result<Vec<String>> {
        Ok(tags.iter().map(|t| t.to_uppercase()).collect())
    }

    #[test]
    fn keeps_columns_and_blank_lines() {
        let out = convert_stream("a NN b-x\nb\tc\n\nd o\n", None, upper).unwrap();
        assert_eq!(out, "a NN B-X\nb\tC\n\nd O\n");
    }

    #[test]
    fn single_column_is_an_error() {
        let err = convert_stream("a O\nlonely\n", None, upper).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"));
    }

    #[test]
    fn guesses_scheme() {
        assert_eq!(guess_scheme(&["O", "B-D", "I-D"]), Scheme::Iob2);
        assert_eq!(guess_scheme(&["O", "S-D"]), Scheme::Iobes);
    }
}
